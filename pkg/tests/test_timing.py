import csv
import io
import itertools

import numpy as np
import pytest

from fccsim.mapper import CONFIGS, LADDER, map_layer, placeholder_weights
from fccsim.netspec import load_builtin
from fccsim.oracle import LayerSpec
from fccsim.timing import (ConfigMismatch, CycleConstants, count_cycles, network_report,
                           plan_network)

STD = LayerSpec("std", 8, 8, 32, 64, 3, 1, 1, layer_id="std")
PW = LayerSpec("pw", 8, 8, 64, 32, layer_id="pw")
DW = LayerSpec("dw", 8, 8, 32, 32, 3, 1, 1, layer_id="dw")


def cycles(spec, config, constants=CycleConstants()):
    sched = map_layer(spec, placeholder_weights(spec), CONFIGS[config])
    return count_cycles(sched, CONFIGS[config], config, constants)


@pytest.fixture(scope="module")
def planned():
    out = {}
    for net in ("mobilenetv2", "efficientnet-b0"):
        layers = plan_network(load_builtin(net).layers)
        out[net] = layers, network_report(layers)
    return out


@pytest.fixture(scope="module")
def mbv2(planned):
    return planned["mobilenetv2"][1]


def test_eight_cycles_per_pass():
    spec = LayerSpec("pw", 1, 1, 32, 16)
    c = cycles(spec, "full")
    assert c.compute_cycles == 8


@pytest.mark.parametrize("spec,ratio", [(STD, 2), (PW, 2), (DW, 4)])
def test_full_vs_baseline_compute_ratio(spec, ratio):
    base, full = cycles(spec, "baseline"), cycles(spec, "full")
    assert base.compute_cycles / full.compute_cycles == ratio
    prod = lambda p: p[0] * p[1] * p[2]  # noqa: E731
    assert prod(full.parallelism) / prod(base.parallelism) == ratio


@pytest.mark.parametrize("spec,bars", [(STD, [1, 2, 2, 2]), (DW, [1, 1, 2, 4])])
def test_single_layer_ladder(spec, bars):
    rep = network_report(plan_network([spec]))
    assert [rep.ladder()[c] for c in LADDER] == bars


@pytest.mark.parametrize("net", ["mobilenetv2", "efficientnet-b0"])
def test_ladder_monotone(planned, net):
    lad = planned[net][1].ladder()
    vals = [lad[c] for c in LADDER]
    assert vals == sorted(vals) and vals[0] == 1.0


@pytest.mark.parametrize("scale", [1, 2, 4])
def test_constant_sweep_per_layer_exact(scale):
    layers = plan_network([STD, PW, DW])
    ref = network_report(layers)
    for cpp, wl, ov in itertools.product([1, scale], [1, scale], [1, scale]):
        rep = network_report(layers, constants=CycleConstants(cpp, wl, ov))
        for c in LADDER:
            for a, b, r0, r1 in zip(rep.layers["baseline"], rep.layers[c],
                                    ref.layers["baseline"], ref.layers[c]):
                assert a.total / b.total == pytest.approx(r0.total / r1.total, rel=1e-12)


@pytest.mark.parametrize("scale", [1, 2, 4])
def test_constant_sweep_network(planned, scale):
    layers, ref = planned["mobilenetv2"]
    both = network_report(layers, constants=CycleConstants(scale, scale, 1))
    assert both.total("full") == pytest.approx(scale * ref.total("full"))
    for c in LADDER:
        assert both.speedup(c) == pytest.approx(ref.speedup(c), rel=1e-12)
    # loads are a small share, so compute-only or load-only rescaling barely moves the result
    for k in (CycleConstants(1, scale, 1), CycleConstants(1, 1, scale), CycleConstants(scale, 1, 1)):
        assert network_report(layers, constants=k).speedup("full") == pytest.approx(
            ref.speedup("full"), rel=0.01)


def test_dw_dominates_mbv2_baseline(mbv2):
    assert mbv2.kind_share("dw") > 0.5


def test_counts_nonnegative(mbv2):
    for rows in mbv2.layers.values():
        assert all(r.load_cycles >= 0 and r.compute_cycles >= 0 for r in rows)


def test_config_mismatch():
    sched = map_layer(DW, placeholder_weights(DW), CONFIGS["full"])
    for name in ("baseline", "fcc", "fcc+dbis"):
        with pytest.raises(ConfigMismatch):
            count_cycles(sched, CONFIGS[name])
    std = map_layer(STD, placeholder_weights(STD), CONFIGS["fcc"])
    with pytest.raises(ConfigMismatch):
        count_cycles(std, CONFIGS["baseline"])


def test_missing_config():
    with pytest.raises(KeyError):
        network_report(plan_network([STD], configs=("baseline",)))


def test_csv(mbv2):
    text = mbv2.to_csv(["full"])
    assert "\r" not in text
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["layer_id", "kind", "config", "load_cycles", "compute_cycles", "total", "speedup"]
    total = rows[-1]
    assert total[0] == "TOTAL"
    assert float(total[-1]) == pytest.approx(mbv2.speedup("full"), abs=1e-4)
    assert np.isclose(sum(float(r[5]) for r in rows[1:-1]), float(total[5]))
