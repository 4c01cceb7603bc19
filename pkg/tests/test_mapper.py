import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fccsim.fcc import CompFilterStore, reconstruct
from fccsim.macro import UNIT_SLOT_PATH, unpack_row
from fccsim.mapper import (CONFIGS, MEAN_BYTES, WEIGHT_MEMORY_BYTES, FeatureConfig, MappingError,
                           map_dw, map_fc, map_layer, map_std_pw, placeholder_weights, plan_prefetch,
                           transfer_bytes)
from fccsim.oracle import LayerSpec
from fccsim.schedule import TIED_LOW, ComputePass, LoadRows, measure_parallelism
from tests.conftest import random_int8, random_spec, random_store


def walk_coverage(sched):
    """Read back, from simulated row contents, the weight every output sees.

    Returns {(channel, element): [weights seen]} and asserts no
    (macro, compartment, row, slot, path) feeds two outputs in one pass.
    """
    mem = {}
    seen = {}
    dw = sched.layer.kind == "dw"
    kk = sched.layer.K ** 2
    for step in sched.steps:
        if isinstance(step, LoadRows):
            for c, img in step.images:
                mem[step.macro, c, step.row] = unpack_row(img)
        elif isinstance(step, ComputePass):
            used = Counter()
            for lane in step.lanes:
                for unit, tree, ch in lane.outputs:
                    slot, path = UNIT_SLOT_PATH[unit]
                    src = lane.inn if path else lane.inp
                    for c, d in enumerate(src):
                        if d == TIED_LOW or (tree >= 0 and c // 16 != tree):
                            continue
                        used[lane.macro, c, lane.row, slot, path] += 1
                        w = mem[lane.macro, c, lane.row][slot]
                        if path:
                            w = ~w
                        el = d - ch * kk if dw else d
                        seen.setdefault((ch, el), []).append(w)
            assert max(used.values(), default=0) <= 1
    return seen


def expected_weights(spec, weights):
    if isinstance(weights, CompFilterStore):
        w = weights.comp_filters()
    else:
        w = np.asarray(getattr(weights, "weights", weights))
    return w.reshape(spec.N, -1)


def layer_weights(rng, spec):
    return random_store(rng, spec) if spec.fcc_enabled and spec.kind != "fc" \
        else random_int8(rng, spec.bank_shape)


@pytest.mark.parametrize("config", list(CONFIGS))
@pytest.mark.parametrize("kind", ["std", "pw", "dw", "fc"])
@pytest.mark.parametrize("seed", range(3))
def test_every_weight_used_exactly_once(kind, config, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, kind, max_hw=4, max_c=70, max_n=40)
    weights = layer_weights(rng, spec)
    sched = map_layer(spec, weights, CONFIGS[config])
    seen = walk_coverage(sched)
    want = expected_weights(spec, weights)
    if isinstance(weights, CompFilterStore) and not ("double" in sched.modes):
        want = reconstruct(weights).weights.reshape(spec.N, -1)
    assert set(seen) == {(n, e) for n in range(spec.N) for e in range(want.shape[1])}
    for (n, e), ws in seen.items():
        assert ws == [want[n, e]]


class TestParallelism:
    def test_std_pw_saturating(self, rng):
        for kind, K in (("std", 3), ("pw", 1)):
            spec = LayerSpec(kind, 4, 4, 64, 32, K, 1, K // 2)
            store = random_store(rng, spec)
            assert map_layer(spec, store, CONFIGS["full"]).parallelism == (32, 4, 32)
            assert map_layer(spec, store, CONFIGS["fcc"]).parallelism == (32, 4, 32)
            assert map_layer(spec, store, CONFIGS["baseline"]).parallelism == (32, 4, 16)

    @pytest.mark.parametrize("config,want", [("baseline", (9, 1, 8)), ("fcc", (9, 1, 8)),
                                             ("fcc+dbis", (9, 1, 16)), ("full", (18, 1, 16))])
    def test_dw_3x3(self, config, want, rng):
        spec = LayerSpec("dw", 6, 6, 32, 32, 3, 1, 1)
        assert map_layer(spec, random_store(rng, spec), CONFIGS[config]).parallelism == want

    def test_dw_5x5_falls_back_to_one_quad(self, rng):
        spec = LayerSpec("dw", 6, 6, 8, 8, 5, 1, 2)
        assert map_layer(spec, random_store(rng, spec), CONFIGS["full"]).parallelism == (25, 1, 16)

    @pytest.mark.parametrize("seed", range(5))
    def test_ceilings(self, seed):
        rng = np.random.default_rng(seed)
        for kind in ("std", "pw", "dw", "fc"):
            spec = random_spec(rng, kind, max_hw=4, max_c=80, max_n=40)
            for cfg in CONFIGS.values():
                X, Y, B = map_layer(spec, layer_weights(rng, spec), cfg).parallelism
                assert X <= 32 and Y <= 4 and B <= 32
                if kind == "dw":
                    assert X * Y * B <= 18 * 16


class TestTransfer:
    @given(st.sampled_from(["std", "pw", "dw"]), st.integers(1, 64), st.integers(1, 32))
    def test_fcc_halves(self, kind, c, half_n):
        n = c if kind == "dw" else 2 * half_n
        if kind == "dw" and c % 2:
            n = c = c + 1
        K = 1 if kind == "pw" else 3
        spec = LayerSpec(kind, 4, 4, c, n, K, 1, K // 2)
        depth = 1 if kind == "dw" else c
        assert transfer_bytes(spec) == math.ceil(n / 2) * K * K * depth + MEAN_BYTES * math.ceil(n / 2)
        off = LayerSpec(kind, 4, 4, c, n, K, 1, K // 2, fcc_enabled=False)
        assert transfer_bytes(off) == n * K * K * depth

    def test_fc_not_halved(self):
        assert transfer_bytes(LayerSpec("fc", 1, 1, 1280, 10, fcc_enabled=False)) == 12800


class TestPrefetch:
    def test_two_small_layers_both_resident(self):
        layers = [LayerSpec("fc", 1, 1, 1024, 100, fcc_enabled=False, layer_id=f"l{i}") for i in range(2)]
        mem = plan_prefetch(layers)
        assert mem.peak == 2 * 102400 <= WEIGHT_MEMORY_BYTES
        assert mem.events[1] == ("load", "l1", 0, 102400, ("l0", 0))
        assert not mem.streamed and not mem.unmasked

    def test_oversized_layer_streams(self):
        big = LayerSpec("fc", 1, 1, 3000, 100, fcc_enabled=False, layer_id="big")
        mem = plan_prefetch([big])
        chunks = [e for e in mem.events if e[0] == "load"]
        assert len(chunks) >= 2 and mem.streamed == ["big"]
        assert sum(e[3] for e in chunks) == 300000
        assert mem.peak <= WEIGHT_MEMORY_BYTES

    def test_unstreamable_tile(self):
        huge = LayerSpec("fc", 1, 1, 65536, 4, fcc_enabled=False, layer_id="huge")
        with pytest.raises(MappingError):
            plan_prefetch([huge], capacity=100000)


def test_fc_examples():
    fc = LayerSpec("fc", 1, 1, 3, 3, fcc_enabled=False)
    sched = map_fc(np.eye(3, dtype=np.int8).reshape(3, 3, 1, 1), fc)
    assert sched.modes == {"regular"} and not sched.recover


def test_errors(rng):
    spec = LayerSpec("pw", 2, 2, 4, 4)
    store = random_store(rng, spec)
    with pytest.raises(MappingError):
        map_fc(store, spec)
    with pytest.raises(MappingError):
        map_std_pw(store, LayerSpec("dw", 2, 2, 4, 4, 3, 1, 1))
    with pytest.raises(MappingError):
        map_dw(store, LayerSpec("dw", 2, 2, 4, 4, 3, 1, 1), dbis=False, reconfig=True)
    with pytest.raises(MappingError):
        map_layer(spec, random_int8(rng, spec.bank_shape), CONFIGS["full"])
    with pytest.raises(ValueError):
        FeatureConfig(True, False, True)


def test_placeholder_cycles_match_real_weights(rng):
    spec = LayerSpec("std", 5, 5, 20, 12, 3, 1, 1)
    a = map_layer(spec, placeholder_weights(spec), CONFIGS["full"])
    b = map_layer(spec, random_store(rng, spec), CONFIGS["full"])
    assert (a.compute_passes, a.load_steps) == (b.compute_passes, b.load_steps)


def test_schedule_text_one_line_per_step(rng):
    spec = LayerSpec("dw", 3, 3, 4, 4, 3, 1, 1)
    sched = map_layer(spec, random_store(rng, spec), CONFIGS["full"])
    lines = sched.to_text().splitlines()
    assert len(lines) == len(sched.steps) + 1
    assert lines[0].startswith("# layer=")
    assert measure_parallelism(sched.steps) == sched.parallelism


