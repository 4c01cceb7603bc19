"""Cycle accounting over schedules and the four-step speedup ablation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .mapper import CONFIGS, LADDER, FeatureConfig, map_layer, placeholder_weights
from .schedule import Schedule

PLANES = 8


@dataclass(frozen=True)
class CycleConstants:
    cycles_per_plane: float = 1.0  # one compute cycle per input bit plane
    write_latency: float = 1.0  # one cycle per row write
    overlap: float = 1.0  # pipeline overlap factor dividing compute time


class ConfigMismatch(ValueError):
    pass


@dataclass
class LayerCycles:
    layer_id: str
    kind: str
    config: str
    load_cycles: float
    compute_cycles: float
    parallelism: tuple

    @property
    def total(self) -> float:
        return self.load_cycles + self.compute_cycles


def check_schedule(schedule: Schedule, config: FeatureConfig) -> None:
    kind = schedule.layer.kind
    if "double" in schedule.modes:
        allowed = config.fcc_dw_dbis if kind == "dw" else (config.fcc_std_pw and kind != "fc")
        if not allowed:
            raise ConfigMismatch(f"{schedule.layer.layer_id}: double-mode passes not enabled for {kind}")
    if schedule.reconfigs - {"combined"} and not config.reconfig_unit:
        raise ConfigMismatch(f"{schedule.layer.layer_id}: split adder trees need the reconfigurable unit")


def count_cycles(schedule: Schedule, config: FeatureConfig, config_name: str = "",
                 constants: CycleConstants = CycleConstants()) -> LayerCycles:
    check_schedule(schedule, config)
    compute = schedule.compute_passes * PLANES * constants.cycles_per_plane / constants.overlap
    load = schedule.load_steps * constants.write_latency
    return LayerCycles(schedule.layer.layer_id, schedule.layer.kind, config_name,
                       load, compute, schedule.parallelism)


@dataclass
class CycleReport:
    layers: dict = field(default_factory=dict)  # config -> [LayerCycles]

    def total(self, config: str) -> float:
        return sum(l.total for l in self.layers[config])

    def compute_total(self, config: str) -> float:
        return sum(l.compute_cycles for l in self.layers[config])

    def speedup(self, config: str, reference: str = "baseline") -> float:
        return self.total(reference) / self.total(config)

    def ladder(self) -> dict:
        """Speedup of each ablation step over the baseline."""
        return {c: self.speedup(c) for c in LADDER if c in self.layers}

    def kind_share(self, kind: str, config: str = "baseline") -> float:
        rows = self.layers[config]
        return sum(l.total for l in rows if l.kind == kind) / self.total(config)

    def to_csv(self, configs=None) -> str:
        configs = list(configs or self.layers)
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["layer_id", "kind", "config", "load_cycles", "compute_cycles", "total", "speedup"])
        base = {l.layer_id: l for l in self.layers.get("baseline", [])}
        for c in configs:
            for l in self.layers[c]:
                ref = base.get(l.layer_id)
                sp = ref.total / l.total if ref and l.total else 1.0
                wr.writerow([l.layer_id, l.kind, c, _num(l.load_cycles), _num(l.compute_cycles),
                             _num(l.total), f"{sp:.4f}"])
            sp = self.speedup(c) if "baseline" in self.layers else 1.0
            wr.writerow(["TOTAL", "network", c, _num(sum(l.load_cycles for l in self.layers[c])),
                         _num(self.compute_total(c)), _num(self.total(c)), f"{sp:.4f}"])
        return buf.getvalue()


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.3f}"


def network_report(layers, configs=LADDER, constants: CycleConstants = CycleConstants()) -> CycleReport:
    """``layers`` is a list of ``(LayerSpec, {config_name: Schedule})``."""
    rep = CycleReport()
    for name in configs:
        rows = []
        for spec, scheds in layers:
            if name not in scheds:
                raise KeyError(f"{spec.layer_id}: no schedule for config {name!r}")
            rows.append(count_cycles(scheds[name], CONFIGS[name], name, constants))
        rep.layers[name] = rows
    return rep


def plan_network(specs, configs=LADDER, weights=None) -> list:
    """Map every layer under every config; zero weights unless ``weights`` maps layer ids."""
    out = []
    for spec in specs:
        w = weights[spec.layer_id] if weights else placeholder_weights(spec)
        out.append((spec, {c: map_layer(spec, w, CONFIGS[c]) for c in configs}))
    return out
