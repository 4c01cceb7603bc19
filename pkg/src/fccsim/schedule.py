"""Schedule steps shared by the mapper, the datapath executor and the cycle model."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .macro import COMPARTMENTS, TREE_SIZE, UNIT_SLOT_PATH, WEIGHT_BITS, unpack_row
from .oracle import LayerSpec

TIED_LOW = -1  # input index meaning "no input bit" (compartment idle)


@dataclass(frozen=True)
class LoadRows:
    """Write one row of a macro; all listed compartments are written in the same cycle."""

    macro: int
    row: int
    images: tuple  # ((compartment, 16-bit image), ...)


@dataclass(frozen=True)
class Lane:
    """What one macro does during a compute pass.

    ``inp``/``inn`` give, per compartment, the index into the layer's input
    column vector that drives INP/INN (``TIED_LOW`` for none). ``outputs``
    lists ``(adder unit, tree, output channel)``; tree is -1 when the two
    trees are combined.
    """

    macro: int
    row: int
    inp: tuple
    inn: tuple | None
    outputs: tuple


@dataclass(frozen=True)
class ComputePass:
    """One row configuration applied to a contiguous run of output pixels.

    Each pixel is one physical pass of 8 input bit planes; ``count`` passes total.
    """

    mode: str
    reconfig: str
    stage: int
    lanes: tuple
    pixels: tuple  # (start, stop)

    @property
    def count(self) -> int:
        return self.pixels[1] - self.pixels[0]


@dataclass(frozen=True)
class Drain:
    channels: tuple


@dataclass
class Schedule:
    layer: LayerSpec
    steps: list
    recover: bool
    means: tuple | None = None
    parallelism: tuple = field(default=(0, 0, 0))

    def __post_init__(self):
        if self.parallelism == (0, 0, 0):
            self.parallelism = measure_parallelism(self.steps)

    @property
    def compute_passes(self) -> int:
        return sum(s.count for s in self.steps if isinstance(s, ComputePass))

    @property
    def load_steps(self) -> int:
        return sum(1 for s in self.steps if isinstance(s, LoadRows))

    @property
    def modes(self) -> set:
        return {s.mode for s in self.steps if isinstance(s, ComputePass)}

    @property
    def reconfigs(self) -> set:
        return {s.reconfig for s in self.steps if isinstance(s, ComputePass)}

    def to_text(self) -> str:
        return schedule_to_text(self)


@lru_cache(maxsize=4096)
def lane_parallelism(lane: Lane) -> tuple[int, int]:
    """(compartments contributing, bits per compartment) for one lane."""
    counts = [0] * COMPARTMENTS
    for unit, tree, _ in lane.outputs:
        path = UNIT_SLOT_PATH[unit][1]
        src = lane.inn if path else lane.inp
        if src is None:
            continue
        for c in range(COMPARTMENTS):
            if src[c] != TIED_LOW and (tree == -1 or tree == c // TREE_SIZE):
                counts[c] += 1
    x = sum(1 for n in counts if n)
    return x, WEIGHT_BITS * max(counts)


def measure_parallelism(steps) -> tuple[int, int, int]:
    X = Y = B = 0
    for s in steps:
        if not isinstance(s, ComputePass):
            continue
        live = [lane_parallelism(l) for l in s.lanes if l.outputs]
        if not live:
            continue
        X = max(X, max(x for x, _ in live))
        Y = max(Y, len(live))
        B = max(B, max(b for _, b in live))
    return X, Y, B


def _fmt_idx(idx) -> str:
    """Compact index list: runs of consecutive values become a-b, idle = '.'."""
    parts, i = [], 0
    idx = list(idx)
    while i < len(idx):
        if idx[i] == TIED_LOW:
            j = i
            while j < len(idx) and idx[j] == TIED_LOW:
                j += 1
            parts.append("." if j - i == 1 else f".x{j - i}")
            i = j
            continue
        j = i
        while j + 1 < len(idx) and idx[j + 1] == idx[j] + 1:
            j += 1
        parts.append(str(idx[i]) if i == j else f"{idx[i]}-{idx[j]}")
        i = j + 1
    return ",".join(parts)


def schedule_to_text(sched: Schedule) -> str:
    X, Y, B = sched.parallelism
    spec = sched.layer
    lines = [f"# layer={spec.layer_id} kind={spec.kind} recover={int(sched.recover)} "
             f"parallelism={X}x{Y}x{B} passes={sched.compute_passes} loads={sched.load_steps}"]
    for s in sched.steps:
        if isinstance(s, LoadRows):
            imgs = " ".join(f"{c}:{img:04X}" for c, img in s.images)
            lines.append(f"LOAD m{s.macro} r{s.row} {imgs}")
        elif isinstance(s, ComputePass):
            lanes = []
            for l in s.lanes:
                outs = ",".join(f"u{u}{'' if t < 0 else 't' + str(t)}>c{ch}" for u, t, ch in l.outputs)
                inn = "" if l.inn is None else f" inn={_fmt_idx(l.inn)}"
                lanes.append(f"[m{l.macro} r{l.row} inp={_fmt_idx(l.inp)}{inn} out={outs}]")
            lines.append(f"COMPUTE {s.mode} {s.reconfig} stage={s.stage} "
                         f"px={s.pixels[0]}:{s.pixels[1]} " + " ".join(lanes))
        elif isinstance(s, Drain):
            lines.append("DRAIN " + ",".join(map(str, s.channels)))
    return "\n".join(lines) + "\n"


def row_weights(images) -> list[tuple[int, int, int]]:
    """Decode ``(compartment, image)`` pairs into ``(compartment, A, B)``."""
    return [(c,) + unpack_row(img) for c, img in images]
