"""Pre-process (im2col, bit-serial inputs), shift & add, and the merge unit.

Signed handling: inputs and weights are both two's complement, so bit 7 of
each carries weight -2**7 and the product of bit k and bit b is weighted by
sigma(k) * sigma(b) * 2**(k + b) with sigma(7) = -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .macro import (COMPARTMENTS, WEIGHT_BITS, Mode, PimMacro, ReconfigMode, adder_reduce,
                    unit_columns)
from .oracle import LayerError, LayerSpec, windows
from .schedule import TIED_LOW, ComputePass, Drain, LoadRows, Schedule

PLANES = 8
SIGMA = np.array([1] * 7 + [-1], dtype=np.int64)
BIT_WEIGHTS = np.outer(SIGMA << np.arange(8), SIGMA << np.arange(8))  # [k][b]


def im2col(x, spec: LayerSpec) -> np.ndarray:
    """Input windows as columns.

    std/pw/fc: ``[K*K*C][P]``; dw: ``[C][K*K][P]``. Within a window the order
    is channel, then kernel row, then kernel column, matching a flattened
    ``[C][K][K]`` filter.
    """
    win = windows(x, spec)  # [C][H'][W'][K][K]
    C, Ho, Wo, K, _ = win.shape
    cols = win.transpose(0, 3, 4, 1, 2).reshape(C, K * K, Ho * Wo)
    if spec.kind == "dw":
        return cols
    return cols.reshape(C * K * K, Ho * Wo)


@dataclass
class BitSerialStream:
    planes: np.ndarray  # [8][...] bits, plane 0 = LSB
    length: int
    msb_negative: bool = True

    def values(self) -> np.ndarray:
        w = SIGMA << np.arange(PLANES)
        return np.tensordot(w, self.planes.astype(np.int64), axes=1)


def bit_serialize(vec) -> BitSerialStream:
    v = np.asarray(vec)
    if v.size and (v.min() < -128 or v.max() > 127):
        raise ValueError("bit_serialize takes int8 values")
    u = v.astype(np.int8).view(np.uint8)
    planes = ((u[None] >> np.arange(PLANES).reshape((PLANES,) + (1,) * u.ndim)) & 1).astype(np.uint8)
    return BitSerialStream(planes, int(v.shape[0]) if v.ndim else 1)


def shift_add(sums) -> np.ndarray:
    """Combine popcounts ``[..., k, b]`` (input plane k, weight bit b) into a Psum."""
    s = np.asarray(sums, dtype=np.int64)
    if s.shape[-2:] != (PLANES, WEIGHT_BITS):
        raise IndexError(f"expected trailing [8][8] bit-sum axes, got {s.shape}")
    return np.einsum("...kb,kb->...", s, BIT_WEIGHTS)


def aru_merge(psums, window_sums, means, fcc_enabled: bool, channels=None, depthwise=False) -> np.ndarray:
    """Recover outputs: ``psum + window_sum * M[ch // 2]``; identity when FCC is off.

    For dw, ``window_sums`` is indexed by channel; otherwise it is shared.
    """
    ps = np.asarray(psums, dtype=np.int64)
    if not fcc_enabled:
        return ps
    m = np.asarray(getattr(means, "means", means), dtype=np.int64)
    channels = np.arange(ps.shape[0]) if channels is None else np.asarray(channels)
    if channels.shape[0] != ps.shape[0]:
        raise LayerError("one channel index per psum row required")
    if channels.max(initial=-1) // 2 >= len(m):
        raise LayerError(f"channel {channels.max()} has no pair mean ({len(m)} means)")
    ws = np.asarray(window_sums, dtype=np.int64)
    mm = m[channels // 2].reshape((-1,) + (1,) * (ps.ndim - 1))
    if depthwise:
        return ps + ws[channels] * mm
    return ps + ws[None] * mm


class ScheduleError(RuntimeError):
    pass


def _input_vector(x, spec: LayerSpec) -> np.ndarray:
    cols = im2col(x, spec)
    return cols.reshape(-1, cols.shape[-1])  # dw: index = channel * K*K + tap


def run_schedule(schedule: Schedule, x, macros=None) -> np.ndarray:
    """Execute a schedule bit-by-bit through the macro models.

    Returns the int32 output ``[N][H'][W']``.
    """
    spec = schedule.layer
    macros = macros if macros is not None else [PimMacro(i) for i in range(4)]
    vec = _input_vector(x, spec)  # [D][P]
    D, P = vec.shape
    planes = bit_serialize(vec).planes  # [8][D][P]
    planes = np.concatenate([planes, np.zeros((PLANES, 1, P), np.uint8)], axis=1)  # idle row at D
    if spec.kind == "dw":
        wsum = vec.reshape(spec.C, -1, P).sum(axis=1)  # [C][P]
    else:
        wsum = vec.sum(axis=0)  # [P]

    psum = np.zeros((spec.N, P), dtype=np.int64)
    out = np.zeros((spec.N, P), dtype=np.int64)
    drained = np.zeros(spec.N, dtype=bool)

    def gather(idx, p0, p1):
        i = np.asarray(idx)
        i = np.where(i == TIED_LOW, D, i)
        return planes[:, i, p0:p1].transpose(2, 0, 1)  # [npix][8][32]

    for step in schedule.steps:
        if isinstance(step, LoadRows):
            mac = macros[step.macro]
            mac.set_mode(Mode.NORMAL)
            for c, img in step.images:
                mac.write_row(c, step.row, img)
        elif isinstance(step, ComputePass):
            p0, p1 = step.pixels
            double = step.mode == Mode.DOUBLE.value
            cfg = ReconfigMode(step.reconfig)
            for lane in step.lanes:
                if len(lane.inp) != COMPARTMENTS:
                    raise ScheduleError("lane input routing must cover 32 compartments")
                mac = macros[lane.macro]
                mac.set_mode(step.mode)
                if double:
                    bits = mac.compute_double(lane.row, gather(lane.inp, p0, p1), gather(lane.inn, p0, p1))
                else:
                    bits = mac.compute_regular(lane.row, gather(lane.inp, p0, p1))
                sums = adder_reduce(bits, cfg, step.stage if cfg is ReconfigMode.STAGED else None)
                for unit, tree, ch in lane.outputs:
                    cols = unit_columns(unit, double)
                    if cfg is ReconfigMode.COMBINED:
                        if tree != -1:
                            raise ScheduleError("combined adder output cannot name a tree")
                        s = sums[..., cols]
                    else:
                        s = sums[..., tree, cols]
                    psum[ch, p0:p1] += shift_add(s)
        elif isinstance(step, Drain):
            ch = np.asarray(step.channels, dtype=np.int64)
            if drained[ch].any():
                raise ScheduleError(f"channels {ch[drained[ch]].tolist()} drained twice")
            out[ch] = aru_merge(psum[ch], wsum, schedule.means, schedule.recover,
                                channels=ch, depthwise=spec.kind == "dw")
            drained[ch] = True
        else:
            raise ScheduleError(f"unknown schedule step {step!r}")
    if not drained.all():
        raise ScheduleError(f"channels never drained: {np.nonzero(~drained)[0].tolist()}")
    if out.min(initial=0) < np.iinfo(np.int32).min or out.max(initial=0) > np.iinfo(np.int32).max:
        raise OverflowError("output exceeds 32 bits")
    return out.astype(np.int32).reshape(spec.output_shape)
