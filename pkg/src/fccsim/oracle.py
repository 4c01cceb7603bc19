"""Reference INT8 convolution / FC engine used as ground truth.

Convolution is cross-correlation with zero padding; accumulation is exact and
the result is checked to fit in 32-bit signed integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KINDS = ("std", "pw", "dw", "fc")
MAX_WINDOW = 1 << 16  # K*K*C guard keeping K*K*C*127*128 inside int32


class LayerError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    H: int
    W: int
    C: int
    N: int
    K: int = 1
    stride: int = 1
    pad: int = 0
    fcc_enabled: bool = True
    layer_id: str = "layer"
    shift: int = 0  # int32 -> int8 requantization right-shift for chaining
    post: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LayerError(f"unknown layer kind {self.kind!r}")
        for name in ("H", "W", "C", "N", "K", "stride"):
            if getattr(self, name) < 1:
                raise LayerError(f"{self.layer_id}: {name} must be positive")
        if self.pad < 0:
            raise LayerError(f"{self.layer_id}: pad must be >= 0")
        if self.kind == "pw" and self.K != 1:
            raise LayerError(f"{self.layer_id}: pw-conv requires K=1")
        if self.kind == "dw" and self.N != self.C:
            raise LayerError(f"{self.layer_id}: dw-conv requires N == C")
        if self.kind == "fc" and (self.H, self.W, self.K, self.pad) != (1, 1, 1, 0):
            raise LayerError(f"{self.layer_id}: fc requires H=W=K=1 and no padding")
        if self.H + 2 * self.pad < self.K or self.W + 2 * self.pad < self.K:
            raise LayerError(f"{self.layer_id}: kernel larger than padded input")
        if self.window_len > MAX_WINDOW:
            raise LayerError(f"{self.layer_id}: K*K*C={self.window_len} exceeds accumulator guard")
        if self.post != "none":
            raise LayerError(f"{self.layer_id}: only post='none' (pass-through) is supported")

    @property
    def filter_depth(self) -> int:
        """Channels seen by one filter: 1 for dw, C otherwise."""
        return 1 if self.kind == "dw" else self.C

    @property
    def window_len(self) -> int:
        return self.K * self.K * self.filter_depth

    @property
    def out_hw(self) -> tuple[int, int]:
        ho = (self.H + 2 * self.pad - self.K) // self.stride + 1
        wo = (self.W + 2 * self.pad - self.K) // self.stride + 1
        return ho, wo

    @property
    def bank_shape(self) -> tuple[int, int, int, int]:
        return (self.N, self.filter_depth, self.K, self.K)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.C, self.H, self.W)

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return (self.N,) + self.out_hw


def _as_activation(x, spec: LayerSpec) -> np.ndarray:
    x = np.asarray(x)
    if spec.kind == "fc" and x.ndim == 1:
        x = x.reshape(-1, 1, 1)
    if x.shape != spec.input_shape:
        raise LayerError(f"{spec.layer_id}: input shape {x.shape} != expected {spec.input_shape}")
    if not np.issubdtype(x.dtype, np.integer) or x.min() < -128 or x.max() > 127:
        raise LayerError(f"{spec.layer_id}: activations must be int8 values")
    return x.astype(np.int64)


def _weights(bank) -> np.ndarray:
    return np.asarray(getattr(bank, "weights", bank))


def windows(x, spec: LayerSpec) -> np.ndarray:
    """Receptive fields as ``[C][H'][W'][K][K]`` (zero padded, strided)."""
    x = _as_activation(x, spec)
    p = spec.pad
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (spec.K, spec.K), axis=(1, 2))
    return win[:, ::spec.stride, ::spec.stride][:, :spec.out_hw[0], :spec.out_hw[1]]


def _to_int32(acc: np.ndarray) -> np.ndarray:
    if acc.size and (acc.min() < np.iinfo(np.int32).min or acc.max() > np.iinfo(np.int32).max):
        raise OverflowError("accumulator exceeds 32 bits")
    return acc.astype(np.int32)


def conv_direct(x, bank, spec: LayerSpec) -> np.ndarray:
    """Reference output ``[N][H'][W']`` as int32."""
    w = _weights(bank)
    if w.shape != spec.bank_shape:
        raise LayerError(f"{spec.layer_id}: bank shape {w.shape} != expected {spec.bank_shape}")
    w = w.astype(np.int64)
    win = windows(x, spec)
    if spec.kind == "dw":
        acc = np.einsum("chwyx,cyx->chw", win, w[:, 0])
    else:
        acc = np.einsum("chwyx,ncyx->nhw", win, w)
    return _to_int32(acc)


def window_sum(x, spec: LayerSpec) -> np.ndarray:
    """Sum of the receptive field per output position.

    ``[H'][W']`` for std/pw/fc (all channels), ``[C][H'][W']`` for dw.
    """
    win = windows(x, spec)
    if spec.kind == "dw":
        return _to_int32(win.sum(axis=(3, 4)))
    return _to_int32(win.sum(axis=(0, 3, 4)))


def recover(comp_out, sums, means, spec: LayerSpec) -> np.ndarray:
    """Add ``window_sum * M`` back onto outputs computed with comp filters."""
    comp_out = np.asarray(comp_out, dtype=np.int64)
    m = np.asarray(getattr(means, "means", means), dtype=np.int64)
    if comp_out.shape[0] != 2 * len(m):
        raise LayerError(f"{comp_out.shape[0]} output channels but {len(m)} pair means")
    sums = np.asarray(sums, dtype=np.int64)
    per_ch = np.repeat(m, 2).reshape(-1, 1, 1)
    if spec.kind == "dw":
        if sums.shape != comp_out.shape:
            raise LayerError("dw window sums must be per channel")
        bias = sums * per_ch
    else:
        bias = sums[None] * per_ch
    return _to_int32(comp_out + bias)
