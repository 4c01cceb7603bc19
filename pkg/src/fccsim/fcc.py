"""FCC weight transform: pair means, symmetrization, INT8 quantization,
complementization and decomposition into stored complementary filters.

Filter banks are ``[N][C][K][K]`` arrays. Filters are processed in adjacent
pairs ``(j, j+1)`` with ``j`` even; ``means[j // 2]`` is the pair mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INT8_MIN = -128
INT8_MAX = 127
QMAX = 127  # -128 is reserved so that complementize can always subtract one


class FccError(ValueError):
    """Base class for transform errors."""


class PairingError(FccError):
    pass


class DimensionError(FccError):
    pass


class PreconditionError(FccError):
    pass


class IntegrityError(FccError):
    pass


def _check_bank_array(w: np.ndarray, need_even: bool = True) -> None:
    if w.ndim != 4:
        raise DimensionError(f"filter bank must be 4-D [N][C][K][K], got shape {w.shape}")
    if w.size == 0 or min(w.shape) <= 0:
        raise DimensionError(f"filter bank has an empty dimension: {w.shape}")
    if need_even and w.shape[0] % 2:
        raise PairingError(f"FCC pairs adjacent filters; N={w.shape[0]} is odd")


@dataclass
class FloatFilterBank:
    weights: np.ndarray
    layer_id: str = "layer"
    fcc_enabled: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        _check_bank_array(self.weights, need_even=self.fcc_enabled)


@dataclass
class PairMeans:
    means: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means)
        if self.means.ndim != 1:
            raise DimensionError("pair means must be a 1-D array")

    def __len__(self) -> int:
        return len(self.means)

    @property
    def is_integer(self) -> bool:
        return np.issubdtype(self.means.dtype, np.integer)

    def per_filter(self) -> np.ndarray:
        """Mean for every filter index (both members of a pair share it)."""
        return np.repeat(self.means, 2)


@dataclass
class Int8FilterBank:
    weights: np.ndarray
    scale: float = 1.0
    layer_id: str = "layer"
    fcc_enabled: bool = True
    # pairs whose symmetrization saturated; reported, never silently dropped
    flagged_pairs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if not np.issubdtype(w.dtype, np.integer):
            raise TypeError(f"integer weights required, got {w.dtype}")
        _check_bank_array(w, need_even=self.fcc_enabled)
        if w.min() < INT8_MIN or w.max() > INT8_MAX:
            raise FccError("weights outside INT8 range")
        self.weights = w.astype(np.int8)
        if not self.scale > 0:
            raise FccError(f"scale must be positive, got {self.scale}")
        self.flagged_pairs = frozenset(self.flagged_pairs)


@dataclass
class BiasedCompFilterBank:
    weights: np.ndarray
    means: PairMeans
    scale: float = 1.0
    layer_id: str = "layer"
    flagged_pairs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.weights = np.asarray(self.weights).astype(np.int8)
        _check_bank_array(self.weights)
        if len(self.means) != self.weights.shape[0] // 2:
            raise PairingError("one mean per filter pair required")

    def as_int8(self) -> Int8FilterBank:
        return Int8FilterBank(self.weights, self.scale, self.layer_id,
                              fcc_enabled=True, flagged_pairs=self.flagged_pairs)


@dataclass
class CompFilterStore:
    """Physically stored half of every complementary pair.

    ``stored[p]`` holds filter ``2p`` minus its pair mean; filter ``2p+1`` only
    exists as the bitwise NOT of it.
    """

    stored: np.ndarray
    means: PairMeans
    scale: float = 1.0
    layer_id: str = "layer"

    def __post_init__(self):
        self.stored = np.asarray(self.stored).astype(np.int8)
        _check_bank_array(self.stored, need_even=False)
        if len(self.means) != self.stored.shape[0]:
            raise PairingError("one mean per stored filter required")

    @property
    def n_filters(self) -> int:
        return 2 * self.stored.shape[0]

    def implicit(self) -> np.ndarray:
        """The odd channels, as read from the complementary storage node."""
        return np.invert(self.stored)

    def comp_filters(self) -> np.ndarray:
        """All N comp filters ``[f0, ~f0, f2, ~f2, ...]`` as int8."""
        out = np.empty((self.n_filters,) + self.stored.shape[1:], dtype=np.int8)
        out[0::2] = self.stored
        out[1::2] = self.implicit()
        return out


def bitwise_not8(x):
    """Bitwise NOT of int8 values, returned as signed integers."""
    return np.invert(np.asarray(x).astype(np.int8))


def _round_half_away(num: np.ndarray, den: int) -> np.ndarray:
    """Exact round(num / den) with ties away from zero, integer inputs."""
    num = np.asarray(num, dtype=np.int64)
    q, r = np.divmod(np.abs(num), den)
    q = q + (2 * r >= den)
    return np.sign(num) * q


def compute_pair_means(bank) -> PairMeans:
    w = bank.weights
    _check_bank_array(w)
    L = int(np.prod(w.shape[1:]))
    n_pairs = w.shape[0] // 2
    if np.issubdtype(w.dtype, np.integer):
        sums = w.astype(np.int64).reshape(n_pairs, 2 * L).sum(axis=1)
        return PairMeans(_round_half_away(sums, 2 * L).astype(np.int64))
    sums = w.reshape(n_pairs, 2 * L).sum(axis=1)
    return PairMeans(sums / (2 * L))


def symmetrize(bank, means: PairMeans, repair: bool = False):
    """Mirror the twin-weight closer to the pair mean onto the farther one.

    For integer banks ``2M - w`` may leave [-127, 127]. Those elements are
    saturated and their pair is added to ``flagged_pairs``. With
    ``repair=True`` the twin of a saturated element is moved as well so the
    pair stays exactly symmetric (it is still flagged).
    """
    w = bank.weights
    _check_bank_array(w)
    n_pairs = w.shape[0] // 2
    if len(means) != n_pairs:
        raise PairingError("means do not match the number of pairs")
    is_int = np.issubdtype(w.dtype, np.integer)
    ww = w.astype(np.int64 if is_int else np.float64)
    a, b = ww[0::2], ww[1::2]
    m = np.asarray(means.means).reshape((n_pairs,) + (1,) * (w.ndim - 1))
    if is_int:
        m = m.astype(np.int64)
    keep_a = np.abs(a - m) >= np.abs(b - m)
    new_a = np.where(keep_a, a, 2 * m - b)
    new_b = np.where(keep_a, 2 * m - a, b)

    if not is_int:
        out = np.empty_like(ww)
        out[0::2], out[1::2] = new_a, new_b
        return FloatFilterBank(out, bank.layer_id, bank.fcc_enabled)

    sat = (new_a < -QMAX) | (new_a > QMAX) | (new_b < -QMAX) | (new_b > QMAX)
    clipped_a = np.clip(new_a, -QMAX, QMAX)
    clipped_b = np.clip(new_b, -QMAX, QMAX)
    if repair:
        # keep the clipped member, re-mirror its twin: 2M - (+-127) is always in range
        a_sat = clipped_a != new_a
        b_sat = clipped_b != new_b
        clipped_b = np.where(a_sat, 2 * m - clipped_a, clipped_b)
        clipped_a = np.where(b_sat, 2 * m - clipped_b, clipped_a)
    flagged = set(np.nonzero(sat.reshape(n_pairs, -1).any(axis=1))[0].tolist())
    out = np.empty_like(ww)
    out[0::2], out[1::2] = clipped_a, clipped_b
    return Int8FilterBank(out, bank.scale, bank.layer_id, bank.fcc_enabled,
                          flagged_pairs=frozenset(bank.flagged_pairs) | flagged)


def quantize(bank: FloatFilterBank) -> Int8FilterBank:
    """Per-tensor symmetric INT8 quantization, zero point 0, range [-127, 127].

    Rounding is half-to-even, the usual framework convention.
    """
    w = bank.weights
    amax = float(np.abs(w).max())
    scale = amax / QMAX if amax > 0 else 1.0
    q = np.clip(np.rint(w / scale), -QMAX, QMAX).astype(np.int8)
    return Int8FilterBank(q, scale, bank.layer_id, bank.fcc_enabled)


def dequantize(bank) -> FloatFilterBank:
    if not bank.scale > 0:
        raise FccError("scale must be positive")
    return FloatFilterBank(bank.weights.astype(np.float64) * bank.scale,
                           bank.layer_id, getattr(bank, "fcc_enabled", True))


def _pair_positions(mask: np.ndarray, limit: int | None = None) -> list:
    """Coordinates ``(pair, c, ky, kx)`` of True entries in a pair-indexed mask."""
    idx = np.argwhere(mask)
    if limit is not None:
        idx = idx[:limit]
    return [tuple(int(v) for v in row) for row in idx]


def complementize(bank: Int8FilterBank, means: PairMeans) -> BiasedCompFilterBank:
    """Subtract one from the smaller twin-weight of every symmetric pair."""
    w = bank.weights.astype(np.int16)
    _check_bank_array(w)
    n_pairs = w.shape[0] // 2
    if len(means) != n_pairs:
        raise PairingError("means do not match the number of pairs")
    if not means.is_integer:
        raise PreconditionError("complementize needs integer pair means")
    a, b = w[0::2], w[1::2]
    low = w < -QMAX
    if low.any():
        pos = tuple(int(v) for v in np.argwhere(low)[0])
        raise PreconditionError(f"weight -128 at filter/position {pos} would underflow")
    m = means.means.astype(np.int16).reshape((n_pairs,) + (1,) * 3)
    asym = (a + b) != 2 * m
    if bank.flagged_pairs:
        asym[sorted(bank.flagged_pairs)] = False
    if asym.any():
        raise PreconditionError(f"pair not symmetric about its mean at {_pair_positions(asym, 1)[0]}")
    a_ge = a >= b
    out = np.empty_like(w)
    out[0::2] = np.where(a_ge, a, a - 1)
    out[1::2] = np.where(a_ge, b - 1, b)
    return BiasedCompFilterBank(out.astype(np.int8), PairMeans(means.means.astype(np.int64)),
                                bank.scale, bank.layer_id, bank.flagged_pairs)


def _mean_offsets(bank: BiasedCompFilterBank):
    w = bank.weights.astype(np.int16)
    n_pairs = w.shape[0] // 2
    m = bank.means.means.astype(np.int16).reshape((n_pairs,) + (1,) * 3)
    return w[0::2] - m, w[1::2] - m


def complement_violations(bank: BiasedCompFilterBank) -> np.ndarray:
    """Mask ``[N/2][C][K][K]`` of elements breaking the biased-complement relation."""
    da, db = _mean_offsets(bank)
    in_range = (da >= INT8_MIN) & (da <= INT8_MAX) & (db >= INT8_MIN) & (db <= INT8_MAX)
    xor = (da.astype(np.int8).view(np.uint8) ^ db.astype(np.int8).view(np.uint8))
    return ~in_range | (xor != 0xFF)


def decompose(bank: BiasedCompFilterBank) -> CompFilterStore:
    bad = complement_violations(bank)
    if bad.any():
        raise IntegrityError(
            f"{int(bad.sum())} elements violate the biased-complement relation, "
            f"first at (pair, c, ky, kx)={_pair_positions(bad, 1)[0]}")
    da, _ = _mean_offsets(bank)
    return CompFilterStore(da.astype(np.int8), PairMeans(bank.means.means.copy()),
                           bank.scale, bank.layer_id)


def reconstruct(store: CompFilterStore) -> BiasedCompFilterBank:
    """Inverse of :func:`decompose`: add the pair mean back onto both channels."""
    m = np.repeat(store.means.means.astype(np.int16), 2).reshape((-1, 1, 1, 1))
    w = store.comp_filters().astype(np.int16) + m
    if w.min() < INT8_MIN or w.max() > INT8_MAX:
        raise IntegrityError("reconstructed weights leave INT8 range")
    return BiasedCompFilterBank(w.astype(np.int8), PairMeans(store.means.means.copy()),
                                store.scale, store.layer_id)


@dataclass
class VerificationReport:
    passed: bool
    n_checked: int
    failures: list  # [(pair, c, ky, kx, reason)], at most 10

    def __bool__(self) -> bool:
        return self.passed


def verify_complementarity(store: CompFilterStore, source: BiasedCompFilterBank,
                           max_failures: int = 10) -> VerificationReport:
    if store.n_filters != source.weights.shape[0] or store.stored.shape[1:] != source.weights.shape[1:]:
        raise DimensionError(
            f"store {store.stored.shape} does not match source bank {source.weights.shape}")
    s = store.stored.view(np.uint8)
    xor_bad = (s ^ np.invert(store.stored).view(np.uint8)) != 0xFF
    m = store.means.means.astype(np.int16).reshape((-1, 1, 1, 1))
    src = source.weights.astype(np.int16)
    even_bad = store.stored.astype(np.int16) + m != src[0::2]
    odd_bad = store.implicit().astype(np.int16) + m != src[1::2]
    mean_bad = np.asarray(store.means.means) != np.asarray(source.means.means)

    failures = []
    for mask, why in ((xor_bad, "complement"), (even_bad, "even-channel"), (odd_bad, "odd-channel")):
        for pos in _pair_positions(mask, max_failures):
            failures.append(pos + (why,))
    for p in np.nonzero(mean_bad)[0][:max_failures]:
        failures.append((int(p), -1, -1, -1, "mean"))
    failures.sort(key=lambda f: f[:4])
    return VerificationReport(not failures, int(store.stored.size), failures[:max_failures])


@dataclass
class FccResult:
    """Every stage of the one-shot FCC transform, kept for tracing and reports."""

    source: FloatFilterBank | Int8FilterBank
    float_means: PairMeans | None
    symmetric_float: FloatFilterBank | None
    quantized: Int8FilterBank
    int_means: PairMeans
    symmetric_int: Int8FilterBank
    biased_comp: BiasedCompFilterBank
    store: CompFilterStore

    @property
    def flagged_pairs(self) -> frozenset:
        return self.symmetric_int.flagged_pairs

    def complementize_l1(self) -> int:
        return int(np.abs(self.biased_comp.weights.astype(np.int16)
                          - self.symmetric_int.weights.astype(np.int16)).sum())


def fcc_transform(bank) -> FccResult:
    """Float or INT8 bank -> biased-comp bank and comp store.

    float: means -> symmetrize -> quantize -> integer means -> symmetrize
    -> complementize -> decompose. INT8 input skips the float stages.
    """
    if isinstance(bank, FloatFilterBank):
        fmeans = compute_pair_means(bank)
        fsym = symmetrize(bank, fmeans)
        q = quantize(fsym)
    else:
        fmeans, fsym, q = None, None, bank
    imeans = compute_pair_means(q)
    isym = symmetrize(q, imeans, repair=True)
    bc = complementize(isym, imeans)
    store = decompose(bc)
    return FccResult(bank, fmeans, fsym, q, imeans, isym, bc, store)
