"""Bit-level behavioral model of one PIM macro.

Geometry: 32 compartments x 64 rows x 16 columns of 6T cells. Only Q is
stored; Q-bar is the bitwise NOT, produced on read/compute. A row image packs
two 8-bit weights, LSB first: bits 0..7 = weight A, bits 8..15 = weight B.

Compute results are laid out per compartment. Regular mode yields 16 bits
(column k = Q[k] & INP). Double mode yields 32 bits where index 2k is
Q[k] & INP and index 2k+1 is ~Q[k] & INN.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

COMPARTMENTS = 32
ROWS = 64
COLS = 16
WEIGHT_BITS = 8
TREE_SIZE = 16  # compartments per adder tree

ARRAY_BITS = COMPARTMENTS * ROWS * COLS
WEIGHT_CAPACITY_BITS = 2 * ARRAY_BITS  # Q and Q-bar both carry weights
WEIGHT_DENSITY_RATIO = WEIGHT_CAPACITY_BITS / ARRAY_BITS

# adder unit -> (weight slot, path); slot 0 = A (cols 0-7), 1 = B; path 0 = Q/INP, 1 = Q-bar/INN
UNIT_SLOT_PATH = {0: (0, 0), 1: (0, 1), 2: (1, 0), 3: (1, 1)}
STAGE_UNITS = {0: (0, 1), 1: (2, 3)}


class Mode(str, Enum):
    NORMAL = "normal"
    REGULAR = "regular"
    DOUBLE = "double"


class ReconfigMode(str, Enum):
    COMBINED = "combined"
    SPLIT = "split"
    STAGED = "staged"


class MacroError(RuntimeError):
    pass


class ModeError(MacroError):
    pass


class ActivationError(MacroError):
    pass


def unit_columns(unit: int, double: bool = True) -> np.ndarray:
    """Result-vector indices holding weight bits 0..7 of an adder unit."""
    slot, path = UNIT_SLOT_PATH[unit]
    k = np.arange(WEIGHT_BITS) + WEIGHT_BITS * slot
    if not double:
        if path:
            raise MacroError(f"adder unit {unit} reads Q-bar, which regular mode disables")
        return k
    return 2 * k + path


def image_to_bits(image: int) -> np.ndarray:
    if not 0 <= int(image) <= 0xFFFF:
        raise ValueError(f"row image {image:#x} is not 16 bits")
    return ((int(image) >> np.arange(COLS)) & 1).astype(np.uint8)


def bits_to_image(bits) -> int:
    return int((np.asarray(bits, dtype=np.int64) << np.arange(COLS)).sum())


def pack_row(a: int, b: int = 0) -> int:
    """Pack two int8 weights into a 16-bit row image (A low byte)."""
    return (int(a) & 0xFF) | ((int(b) & 0xFF) << 8)


def unpack_row(image: int) -> tuple[int, int]:
    a, b = image & 0xFF, (image >> 8) & 0xFF
    return (a - 256 if a > 127 else a), (b - 256 if b > 127 else b)


class PimMacro:
    """One macro's Q storage plus its compute modes.

    Single-owner mutable state: do not share an instance between threads.
    """

    def __init__(self, index: int = 0):
        self.index = index
        self.q_bits = np.zeros((COMPARTMENTS, ROWS, COLS), dtype=np.uint8)
        self.mode = Mode.NORMAL

    def set_mode(self, mode) -> None:
        self.mode = Mode(mode)

    def _check_addr(self, compartment: int, row: int) -> None:
        if not 0 <= compartment < COMPARTMENTS:
            raise IndexError(f"compartment {compartment} out of range")
        if not 0 <= row < ROWS:
            raise IndexError(f"row {row} out of range")

    def write_row(self, compartment: int, row: int, image: int) -> None:
        if self.mode is not Mode.NORMAL:
            raise ModeError(f"write in {self.mode.value} mode; switch to normal SRAM mode first")
        self._check_addr(compartment, row)
        self.q_bits[compartment, row] = image_to_bits(image)

    def read_row(self, compartment: int, row: int) -> int:
        if self.mode is not Mode.NORMAL:
            raise ModeError(f"read in {self.mode.value} mode")
        self._check_addr(compartment, row)
        return bits_to_image(self.q_bits[compartment, row])

    def read_row_complement(self, compartment: int, row: int) -> int:
        return self.read_row(compartment, row) ^ 0xFFFF

    def _rows(self, active_rows) -> np.ndarray:
        """One row per compartment; a compartment listing several rows is rejected."""
        if np.isscalar(active_rows):
            rows = [int(active_rows)] * COMPARTMENTS
        else:
            if len(active_rows) != COMPARTMENTS:
                raise ActivationError(f"need one active row for each of {COMPARTMENTS} compartments")
            rows = []
            for c, r in enumerate(active_rows):
                if not np.isscalar(r):
                    if len(r) != 1:
                        raise ActivationError(
                            f"compartment {c}: {len(r)} rows activated, exactly one allowed")
                    r = r[0]
                rows.append(int(r))
        rows = np.asarray(rows)
        if rows.min() < 0 or rows.max() >= ROWS:
            raise IndexError("active row out of range")
        return rows

    def _active_q(self, active_rows) -> np.ndarray:
        rows = self._rows(active_rows)
        return self.q_bits[np.arange(COMPARTMENTS), rows]  # [32][16]

    @staticmethod
    def _inputs(x) -> np.ndarray:
        """Scalar bit (broadcast to every compartment) or ``[..., 32]`` bits."""
        x = np.asarray(x, dtype=np.uint8)
        if x.ndim == 0:
            x = np.full(COMPARTMENTS, x, dtype=np.uint8)
        if x.shape[-1] != COMPARTMENTS:
            raise ValueError(f"input bits must have a trailing axis of {COMPARTMENTS}")
        if x.max(initial=0) > 1:
            raise ValueError("input must be bits")
        return x

    def compute_regular(self, active_rows, inp) -> np.ndarray:
        """``[..., 32, 16]`` result bits: Q AND INP, Q-bar path disabled."""
        if self.mode is not Mode.REGULAR:
            raise ModeError(f"compute_regular in {self.mode.value} mode")
        q = self._active_q(active_rows)
        return q & self._inputs(inp)[..., :, None]

    def compute_double(self, active_rows, inp, inn) -> np.ndarray:
        """``[..., 32, 32]`` result bits: even = Q & INP, odd = ~Q & INN."""
        if self.mode is not Mode.DOUBLE:
            raise ModeError(f"compute_double in {self.mode.value} mode")
        q = self._active_q(active_rows)
        p = self._inputs(inp)[..., :, None]
        n = self._inputs(inn)[..., :, None]
        shape = np.broadcast_shapes(p.shape[:-2], n.shape[:-2]) + (COMPARTMENTS, 2 * COLS)
        out = np.empty(shape, dtype=np.uint8)
        out[..., 0::2] = q & p
        out[..., 1::2] = (1 - q) & n
        return out

    def dump(self) -> np.ndarray:
        return self.q_bits.astype(np.int8)

    def restore(self, bits) -> None:
        bits = np.asarray(bits)
        if bits.shape != self.q_bits.shape or not np.isin(bits, (0, 1)).all():
            raise ValueError(f"macro image must be a {self.q_bits.shape} bit array")
        self.q_bits = bits.astype(np.uint8)


def adder_reduce(bits, config, stage: int | None = None) -> np.ndarray:
    """Population counts over compartments.

    ``bits`` is ``[..., 32, n]``. ``combined`` returns ``[..., n]`` summed over
    all 32 compartments. ``split`` returns ``[..., 2, n]``, one row per adder
    tree (compartments 0-15 and 16-31). ``staged`` is ``split`` with only the
    live pair of adder units (stage 0: units 0/1, stage 1: units 2/3) passing
    their columns; the rest read as zero.
    """
    config = ReconfigMode(config)
    bits = np.asarray(bits)
    if bits.shape[-2] != COMPARTMENTS:
        raise ValueError("bit matrix must have 32 compartment rows")
    if config is ReconfigMode.COMBINED:
        return bits.sum(axis=-2, dtype=np.int64)
    lead = bits.shape[:-2]
    trees = bits.reshape(lead + (2, TREE_SIZE, bits.shape[-1])).sum(axis=-2, dtype=np.int64)
    if config is ReconfigMode.SPLIT:
        return trees
    if stage not in STAGE_UNITS:
        raise ValueError(f"staged reduction needs stage 0 or 1, got {stage}")
    double = bits.shape[-1] == 2 * COLS
    live = np.zeros(bits.shape[-1], dtype=bool)
    for u in STAGE_UNITS[stage]:
        live[unit_columns(u, double)] = True
    return np.where(live, trees, 0)


class ReconfigurableUnit:
    """Four adder units of two trees each; staged mode alternates unit pairs per call."""

    def __init__(self):
        self.stage = 0

    def reduce(self, bits, config) -> np.ndarray:
        config = ReconfigMode(config)
        if config is not ReconfigMode.STAGED:
            return adder_reduce(bits, config)
        out = adder_reduce(bits, config, self.stage)
        self.stage ^= 1
        return out
