"""Lower a layer onto the four macros.

Dense layers (std/pw/fc) are tiled output-channel-major across macros and
then by depth across rows: each compute pass feeds one 32-element slice of
the im2col column to every compartment (same row in all of them), and every
macro holds a different group of filters. dw layers place a whole kernel in
compartments 0..K*K-1 (and 16.. for the second quad) of macro 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fcc import CompFilterStore, Int8FilterBank, PairingError, PairMeans, reconstruct
from .macro import COMPARTMENTS, ROWS, TREE_SIZE, Mode, ReconfigMode, pack_row
from .oracle import LayerError, LayerSpec
from .schedule import TIED_LOW, ComputePass, Drain, Lane, LoadRows, Schedule

N_MACROS = 4
WEIGHT_MEMORY_BYTES = 256 * 1024
ACTIVATION_BUFFER_BYTES = 64 * 1024  # one half of the 128 KB ping-pong memory
MEAN_BYTES = 2  # pair means are carried as int16


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    fcc_std_pw: bool = True
    fcc_dw_dbis: bool = True
    reconfig_unit: bool = True

    def __post_init__(self):
        if self.reconfig_unit and not self.fcc_dw_dbis:
            raise ValueError("the reconfigurable unit only pays off with FCC+DBIS for dw-conv")


CONFIGS = {
    "baseline": FeatureConfig(False, False, False),
    "fcc": FeatureConfig(True, False, False),
    "fcc+dbis": FeatureConfig(True, True, False),
    "full": FeatureConfig(True, True, True),
}
LADDER = ("baseline", "fcc", "fcc+dbis", "full")


def _flat(w) -> np.ndarray:
    w = np.asarray(w)
    return w.reshape(w.shape[0], -1).astype(np.int64)


def _row_images(wa, wb) -> list:
    """Vectorized :func:`pack_row` over two weight vectors."""
    return ((np.asarray(wa, np.int64) & 0xFF) | ((np.asarray(wb, np.int64) & 0xFF) << 8)).tolist()


def _map_dense(spec: LayerSpec, groups, mode: Mode, recover: bool, means=None) -> Schedule:
    """Shared std/pw/fc tiler.

    ``groups`` is a list of ``(weights_a[D], weights_b[D], outputs)`` where
    outputs is ``[(unit, channel), ...]``. Group ``g`` goes to macro
    ``g % 4``; a set of four groups shares every compute pass.
    """
    D = spec.window_len
    n_tiles = math.ceil(D / COMPARTMENTS)
    n_sets = math.ceil(len(groups) / N_MACROS)
    P = spec.out_hw[0] * spec.out_hw[1]
    units = [(s, t) for s in range(n_sets) for t in range(n_tiles)]
    images = [_row_images(wa, wb) for wa, wb, _ in groups]
    steps = []
    for c0 in range(0, len(units), ROWS):
        chunk = units[c0:c0 + ROWS]
        for m in range(N_MACROS):
            for row, (s, t) in enumerate(chunk):
                g = s * N_MACROS + m
                if g >= len(groups):
                    continue
                d0 = t * COMPARTMENTS
                n = min(COMPARTMENTS, D - d0)
                steps.append(LoadRows(m, row, tuple(enumerate(images[g][d0:d0 + n]))))
        for row, (s, t) in enumerate(chunk):
            d0 = t * COMPARTMENTS
            n = min(COMPARTMENTS, D - d0)
            idx = tuple(d0 + c if c < n else TIED_LOW for c in range(COMPARTMENTS))
            lanes = []
            for m in range(N_MACROS):
                g = s * N_MACROS + m
                if g >= len(groups):
                    continue
                outs = tuple((u, -1, ch) for u, ch in groups[g][2])
                lanes.append(Lane(m, row, idx, idx if mode is Mode.DOUBLE else None, outs))
            steps.append(ComputePass(mode.value, ReconfigMode.COMBINED.value, 0,
                                     tuple(lanes), (0, P)))
            if t == n_tiles - 1:
                chans = [ch for m in range(N_MACROS) if s * N_MACROS + m < len(groups)
                         for _, ch in groups[s * N_MACROS + m][2]]
                steps.append(Drain(tuple(sorted(chans))))
    return Schedule(spec, steps, recover, means)


def _check_bank(spec: LayerSpec, w) -> None:
    if tuple(w.shape) != spec.bank_shape:
        raise LayerError(f"{spec.layer_id}: weights {tuple(w.shape)} != expected {spec.bank_shape}")


def _check_store(spec: LayerSpec, store: CompFilterStore) -> None:
    if spec.N % 2:
        raise PairingError(f"{spec.layer_id}: FCC needs even N, got {spec.N}")
    _check_bank(spec, np.empty((store.n_filters,) + store.stored.shape[1:]))


def _quads(store: CompFilterStore, N: int):
    """Stored filters 2q (slot A) and 2q+1 (slot B) carry channels 4q..4q+3."""
    st = _flat(store.stored)
    zero = np.zeros(st.shape[1], dtype=np.int64)
    quads = []
    for q in range(math.ceil(st.shape[0] / 2)):
        wa = st[2 * q]
        wb = st[2 * q + 1] if 2 * q + 1 < st.shape[0] else zero
        chans = [(u, 4 * q + u) for u in range(4) if 4 * q + u < N]
        quads.append((wa, wb, chans))
    return quads


def map_std_pw(store: CompFilterStore, spec: LayerSpec) -> Schedule:
    """FCC std/pw: double mode, INP == INN, four logical filters per row."""
    if spec.kind not in ("std", "pw"):
        raise MappingError(f"map_std_pw got a {spec.kind} layer")
    if not spec.fcc_enabled:
        raise MappingError(f"{spec.layer_id}: layer has FCC disabled")
    _check_store(spec, store)
    return _map_dense(spec, _quads(store, spec.N), Mode.DOUBLE, True,
                      tuple(int(m) for m in store.means.means))


def map_regular(bank, spec: LayerSpec) -> Schedule:
    """Regular computing mode, every filter stored explicitly, recover unit off."""
    w = np.asarray(getattr(bank, "weights", bank))
    _check_bank(spec, w)
    if spec.kind == "dw":
        return _map_dw_regular(w, spec)
    flat = _flat(w)
    zero = np.zeros(flat.shape[1], dtype=np.int64)
    groups = []
    for g in range(math.ceil(spec.N / 2)):
        wb = flat[2 * g + 1] if 2 * g + 1 < spec.N else zero
        outs = [(0, 2 * g)] + ([(2, 2 * g + 1)] if 2 * g + 1 < spec.N else [])
        groups.append((flat[2 * g], wb, outs))
    return _map_dense(spec, groups, Mode.REGULAR, False)


def map_fc(bank, spec: LayerSpec) -> Schedule:
    if spec.kind != "fc":
        raise MappingError(f"map_fc got a {spec.kind} layer")
    return map_regular(bank, spec)


def _dw_taps(spec: LayerSpec) -> int:
    kk = spec.K * spec.K
    if kk > COMPARTMENTS:
        raise MappingError(f"{spec.layer_id}: dw kernel {spec.K}x{spec.K} exceeds {COMPARTMENTS} compartments")
    return kk


def _map_dw_regular(w, spec: LayerSpec) -> Schedule:
    kk = _dw_taps(spec)
    flat = _flat(w)
    P = spec.out_hw[0] * spec.out_hw[1]
    n_pairs = math.ceil(spec.N / 2)
    steps = []
    for r0 in range(0, n_pairs, ROWS):
        pairs = range(r0, min(n_pairs, r0 + ROWS))
        for row, p in enumerate(pairs):
            wa = flat[2 * p]
            wb = flat[2 * p + 1] if 2 * p + 1 < spec.N else np.zeros(kk, dtype=np.int64)
            steps.append(LoadRows(0, row, tuple((t, pack_row(wa[t], wb[t])) for t in range(kk))))
        for row, p in enumerate(pairs):
            for slot, unit in ((0, 0), (1, 2)):
                ch = 2 * p + slot
                if ch >= spec.N:
                    continue
                idx = tuple(ch * kk + c if c < kk else TIED_LOW for c in range(COMPARTMENTS))
                lane = Lane(0, row, idx, None, ((unit, -1, ch),))
                steps.append(ComputePass(Mode.REGULAR.value, ReconfigMode.COMBINED.value, 0,
                                         (lane,), (0, P)))
            steps.append(Drain(tuple(ch for ch in (2 * p, 2 * p + 1) if ch < spec.N)))
    return Schedule(spec, steps, False)


def map_dw(store, spec: LayerSpec, dbis: bool = True, reconfig: bool = True) -> Schedule:
    """dw-conv mapping.

    With DBIS, INP and INN carry the inputs of channels 4q and 4q+1 (stage 0)
    or 4q+2 and 4q+3 (stage 1). With the reconfigurable unit and K*K <= 16 a
    second quad sits at compartment 16 and the two adder trees report
    separately. Without DBIS every filter is stored and regular mode is used.
    """
    if spec.kind != "dw":
        raise MappingError(f"map_dw got a {spec.kind} layer")
    if reconfig and not dbis:
        raise MappingError("the reconfigurable dw mapping requires DBIS")
    if not dbis:
        bank = reconstruct(store) if isinstance(store, CompFilterStore) else store
        return map_regular(bank, spec)
    if not isinstance(store, CompFilterStore):
        raise MappingError("DBIS dw mapping needs a complementary filter store")
    if not spec.fcc_enabled:
        raise MappingError(f"{spec.layer_id}: layer has FCC disabled")
    _check_store(spec, store)
    kk = _dw_taps(spec)
    two_quads = reconfig and kk <= TREE_SIZE
    per_row = 2 if two_quads else 1
    offsets = (0, TREE_SIZE)[:per_row]
    quads = _quads(store, spec.N)
    n_rows = math.ceil(len(quads) / per_row)
    P = spec.out_hw[0] * spec.out_hw[1]
    cfg = ReconfigMode.STAGED if two_quads else ReconfigMode.COMBINED
    steps = []
    for r0 in range(0, n_rows, ROWS):
        rows = range(r0, min(n_rows, r0 + ROWS))
        for row, r in enumerate(rows):
            images = []
            for k, off in enumerate(offsets):
                q = r * per_row + k
                if q < len(quads):
                    wa, wb, _ = quads[q]
                    images += [(off + t, pack_row(wa[t], wb[t])) for t in range(kk)]
            steps.append(LoadRows(0, row, tuple(images)))
        for row, r in enumerate(rows):
            drained = []
            for stage in (0, 1):
                inp = [TIED_LOW] * COMPARTMENTS
                inn = [TIED_LOW] * COMPARTMENTS
                outs = []
                for k, off in enumerate(offsets):
                    q = r * per_row + k
                    if q >= len(quads):
                        continue
                    tree = k if two_quads else -1
                    ch_p, ch_n = 4 * q + 2 * stage, 4 * q + 2 * stage + 1
                    for unit, ch in ((2 * stage, ch_p), (2 * stage + 1, ch_n)):
                        if ch < spec.N:
                            outs.append((unit, tree, ch))
                    for t in range(kk):
                        if ch_p < spec.N:
                            inp[off + t] = ch_p * kk + t
                        if ch_n < spec.N:
                            inn[off + t] = ch_n * kk + t
                if not outs:
                    continue
                lane = Lane(0, row, tuple(inp), tuple(inn), tuple(outs))
                steps.append(ComputePass(Mode.DOUBLE.value, cfg.value, stage, (lane,), (0, P)))
                drained += [ch for _, _, ch in outs]
            steps.append(Drain(tuple(sorted(drained))))
    return Schedule(spec, steps, True, tuple(int(m) for m in store.means.means))


def map_layer(spec: LayerSpec, weights, config: FeatureConfig) -> Schedule:
    """Pick the mapping a layer gets under a feature configuration.

    ``weights`` is a :class:`CompFilterStore` for FCC layers and an INT8 bank
    (or raw array) otherwise.
    """
    if spec.kind == "fc" or not spec.fcc_enabled:
        if isinstance(weights, CompFilterStore):
            weights = reconstruct(weights)
        return map_fc(weights, spec) if spec.kind == "fc" else map_regular(weights, spec)
    if not isinstance(weights, CompFilterStore):
        raise MappingError(f"{spec.layer_id}: FCC layer needs a complementary filter store")
    if spec.kind == "dw":
        return map_dw(weights, spec, dbis=config.fcc_dw_dbis, reconfig=config.reconfig_unit)
    if config.fcc_std_pw:
        return map_std_pw(weights, spec)
    return map_regular(reconstruct(weights), spec)


def placeholder_weights(spec: LayerSpec):
    """All-zero weights of the right form, for cycle accounting without real data."""
    if spec.fcc_enabled and spec.kind != "fc":
        if spec.N % 2:
            raise PairingError(f"{spec.layer_id}: FCC needs even N, got {spec.N}")
        shape = (spec.N // 2,) + spec.bank_shape[1:]
        return CompFilterStore(np.zeros(shape, np.int8), PairMeans(np.zeros(spec.N // 2, np.int64)))
    return Int8FilterBank(np.zeros(spec.bank_shape, np.int8), fcc_enabled=False)


def transfer_bytes(spec: LayerSpec) -> int:
    """Weight bytes moved from DRAM for one layer."""
    per_filter = spec.window_len
    if spec.fcc_enabled and spec.kind != "fc":
        half = math.ceil(spec.N / 2)
        return half * per_filter + MEAN_BYTES * half
    return spec.N * per_filter


@dataclass
class WeightMemoryModel:
    capacity: int = WEIGHT_MEMORY_BYTES
    resident: list = field(default_factory=list)  # [(layer_id, chunk, bytes)]
    events: list = field(default_factory=list)
    streamed: list = field(default_factory=list)  # layers split into several chunks
    unmasked: list = field(default_factory=list)  # loads that could not overlap compute
    peak: int = 0

    @property
    def used(self) -> int:
        return sum(b for _, _, b in self.resident)


def plan_prefetch(layers, sizes=None, capacity: int = WEIGHT_MEMORY_BYTES) -> WeightMemoryModel:
    """Load/evict trace for a layer sequence.

    Chunk i+1 is fetched while chunk i computes, so at most two chunks are
    resident. A layer larger than the capacity is streamed in chunks of at
    most half the capacity, cut at whole-filter boundaries. Events are
    ``(action, layer_id, chunk, bytes, during)`` where ``during`` names the
    chunk computing at the time (None when the load cannot be hidden).
    """
    layers = list(layers)
    sizes = [transfer_bytes(l) for l in layers] if sizes is None else list(sizes)
    mem = WeightMemoryModel(capacity)
    half = capacity // 2
    timeline = []
    for spec, size in zip(layers, sizes):
        if size <= capacity:
            timeline.append((spec.layer_id, 0, size))
            continue
        fcc = spec.fcc_enabled and spec.kind != "fc"
        unit = spec.window_len + (MEAN_BYTES if fcc else 0)
        if unit > half:
            raise MappingError(f"{spec.layer_id}: smallest streamable tile ({unit} B) exceeds {half} B")
        per_chunk = (half // unit) * unit
        n = math.ceil(size / per_chunk)
        for k in range(n):
            timeline.append((spec.layer_id, k, min(per_chunk, size - k * per_chunk)))
        mem.streamed.append(spec.layer_id)

    for i, item in enumerate(timeline):
        computing = mem.resident[-1] if mem.resident else None
        for old in [r for r in mem.resident if r is not computing]:
            mem.resident.remove(old)
            mem.events.append(("evict",) + old + (computing[:2] if computing else None,))
        during = computing[:2] if computing else None
        if computing is not None and computing[2] + item[2] > capacity:
            mem.resident.remove(computing)
            mem.events.append(("evict",) + computing + (None,))
            mem.unmasked.append(item[:2])
            during = None
        mem.resident.append(item)
        mem.events.append(("load",) + item + (during,))
        mem.peak = max(mem.peak, mem.used)
    return mem
