"""Layer-to-layer execution and the differential checker behind the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ddct
from .datapath import run_schedule
from .fcc import (BiasedCompFilterBank, CompFilterStore, FloatFilterBank, Int8FilterBank, PairMeans,
                  fcc_transform, quantize, reconstruct, verify_complementarity)
from .mapper import ACTIVATION_BUFFER_BYTES, CONFIGS, map_layer
from .oracle import LayerSpec, conv_direct


class WeightsMissing(FileNotFoundError):
    pass


class BufferOverflow(ValueError):
    pass


def uses_fcc(spec: LayerSpec) -> bool:
    return spec.fcc_enabled and spec.kind != "fc"


def _path(d, layer_id, suffix) -> Path:
    return Path(d) / f"{layer_id}.{suffix}.ddct"


def load_bank(path, layer_id: str = "layer", fcc_enabled: bool = True):
    """Raw weights file (float32 or int8) as a filter bank."""
    w = ddct.read(path)
    if w.ndim != 4:
        raise ValueError(f"{path}: weights must be [N][C][K][K], got {w.shape}")
    if w.dtype == np.float32:
        return FloatFilterBank(w.astype(np.float64), layer_id, fcc_enabled)
    if w.dtype == np.int8:
        return Int8FilterBank(w, 1.0, layer_id, fcc_enabled)
    raise ValueError(f"{path}: weights must be float32 or int8, got {w.dtype}")


def transform_layer(spec_id: str, bank, fcc: bool, out_dir) -> dict:
    """Write the transformed files for one layer; returns its report entry."""
    out_dir = Path(out_dir)
    if not fcc:
        q = quantize(bank) if isinstance(bank, FloatFilterBank) else bank
        ddct.write(_path(out_dir, spec_id, "int8"), q.weights, np.int8)
        return {"fcc": False, "scale": float(q.scale)}
    res = fcc_transform(bank)
    ddct.write(_path(out_dir, spec_id, "bc"), res.biased_comp.weights, np.int8)
    ddct.write(_path(out_dir, spec_id, "comp"), res.store.stored, np.int8)
    ddct.write(_path(out_dir, spec_id, "means"), res.store.means.means, np.int16)
    n_el = res.biased_comp.weights.size
    return {
        "fcc": True,
        "scale": float(res.quantized.scale),
        "pairs": int(res.store.stored.shape[0]),
        "flagged_pairs": sorted(res.flagged_pairs),
        "complementize_l1": res.complementize_l1(),
        "complementize_l1_per_element": res.complementize_l1() / n_el,
        "symmetrize_l1": int(np.abs(res.symmetric_int.weights.astype(np.int16)
                                    - res.quantized.weights.astype(np.int16)).sum()),
    }


def load_layer_weights(spec: LayerSpec, weights_dir):
    """The store (FCC layers) or INT8 bank a layer is mapped from."""
    if uses_fcc(spec):
        comp, means = _path(weights_dir, spec.layer_id, "comp"), _path(weights_dir, spec.layer_id, "means")
        if not comp.exists() or not means.exists():
            raise WeightsMissing(f"{spec.layer_id}: missing {comp.name} or {means.name}")
        store = CompFilterStore(ddct.read(comp).astype(np.int8),
                                PairMeans(ddct.read(means).astype(np.int64)), layer_id=spec.layer_id)
        if store.stored.shape != (spec.N // 2,) + spec.bank_shape[1:]:
            raise ValueError(f"{spec.layer_id}: stored filters {store.stored.shape} do not fit the layer")
        return store
    p = _path(weights_dir, spec.layer_id, "int8")
    if not p.exists():
        raise WeightsMissing(f"{spec.layer_id}: missing {p.name}")
    w = ddct.read(p)
    if w.shape != spec.bank_shape:
        raise ValueError(f"{spec.layer_id}: weights {w.shape} do not fit the layer {spec.bank_shape}")
    return Int8FilterBank(w.astype(np.int8), 1.0, spec.layer_id, False)


def reference_bank(spec: LayerSpec, weights_dir, weights) -> np.ndarray:
    """Independent reference weights: the biased-comp file when present."""
    if uses_fcc(spec):
        bc = _path(weights_dir, spec.layer_id, "bc") if weights_dir is not None else None
        if bc is not None and bc.exists():
            return ddct.read(bc)
        return reconstruct(weights).weights
    return weights.weights


def requantize(acc, shift: int) -> np.ndarray:
    """Arithmetic right shift then saturate to int8."""
    return np.clip(np.asarray(acc, dtype=np.int64) >> shift, -128, 127).astype(np.int8)


def layer_input(x, spec: LayerSpec) -> np.ndarray:
    x = np.asarray(x)
    if spec.kind == "fc":
        if x.size != spec.C:
            raise ValueError(f"{spec.layer_id}: fc expects {spec.C} inputs, got {x.size}")
        return x.reshape(spec.input_shape)
    if x.shape != spec.input_shape:
        raise ValueError(f"{spec.layer_id}: input {x.shape} != expected {spec.input_shape}")
    return x


def run_layer(spec: LayerSpec, weights, x, config: str = "full") -> np.ndarray:
    return run_schedule(map_layer(spec, weights, CONFIGS[config]), x)


@dataclass
class NetworkRun:
    output: np.ndarray
    accumulators: dict = field(default_factory=dict)  # layer_id -> int32 output


def simulate_network(layers, weights: dict, x, config: str = "full",
                     buffer_bytes: int = ACTIVATION_BUFFER_BYTES) -> NetworkRun:
    """Chain layers, requantizing every output by its layer's shift."""
    run = NetworkRun(np.asarray(x))
    act = np.asarray(x).astype(np.int8)
    for spec in layers:
        act = layer_input(act, spec)
        out_bytes = int(np.prod(spec.output_shape))
        if act.nbytes > buffer_bytes or out_bytes > buffer_bytes:
            raise BufferOverflow(f"{spec.layer_id}: activations ({act.nbytes} in, {out_bytes} out bytes) "
                                 f"exceed the {buffer_bytes} B ping-pong buffer")
        acc = run_layer(spec, weights[spec.layer_id], act, config)
        run.accumulators[spec.layer_id] = acc
        act = requantize(acc, spec.shift)
    run.output = act
    return run


@dataclass
class Mismatch:
    layer_id: str
    trial: int
    channel: int
    y: int
    x: int
    expected: int
    got: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class LayerCheck:
    layer_id: str
    trials: int
    complementarity: list = field(default_factory=list)  # failure tuples
    mismatch: Mismatch | None = None
    case: dict | None = None

    @property
    def passed(self) -> bool:
        return not self.complementarity and self.mismatch is None


def _minimal_case(spec: LayerSpec, x, ref, m: Mismatch) -> dict:
    """The single receptive field and filter that produce the bad output."""
    p = spec.pad
    xp = np.pad(np.asarray(x, dtype=np.int64), ((0, 0), (p, p), (p, p)))
    y0, x0 = m.y * spec.stride, m.x * spec.stride
    field_ = xp[:, y0:y0 + spec.K, x0:x0 + spec.K]
    if spec.kind == "dw":
        field_ = field_[m.channel:m.channel + 1]
    return {"mismatch": m.to_dict(), "layer": {"kind": spec.kind, "K": spec.K, "C": spec.C,
                                               "stride": spec.stride, "pad": spec.pad},
            "window": field_.tolist(), "filter": np.asarray(ref[m.channel]).astype(int).tolist()}


def validate_layer(spec: LayerSpec, weights_dir, trials: int, rng: np.random.Generator,
                   config: str = "full") -> LayerCheck:
    weights = load_layer_weights(spec, weights_dir)
    ref = reference_bank(spec, weights_dir, weights)
    chk = LayerCheck(spec.layer_id, trials)
    if uses_fcc(spec):
        bc = BiasedCompFilterBank(np.asarray(ref, dtype=np.int8), PairMeans(weights.means.means.copy()))
        chk.complementarity = verify_complementarity(weights, bc).failures
    for t in range(trials):
        x = rng.integers(-128, 128, size=spec.input_shape).astype(np.int8)
        want = conv_direct(x, ref, spec)
        got = run_layer(spec, weights, x, config)
        bad = np.argwhere(got != want)
        if len(bad):
            c, yy, xx = (int(v) for v in bad[0])
            chk.mismatch = Mismatch(spec.layer_id, t, c, yy, xx, int(want[c, yy, xx]), int(got[c, yy, xx]))
            chk.case = _minimal_case(spec, x, ref, chk.mismatch)
            break
    return chk
