"""Network spec files (JSON) and the CIFAR-10 shape tables for the shipped networks."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .mapper import CONFIGS, FeatureConfig
from .oracle import LayerError, LayerSpec

LAYER_KEYS = ("id", "kind", "H", "W", "C", "N", "K", "stride", "pad", "fcc_enabled", "shift", "post")


class NetSpecError(ValueError):
    pass


@dataclass
class NetSpec:
    name: str
    layers: list
    config: FeatureConfig | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"network": self.name, "layers": [_layer_dict(l) for l in self.layers]}
        if self.config is not None:
            d["config"] = asdict(self.config)
        if self.meta:
            d["meta"] = self.meta
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def layer(self, layer_id: str) -> LayerSpec:
        for l in self.layers:
            if l.layer_id == layer_id:
                return l
        raise KeyError(layer_id)


def _layer_dict(l: LayerSpec) -> dict:
    return {"id": l.layer_id, "kind": l.kind, "H": l.H, "W": l.W, "C": l.C, "N": l.N, "K": l.K,
            "stride": l.stride, "pad": l.pad, "fcc_enabled": l.fcc_enabled, "shift": l.shift,
            "post": l.post}


def layer_from_dict(d: dict) -> LayerSpec:
    unknown = set(d) - set(LAYER_KEYS)
    if unknown:
        raise NetSpecError(f"unknown layer keys {sorted(unknown)}")
    try:
        return LayerSpec(kind=d["kind"], H=int(d["H"]), W=int(d["W"]), C=int(d["C"]), N=int(d["N"]),
                         K=int(d.get("K", 1)), stride=int(d.get("stride", 1)), pad=int(d.get("pad", 0)),
                         fcc_enabled=bool(d.get("fcc_enabled", d["kind"] != "fc")),
                         layer_id=str(d["id"]), shift=int(d.get("shift", 0)), post=d.get("post", "none"))
    except KeyError as e:
        raise NetSpecError(f"layer entry missing {e}") from None
    except LayerError as e:
        raise NetSpecError(str(e)) from None


def parse_netspec(text: str) -> NetSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetSpecError(f"netspec is not valid JSON: {e}") from None
    if "network" not in d or "layers" not in d:
        raise NetSpecError("netspec needs 'network' and 'layers'")
    layers = [layer_from_dict(l) for l in d["layers"]]
    ids = [l.layer_id for l in layers]
    if len(set(ids)) != len(ids):
        raise NetSpecError("layer ids must be unique")
    cfg = d.get("config")
    if isinstance(cfg, str):
        cfg = CONFIGS[cfg]
    elif cfg is not None:
        cfg = FeatureConfig(**cfg)
    return NetSpec(d["network"], layers, cfg, d.get("meta", {}))


def load_netspec(path) -> NetSpec:
    return parse_netspec(Path(path).read_text())


def default_shift(window_len: int) -> int:
    """Right shift bringing a K*K*C-term int8 dot product back to int8 scale."""
    return 7 + math.ceil(math.log2(window_len) / 2)


class _Builder:
    def __init__(self, h: int):
        self.h = h
        self.layers = []

    def add(self, name, kind, C, N, K=1, stride=1, h=None):
        h = self.h if h is None else h
        fcc = kind != "fc"
        spec = LayerSpec(kind, h, h, C, N, K, stride, K // 2, fcc, name,
                         default_shift(K * K * (1 if kind == "dw" else C)))
        self.layers.append(spec)
        if h == self.h:
            self.h = spec.out_hw[0]
        return spec


def mobilenetv2_cifar10() -> NetSpec:
    """MobileNetV2 (width 1.0) at 32x32: stem and second stage use stride 1."""
    b = _Builder(32)
    b.add("conv0", "std", 3, 32, K=3)
    cfg = [(1, 16, 1, 1), (6, 24, 2, 1), (6, 32, 3, 2), (6, 64, 4, 2),
           (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    c, blk = 32, 0
    for t, out, n, s in cfg:
        for i in range(n):
            hid = c * t
            if t != 1:
                b.add(f"b{blk}_expand", "pw", c, hid)
            b.add(f"b{blk}_dw", "dw", hid, hid, K=3, stride=s if i == 0 else 1)
            b.add(f"b{blk}_project", "pw", hid, out)
            c, blk = out, blk + 1
    b.add("conv_last", "pw", c, 1280)
    b.add("fc", "fc", 1280, 10, h=1)
    return NetSpec("mobilenetv2-cifar10", b.layers,
                   meta={"source": "torchvision MobileNetV2 shapes, CIFAR-10 strides"})


def efficientnet_b0_cifar10() -> NetSpec:
    """EfficientNet-B0 at 32x32 with squeeze-excitation 1x1 convs; stem and stage 2 stride 1."""
    b = _Builder(32)
    b.add("conv0", "std", 3, 32, K=3)
    cfg = [(1, 16, 1, 3, 1), (6, 24, 2, 3, 1), (6, 40, 2, 5, 2), (6, 80, 3, 3, 2),
           (6, 112, 3, 5, 1), (6, 192, 4, 5, 2), (6, 320, 1, 3, 1)]
    c, blk = 32, 0
    for t, out, n, k, s in cfg:
        for i in range(n):
            hid = c * t
            if t != 1:
                b.add(f"b{blk}_expand", "pw", c, hid)
            b.add(f"b{blk}_dw", "dw", hid, hid, K=k, stride=s if i == 0 else 1)
            se = max(1, int(c * 0.25))
            b.add(f"b{blk}_se_reduce", "pw", hid, se, h=1)
            b.add(f"b{blk}_se_expand", "pw", se, hid, h=1)
            b.add(f"b{blk}_project", "pw", hid, out)
            c, blk = out, blk + 1
    b.add("conv_last", "pw", c, 1280)
    b.add("fc", "fc", 1280, 10, h=1)
    return NetSpec("efficientnet-b0-cifar10", b.layers,
                   meta={"source": "EfficientNet-B0 shapes, CIFAR-10 strides"})


BUILTIN = {"mobilenetv2": mobilenetv2_cifar10, "efficientnet-b0": efficientnet_b0_cifar10}


def builtin_path(name: str):
    return resources.files("fccsim") / "networks" / f"{name}.json"


def load_builtin(name: str) -> NetSpec:
    return parse_netspec(builtin_path(name).read_text())


def fixture_path(name: str):
    """Path of a data file shipped in the package's fixtures directory."""
    return resources.files("fccsim") / "fixtures" / name
