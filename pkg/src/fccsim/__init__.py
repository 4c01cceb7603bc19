"""FCC weight transform, bit-level PIM macro model, mapper and cycle model."""

from .fcc import (BiasedCompFilterBank, CompFilterStore, FloatFilterBank, Int8FilterBank, PairMeans,
                  fcc_transform, verify_complementarity)
from .macro import PimMacro
from .mapper import CONFIGS, LADDER, FeatureConfig, map_layer
from .oracle import LayerSpec, conv_direct
from .timing import network_report, plan_network

__version__ = "0.1.0"

__all__ = [
    "BiasedCompFilterBank", "CompFilterStore", "FloatFilterBank", "Int8FilterBank", "PairMeans",
    "fcc_transform", "verify_complementarity", "PimMacro", "CONFIGS", "LADDER", "FeatureConfig",
    "map_layer", "LayerSpec", "conv_direct", "network_report", "plan_network",
]
