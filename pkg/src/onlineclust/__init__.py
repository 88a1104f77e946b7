"""Streaming Gaussian-mixture clustering with merge/split model evolution and density-based distillation."""
from .engine import EngineConfig, OnlineClusterer, TriggerEvent, Variant
from .gaussian import GaussianComponent
from .merge import MergeConfig
from .mixture import ClusterModel
from .split import SplitConfig
from .streams import Observation, SynthConfig, load_dataset, order_stream, synth_generate

__all__ = [
    "EngineConfig",
    "OnlineClusterer",
    "TriggerEvent",
    "Variant",
    "GaussianComponent",
    "MergeConfig",
    "ClusterModel",
    "SplitConfig",
    "Observation",
    "SynthConfig",
    "load_dataset",
    "order_stream",
    "synth_generate",
]

__version__ = "0.1.0"
