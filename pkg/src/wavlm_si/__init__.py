"""Compact speech-interruption classifier: inference engine, compression,
int8 quantization, cost analysis, ROC metrics and deployment arithmetic."""
from .config import CLASS_NAMES, PRESETS, ModelConfig, QuantPolicy, load_config, preset
from .errors import WavLMSIError
from .model import ClassScores, ClipInput, Model, build_model, infer, random_clip

__all__ = [
    "CLASS_NAMES",
    "PRESETS",
    "ClassScores",
    "ClipInput",
    "Model",
    "ModelConfig",
    "QuantPolicy",
    "WavLMSIError",
    "build_model",
    "infer",
    "load_config",
    "preset",
    "random_clip",
]
