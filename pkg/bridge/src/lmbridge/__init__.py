"""HTTP bridge exposing a causal LM's final logits, early-exit layer
projections, and attention-head masking."""

from .app import create_app
from .config import BridgeConfig, ConfigError, load_heads_file
from .model import ModelRunner, RequestRangeError

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "ConfigError",
    "ModelRunner",
    "RequestRangeError",
    "create_app",
    "load_heads_file",
    "__version__",
]
