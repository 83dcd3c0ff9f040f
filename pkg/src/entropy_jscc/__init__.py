"""Deep joint source-channel coding with entropy-aware adaptive rate control."""

from .config import Config, load_config
from .models import JSCCModel, load_model
from .pipeline import run_batch, transmit_image

__all__ = ["Config", "JSCCModel", "load_config", "load_model", "run_batch", "transmit_image"]
__version__ = "0.1.0"
