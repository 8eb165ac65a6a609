"""CCN - collaborative contrastive network for trigger-induced CTR prediction."""

from .config import CCNConfig, ConfigLoader, get_config_loader
from .errors import CCNError
from .models.variant import ModelVariant
from .network.ctr_model import CCNModel, predict_ctr

__version__ = "0.1.0"

__all__ = [
    "CCNConfig",
    "ConfigLoader",
    "get_config_loader",
    "CCNError",
    "ModelVariant",
    "CCNModel",
    "predict_ctr",
]
