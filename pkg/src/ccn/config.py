"""
Configuration Loader for CCN

Loads and validates the YAML configuration (config/ccn.yaml plus optional
presets under config/presets/) using Pydantic. One section per module;
unknown keys are rejected everywhere.
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .models.variant import ModelVariant

logger = logging.getLogger(__name__)


# ==============================================================================
# PYDANTIC MODELS FOR VALIDATION
# ==============================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class SchemaConfig(_Section):
    """Feature schema: hash-bucket counts per categorical family."""
    item_buckets: int = Field(1000, ge=1)
    category_buckets: int = Field(100, ge=1)
    seller_buckets: int = Field(200, ge=1)
    user_buckets: int = Field(5000, ge=1)
    # one entry per user profile field (stand-in schema: age band, gender band)
    profile_buckets: List[int] = Field(default_factory=lambda: [10, 4])

    @field_validator("profile_buckets")
    def validate_profile_buckets(cls, v):
        if any(b < 1 for b in v):
            raise ValueError("profile bucket counts must be >= 1")
        return v

    @property
    def profile_fields(self) -> int:
        return len(self.profile_buckets)


class HyperParams(_Section):
    """Model and optimisation hyperparameters."""
    tau: float = Field(0.5, gt=0, description="repulsion temperature")
    xi: float = Field(0.8, gt=0, description="attraction scaling coefficient")
    lam: float = Field(0.1, ge=0, alias="lambda", description="contrastive loss weight")
    embedding_dim: int = Field(16, ge=1)
    heads: int = Field(4, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    lr_decay: float = Field(0.95, gt=0, le=1)
    adagrad_epsilon: float = Field(1e-8, gt=0)
    batch_size: int = Field(64, ge=1)
    l_short: int = Field(20, ge=1)
    l_long: int = Field(100, ge=1)
    init_range: float = Field(0.05, gt=0)
    prior_clamp: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def validate_heads(self):
        if self.embedding_dim % self.heads != 0:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} not divisible by heads {self.heads}"
            )
        return self


class NetworkConfig(_Section):
    """Hidden widths of the prediction and collaborative MLPs."""
    prediction_hidden: List[int] = Field(default_factory=lambda: [64, 32])
    collaborative_hidden: List[int] = Field(default_factory=lambda: [32])


class WorldSpec(_Section):
    """Synthetic world with a known click model."""
    num_users: int = Field(200, ge=1)
    num_items: int = Field(500, ge=1)
    num_categories: int = Field(20, ge=1)
    num_sellers: int = Field(50, ge=1)
    latent_dim: int = Field(8, ge=1)
    pages_per_user: int = Field(10, ge=1)
    min_exposures: int = Field(6, ge=2)
    max_exposures: int = Field(12, ge=2)
    alpha: float = Field(0.5, ge=0, le=1, description="user- vs trigger-driven mixing")
    noise: float = Field(0.3, ge=0, description="std of logit noise")
    click_bias: float = -1.0
    user_bias_std: float = Field(0.5, ge=0, description="std of the per-user logit offset")
    logit_scale: float = Field(2.0, gt=0)
    same_category_share: float = Field(0.5, ge=0, le=1)
    trigger_pool: int = Field(20, ge=1)
    warmup_history: int = Field(10, ge=0)
    profile_buckets: List[int] = Field(default_factory=lambda: [10, 4])
    seed: int = Field(42, ge=0)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def validate_exposures(self):
        if self.max_exposures < self.min_exposures:
            raise ValueError("max_exposures must be >= min_exposures")
        if self.max_exposures >= self.num_items:
            raise ValueError("max_exposures must be smaller than num_items (trigger excluded)")
        return self

    @property
    def num_pages(self) -> int:
        return self.num_users * self.pages_per_user


class TrainConfig(_Section):
    """Training run settings."""
    epochs: int = Field(5, ge=1)
    seed: int = 7
    variant: ModelVariant = ModelVariant.CCN
    eval_every: int = Field(1, ge=1)
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    test_fraction: float = Field(0.2, gt=0, lt=1)
    record_wall_clock: bool = False

    @model_validator(mode="after")
    def validate_paths(self):
        if self.train_path and self.test_path and \
                Path(self.train_path).resolve() == Path(self.test_path).resolve():
            raise ValueError("train_path and test_path must differ")
        return self


class AblationConfig(_Section):
    """Variant grid, seeds and lambda sweep."""
    variants: List[ModelVariant] = Field(default_factory=lambda: list(ModelVariant))
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    lambdas: List[float] = Field(default_factory=lambda: [0.1])

    @field_validator("variants", "seeds", "lambdas")
    def validate_nonempty(cls, v):
        if not v:
            raise ValueError("must not be empty")
        return v


class GradcheckConfig(_Section):
    """Random micro-batch gradient check."""
    batches: int = Field(100, ge=1)
    pages_per_batch: int = Field(2, ge=1)
    min_exposures: int = Field(4, ge=2)
    max_exposures: int = Field(6, ge=2)
    embedding_dim: int = Field(4, ge=1)
    heads: int = Field(2, ge=1)
    buckets: int = Field(8, ge=1)
    l_short: int = Field(4, ge=1)
    l_long: int = Field(8, ge=1)
    prediction_hidden: List[int] = Field(default_factory=lambda: [8, 4])
    collaborative_hidden: List[int] = Field(default_factory=lambda: [4])
    lam: float = Field(1.0, ge=0, alias="lambda")
    tolerance: float = Field(1e-4, gt=0)
    max_coords_per_leaf: Optional[int] = Field(4, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def validate_shape(self):
        if self.embedding_dim % self.heads != 0:
            raise ValueError(f"embedding_dim {self.embedding_dim} not divisible by heads {self.heads}")
        if self.max_exposures < self.min_exposures:
            raise ValueError("max_exposures must be >= min_exposures")
        return self


class LoggingConfig(_Section):
    """Logging configuration"""
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"


class CCNConfig(_Section):
    """Root configuration."""
    preset: Optional[str] = None
    features: SchemaConfig = Field(default_factory=SchemaConfig)
    hyper: HyperParams = Field(default_factory=HyperParams)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    world: WorldSpec = Field(default_factory=WorldSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    gradcheck: GradcheckConfig = Field(default_factory=GradcheckConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


# ==============================================================================
# HELPERS
# ==============================================================================

def deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> Dict[str, Any]:
    """Turn 'section.key=value' into a nested dict; value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like section.key=value")
    dotted, raw = text.split("=", 1)
    parts = [p for p in dotted.strip().split(".") if p]
    if len(parts) < 2:
        raise ConfigError(f"override '{text}' must name a section and a key")
    value: Any = yaml.safe_load(raw) if raw.strip() else None
    for part in reversed(parts):
        value = {part: value}
    return value


# ==============================================================================
# CONFIGURATION LOADER
# ==============================================================================

class ConfigLoader:
    """
    Loads and validates CCN configuration from YAML.

    Supports:
    - Main config file with one section per module
    - Presets merged underneath the main file
    - Dotted overrides applied on top (CLI flags)
    """

    def __init__(self, config_dir: str = "./config"):
        """
        Initialize configuration loader.

        Args:
            config_dir: Root directory for configuration files
        """
        self.config_dir = Path(config_dir)
        self.presets_dir = self.config_dir / "presets"
        self._cache: Dict[str, CCNConfig] = {}

    def _read_yaml(self, path: Path) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}")
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            raise ConfigError(f"Config {path} must be a mapping of sections")
        return raw

    def load_preset(self, name: str) -> Dict[str, Any]:
        """
        Load a preset file as a raw dict.

        Raises:
            ConfigError: If the preset does not exist
        """
        path = self.presets_dir / f"{name}.yaml"
        if not path.exists():
            raise ConfigError(f"Preset not found: {path}")
        raw = self._read_yaml(path)
        raw.pop("preset", None)
        return raw

    def load_config(
        self,
        config_file: Optional[str] = None,
        overrides: Optional[List[Mapping[str, Any]]] = None,
        use_cache: bool = True,
    ) -> CCNConfig:
        """
        Load configuration, merge preset and overrides, and validate.

        Args:
            config_file: Path to the config file (defaults to <config_dir>/ccn.yaml;
                a missing default file yields the built-in defaults)
            overrides: Nested dicts applied in order on top of the file
            use_cache: Whether to use a cached result (only without overrides)

        Returns:
            Validated CCNConfig

        Raises:
            ConfigError: On missing explicit file, bad YAML or failed validation
        """
        path = Path(config_file) if config_file else self.config_dir / "ccn.yaml"
        cache_key = str(path)
        if use_cache and not overrides and cache_key in self._cache:
            return self._cache[cache_key]

        if path.exists():
            raw = self._read_yaml(path)
        elif config_file:
            raise ConfigError(f"Config file not found: {path}")
        else:
            raw = {}

        for override in overrides or []:
            raw = deep_merge(raw, override)

        preset = raw.get("preset")
        if preset:
            raw = deep_merge(self.load_preset(preset), raw)

        try:
            config = CCNConfig.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"Invalid config {path}: {e}")

        if not overrides:
            self._cache[cache_key] = config
        logger.debug(f"Loaded config from {path} (preset={preset})")
        return config

    def clear_cache(self):
        """Clear all cached configurations"""
        self._cache.clear()


# ==============================================================================
# GLOBAL INSTANCE
# ==============================================================================

_config_loader: Optional[ConfigLoader] = None


def get_config_loader(config_dir: str = "./config") -> ConfigLoader:
    """
    Get global ConfigLoader instance (singleton pattern).

    A different config_dir replaces the cached instance.
    """
    global _config_loader

    if _config_loader is None or _config_loader.config_dir != Path(config_dir):
        _config_loader = ConfigLoader(config_dir)

    return _config_loader
