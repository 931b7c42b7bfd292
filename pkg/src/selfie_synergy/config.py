"""
Configuration settings for Selfie Synergy
"""
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import click
import yaml
from dotenv import load_dotenv

from .artifacts import stable_hash
from .convnet import HEAD_ALIASES, HEADS, NetSpec, TrainSchedule, canonical_head, toy_alex
from .errors import ConfigError, NetSpecError
from .handcraft import HogConfig, LbpConfig
from .keypoints import DogConfig

DEFAULT_CONFIG: Dict[str, Any] = {
    "data.manifest": None,
    "store": "synergy-store",
    "image_size": 227,
    "workers": 1,
    # Handcrafted descriptors
    "hog.levels": 4,
    "hog.bins": 9,
    "hog.pyramid": True,
    "lbp.grid": 8,
    "lbp.radius": 1,
    # Subspace
    "pca.enabled": True,
    "pca.dims": 128,
    "cca.k": 32,
    "cca.ridge": 1e-3,
    # Network
    "net.layers": "toy-alex",
    "net.head": "softmax",
    "train.lr0": 1e-5,
    "train.halve_every": 2000,
    "train.batch": 16,
    "train.total_iters": 8000,
    "train.momentum": 0.0,
    "train.seed": 0,
    "train.val_every": 100,
    "train.log_every": 500,
    # Keypoints
    "dog.scales_per_octave": 3,
    "dog.base_sigma": 1.6,
    "dog.contrast_thresh": 0.03,
    "dog.edge_ratio": 10.0,
    "dog.max_octaves": 0,
    # Classifier
    "svm.C": 1.0,
    "svm.epochs": 200,
    "svm.seed": 0,
    "split.seed": 0,
}

SEED_KEYS = ("split.seed", "train.seed", "svm.seed")

ENV_OVERRIDES = {
    "SELFIE_SYNERGY_MANIFEST": "data.manifest",
    "SELFIE_SYNERGY_STORE": "store",
}


def flatten(mapping: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Turn nested sections into dotted keys"""
    flat = {}
    for key, value in mapping.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULT_CONFIG[key]
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "yes", "1", "on"):
                    return True
                if value.lower() in ("false", "no", "0", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if key == "net.head":
            return canonical_head(str(value))
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use {value!r} as {type(default).__name__}")


class Config:
    def __init__(self, config_path: Optional[Union[str, Path]] = None, quiet: bool = False):
        self.quiet = quiet
        self.config_path = Path(config_path) if config_path else None
        self.config = DEFAULT_CONFIG.copy()
        if self.config_path is not None:
            self._load_config()
        self._load_env_vars()

    def _echo(self, message: str):
        if not self.quiet:
            click.echo(message)

    def _load_config(self):
        """Load configuration from a YAML file of dotted keys"""
        if not self.config_path.exists():
            raise ConfigError(f"config file not found: {self.config_path}")
        self._echo(f"📂 Loading configuration from {self.config_path}...")
        try:
            with open(self.config_path) as f:
                user_config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {self.config_path}: {e}")
        if not user_config:
            self._echo("ℹ️ Configuration file is empty")
            return
        if not isinstance(user_config, dict):
            raise ConfigError(f"{self.config_path} must contain a mapping")
        for key, value in flatten(user_config).items():
            self.set(key, value, announce=False)
        self._echo("✓ Configuration file loaded successfully")

    def _load_env_vars(self):
        """Apply overrides from the environment (and a .env file)"""
        load_dotenv()
        for env, key in ENV_OVERRIDES.items():
            if os.getenv(env):
                self.set(key, os.getenv(env), announce=False)
                self._echo(f"✓ {key} taken from {env}")
        if os.getenv("SELFIE_SYNERGY_SEED"):
            self.set_seed(os.getenv("SELFIE_SYNERGY_SEED"))

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value"""
        return self.config.get(key, default)

    def get_all(self) -> Dict[str, Any]:
        """Get a copy of all configuration values"""
        return self.config.copy()

    def set(self, key: str, value: Any, announce: bool = True):
        """Set a configuration value"""
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown configuration key '{key}'")
        self.config[key] = _coerce(key, value)
        if announce:
            self._echo(f"✏️ Config set: {key} = {self.config[key]}")

    def set_seed(self, seed: Union[int, str]):
        """Use one seed for every seeded stage"""
        for key in SEED_KEYS:
            self.set(key, seed, announce=False)
        self._echo(f"✏️ All seeds set to {self.config['split.seed']}")

    def save(self, path: Optional[Union[str, Path]] = None):
        """Save configuration to a YAML file"""
        target = Path(path) if path else self.config_path
        if target is None:
            raise ConfigError("no path to save the configuration to")
        self._echo(f"💾 Saving configuration to {target}...")
        with open(target, "w") as f:
            yaml.safe_dump(self.config, f, sort_keys=True)
        self._echo("✓ Configuration saved successfully")

    def section_hash(self, keys: Iterable[str]) -> str:
        """Stable hash of the selected settings"""
        return stable_hash({key: self.config[key] for key in sorted(keys)})

    def hog_config(self) -> HogConfig:
        return HogConfig(self.config["hog.levels"], self.config["hog.bins"], self.config["hog.pyramid"])

    def lbp_config(self) -> LbpConfig:
        return LbpConfig(self.config["lbp.grid"], self.config["lbp.radius"])

    def dog_config(self) -> DogConfig:
        return DogConfig(
            scales_per_octave=self.config["dog.scales_per_octave"],
            base_sigma=self.config["dog.base_sigma"],
            contrast_thresh=self.config["dog.contrast_thresh"],
            edge_ratio=self.config["dog.edge_ratio"],
            max_octaves=self.config["dog.max_octaves"],
        )

    def train_schedule(self) -> TrainSchedule:
        return TrainSchedule(
            lr0=self.config["train.lr0"],
            halve_every=self.config["train.halve_every"],
            batch=self.config["train.batch"],
            total_iters=self.config["train.total_iters"],
            momentum=self.config["train.momentum"],
            seed=self.config["train.seed"],
            val_every=self.config["train.val_every"],
            log_every=self.config["train.log_every"],
        )

    def net_spec(self, out_dim: Optional[int] = None) -> NetSpec:
        """Network for the configured input size; final width defaults to cca.k"""
        k = self.config["cca.k"] if out_dim is None else out_dim
        size = self.config["image_size"]
        layers = self.config["net.layers"]
        if layers == "toy-alex":
            return toy_alex(k, size)
        spec = NetSpec.parse(layers, (1, size, size))
        return spec if out_dim is None else spec.with_output(out_dim)

    def validate(self):
        """Check value ranges and cross-module consistency before any stage runs"""
        c = self.config
        try:
            self.hog_config()
            self.lbp_config()
            self.dog_config()
            self.train_schedule()
            spec = self.net_spec()
        except (ValueError, NetSpecError) as e:
            raise ConfigError(str(e))
        if c["image_size"] < 16:
            raise ConfigError("image_size must be at least 16")
        if c["net.head"] not in HEADS[:2]:
            raise ConfigError(f"net.head must be one of {HEADS[:2] + tuple(HEAD_ALIASES)}, got '{c['net.head']}'")
        if spec.output_dim != c["cca.k"]:
            raise ConfigError(f"net final fc width {spec.output_dim} must equal cca.k {c['cca.k']}")
        if c["cca.k"] < 1 or c["cca.ridge"] < 0:
            raise ConfigError("cca.k must be >= 1 and cca.ridge >= 0")
        if c["pca.enabled"] and c["cca.k"] > c["pca.dims"]:
            raise ConfigError(f"cca.k {c['cca.k']} exceeds pca.dims {c['pca.dims']}")
        if c["svm.C"] <= 0 or c["svm.epochs"] < 1:
            raise ConfigError("svm.C must be positive and svm.epochs >= 1")
        if c["workers"] < 1:
            raise ConfigError("workers must be >= 1")
