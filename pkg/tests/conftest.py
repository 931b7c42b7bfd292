"""
Shared fixtures for the test suite
"""
import numpy as np
import pytest

from selfie_synergy.artifacts import ArtifactStore
from selfie_synergy.config import Config
from selfie_synergy.convnet import NetSpec
from selfie_synergy.dataset import generate_synthetic_dataset

TINY_LAYERS = "conv:2:3:2,relu,maxpool:3:2,conv:2:3:1,relu,flatten,fc:2"

SMOKE_SETTINGS = {
    "image_size": 32,
    "hog.levels": 2,
    "lbp.grid": 2,
    "pca.dims": 4,
    "cca.k": 2,
    "net.layers": TINY_LAYERS,
    "net.head": "linear",
    "train.lr0": 0.001,
    "train.total_iters": 6,
    "train.batch": 4,
    "train.val_every": 2,
    "train.log_every": 100,
    "svm.epochs": 5,
}


@pytest.fixture
def rng():
    """Seeded generator"""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    """One conv, one pool and one fc on an 8x8 input"""
    return NetSpec.parse("conv:2:3:1,relu,maxpool:2:2,flatten,fc:4", (1, 8, 8))


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    """Ten images per class at 32x32"""
    out = tmp_path_factory.mktemp("synthetic")
    generate_synthetic_dataset(10, seed=3, out_dir=out, size=32)
    return out


@pytest.fixture
def smoke_config(synthetic_dir, tmp_path, monkeypatch):
    """Desk-sized configuration pointing at the synthetic manifest"""
    for env in ("SELFIE_SYNERGY_MANIFEST", "SELFIE_SYNERGY_STORE", "SELFIE_SYNERGY_SEED"):
        monkeypatch.delenv(env, raising=False)
    config = Config(quiet=True)
    for key, value in SMOKE_SETTINGS.items():
        config.set(key, value, announce=False)
    config.set("data.manifest", str(synthetic_dir / "manifest.tsv"), announce=False)
    config.set("store", str(tmp_path / "store"), announce=False)
    return config


@pytest.fixture
def store(smoke_config):
    """Artifact store of the smoke configuration"""
    return ArtifactStore(smoke_config.get("store"))
