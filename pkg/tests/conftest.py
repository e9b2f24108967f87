import numpy as np
import pytest

from pointfield import scenes as sc
from pointfield.cloud import Model, ModelConfig


@pytest.fixture(scope="session")
def micro_dataset():
    """Small sphere-on-plane dataset shared by rendering/training tests."""
    return sc.make_dataset(sc.sphere_on_plane(), n_train=4, n_test=1,
                           resolution=48, n_points=1200, out_dir=None)


@pytest.fixture(scope="session")
def micro_model(micro_dataset):
    cfg = ModelConfig()
    model = Model.create(cfg, np.random.default_rng(0))
    cloud = micro_dataset.make_cloud(cfg.feature_dim, seed=0)
    return model, cloud
