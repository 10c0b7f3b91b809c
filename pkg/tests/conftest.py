import numpy as np
import pytest

from magcath import protocol, surrogate
from magcath.plant import PlantParams


@pytest.fixture(scope="session")
def default_params():
    return PlantParams()


@pytest.fixture(scope="session")
def tiny_trials(tmp_path_factory, default_params):
    """A small but structurally complete acquisition campaign."""
    campaign = protocol.default_campaign(trials_per_family=4, seed=11)
    out = tmp_path_factory.mktemp("tiny_data")
    return protocol.run_acquisition(campaign, default_params, out, seed=11)


@pytest.fixture(scope="session")
def tiny_datasets(tiny_trials):
    return protocol.windowize_and_split(tiny_trials, seed=3)


@pytest.fixture(scope="session")
def tiny_model(tiny_datasets):
    """A briefly trained surrogate; mechanically sound, not accurate."""
    train, val, _ = tiny_datasets
    cfg = surrogate.TrainConfig(max_epochs=8, seed=5)
    return surrogate.train_surrogate(train, val, cfg)
