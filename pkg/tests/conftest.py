import numpy as np
import pytest

from hfw.data import DatasetSpec, load_dataset
from hfw.model import model_config
from hfw.training import TrainPlan, train


@pytest.fixture(scope="session")
def quick_corpus():
    """A small synthetic image set shared by the slower fixtures."""
    return load_dataset(DatasetSpec(count=16, resize=64, crop=32, seed=0))


@pytest.fixture(scope="session")
def quick_trained(quick_corpus):
    """A cheaply trained tiny model: good enough to stylize with, not to
    hit the reconstruction targets. Returns (config, weights, corpus)."""
    config = model_config("tiny", depth=4, skip_variant="hf_residual")
    plan = TrainPlan(strategy="blockwise_inward", epochs=10, seed=0)
    weights, _ = train(quick_corpus, config, plan)
    return config, weights, quick_corpus
