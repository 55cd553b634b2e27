import logging

import numpy as np
import pytest

from active_flow_framework import ConsoleHandler, LogFileHandler
from models.core import Image, LossConfig
from models.estimator import OptimizerConfig
from models.synth import Occluder, SynthSpec, Translate, gen_sample

### A cheap optimizer for tests that run many samples
FAST_OPTIMIZER = OptimizerConfig(coarsest_level=3, iters_per_level=15)


@pytest.fixture(autouse=True)
def detach_cli_handlers():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, (ConsoleHandler, LogFileHandler)):
            root.removeHandler(handler)
            handler.close()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cfg():
    return LossConfig()


@pytest.fixture
def fast_optimizer():
    return FAST_OPTIMIZER


@pytest.fixture
def constant_image():
    def make(width: int, height: int, value: float = 0.5, channels: int = 3) -> Image:
        return Image(np.full((height, width, channels), value))
    return make


@pytest.fixture
def shifted_sample():
    """
    A 64 x 64 textured pair whose background moves by a constant (dx, dy), no occluder
    """
    def make(dx: float = 3.0, dy: float = 0.0, seed: int = 7, size: int = 64):
        return gen_sample(SynthSpec(width=size, height=size, motion=Translate(dx=dx, dy=dy), seed=seed), f"shift{seed}")
    return make


@pytest.fixture
def occluded_sample():
    """
    A 64 x 64 pair with a small background shift and an independently moving occluder
    """
    spec = SynthSpec(
        width=64,
        height=64,
        motion=Translate(dx=1.5, dy=0.5),
        occluder=Occluder(x=20, y=24, width=16, height=12, dx=-4.0, dy=2.0),
        seed=11,
    )
    return gen_sample(spec, "occ")
