import numpy as np
import pytest

from drgame import build_model, builtin_model
from drgame.forward_sde import TimeGrid


def inline(**blocks):
    """Small model from registry blocks; unspecified blocks take the registry defaults."""
    return build_model(blocks)


def const(v):
    return {"family": "constant", "value": v}


@pytest.fixture
def zero_model():
    return builtin_model("zero")


@pytest.fixture
def heat_model():
    return builtin_model("linear-heat")


@pytest.fixture
def separated_model():
    return builtin_model("isaacs-separated-1d")


@pytest.fixture
def pennies_model():
    return builtin_model("matching-pennies")


@pytest.fixture
def capped_model():
    """g = 2 with upper obstacle 1: the value sits on the upper barrier before T."""
    return inline(name="capped", terminal=const(2.0), lower=const(-1.0), upper=const(1.0),
                  growth={"C": 2.0})


@pytest.fixture
def grid20():
    return TimeGrid(20, 1.0)


def rng(seed=0):
    return np.random.default_rng(seed)
