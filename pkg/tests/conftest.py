import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model(rng, L=2, d=None, rank=None, classes=None, input_dim=None, activation="relu"):
    """Small stack moved away from the zero-init point."""
    from fedra.model import build_stack_model

    d = d or int(rng.integers(2, 9))
    rank = rank or int(rng.integers(1, d + 1))
    classes = classes or int(rng.integers(2, 6))
    input_dim = input_dim or int(rng.integers(2, 9))
    m = build_stack_model(L, input_dim, d, classes, rank, seed=int(rng.integers(2**31)), activation=activation)
    m.up[...] = rng.normal(0, 0.3, m.up.shape)
    m.head.weight[...] = rng.normal(0, 0.3, m.head.weight.shape)
    m.base_bias[...] = rng.normal(0, 0.1, m.base_bias.shape)
    return m
