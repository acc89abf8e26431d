"""Shared fixtures; pipeline runs are cached per session since they dominate runtime."""
import functools
import warnings

import numpy as np
import pytest

from ads.fields import cube_field, sphere_field, torus_field
from ads.pipeline import AdsConfig, IterationCap, run

FIXTURES = {
    "sphere": lambda: sphere_field(0.6),
    "torus": lambda: torus_field(0.6, 0.25),
    "cube": lambda: cube_field(0.5),
}


@functools.lru_cache(maxsize=None)
def cached_run(name, tau, seed=0, refinement_rounds=1, barrier=True):
    """(field, samples, mesh, stats) for a fixture field; shared across test modules."""
    fld = FIXTURES[name]()
    cfg = AdsConfig(tau=tau, seed=seed, refinement_rounds=refinement_rounds, barrier=barrier)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IterationCap)
        samples, mesh, stats = run(fld, cfg)
    return fld, samples, mesh, stats


@functools.lru_cache(maxsize=None)
def cached_reference(name):
    from ads.evaluation import reference_cloud

    return reference_cloud(FIXTURES[name]())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
