import numpy as np
import pytest

from levy_multiscale.ergodicity import estimate_invariant_measure
from levy_multiscale.jump_processes import FastProcessConfig
from levy_multiscale.levy_measures import Family, LevyMeasureModel


@pytest.fixture(scope="session")
def sym15():
    return LevyMeasureModel(Family.SYMMETRIC_STABLE, 1.5)


@pytest.fixture(scope="session")
def invariant_measure_15(sym15):
    """Moderate-size empirical stationary measure shared across test modules."""
    cfg = FastProcessConfig(sym15, lam=1.0, y0=0.0, horizon=10.0, dt=0.02, seed=1234)
    return estimate_invariant_measure(cfg, burn_in=10.0, n_samples=40_000)
