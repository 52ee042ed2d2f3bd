import numpy as np
import pytest

from ee_testkit import Dataset, ScenarioConfig, SCENARIOS
from ee_testkit.montecarlo import generate_block


def exp_dataset(scenario="IV", n=50, seed=7, rep=0):
    """One replication of the exponential-regression design."""
    cfg = ScenarioConfig(beta0=SCENARIOS[scenario], n=n, replications=rep + 1, master_seed=seed)
    y, X = generate_block(cfg, [rep])
    return Dataset(y[0], X[0])


def noiseless_dataset(beta, n=500, seed=3):
    rng = np.random.default_rng(seed)
    X = 0.4 * rng.standard_normal((n, 2))
    beta = np.asarray(beta, dtype=float)
    y = beta[0] + X[:, 0] * beta[1] + np.exp(X[:, 1] * beta[2])
    return Dataset(y, X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def exp50():
    return exp_dataset()
