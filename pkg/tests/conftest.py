"""Shared fixtures: models, Stein oracles, and the large replica sets.

The expensive sample sets are session-scoped and reused by module tests and
the acceptance suite; their timings are recorded so runtime budgets can be
asserted where a criterion pins them.
"""

from __future__ import annotations

import math
import time

import pytest

from milstein_mdp import (
    builtin_model,
    builtin_test_function,
    invariant_density_1d,
    run_replicas,
    solve_stein_1d,
)
from milstein_mdp.scheme import InitialState

CLT_SEED = 20240605
TAILS_SEED = 61804
STATIONARY_STD = math.sqrt(0.5)  # ou(kappa=1, s=1): s^2 / (2 kappa)


@pytest.fixture(scope="session")
def ou_model():
    return builtin_model("ou", {"kappa": 1.0, "s": 1.0})


@pytest.fixture(scope="session")
def tanh_model():
    return builtin_model("tanh1d", {"kappa": 1.0, "c": 0.5, "s0": 1.0, "s1": 0.5})


@pytest.fixture(scope="session")
def tanh_nd_model():
    return builtin_model("tanhNd", {"d": 2, "kappa": 1.0, "c": 0.5, "s0": 1.0, "s1": 0.5})


@pytest.fixture(scope="session")
def identity_h():
    return builtin_test_function("identity")


@pytest.fixture(scope="session")
def gauss_h():
    return builtin_test_function("gauss_bump")


@pytest.fixture(scope="session")
def ou_density(ou_model):
    return invariant_density_1d(ou_model, X=10.0)


@pytest.fixture(scope="session")
def ou_stein(ou_model, identity_h, ou_density):
    return solve_stein_1d(ou_model, identity_h, ou_density)


@pytest.fixture(scope="session")
def tanh_density(tanh_model):
    return invariant_density_1d(tanh_model, X=10.0)


@pytest.fixture(scope="session")
def tanh_gauss_stein(tanh_model, gauss_h, tanh_density):
    return solve_stein_1d(tanh_model, gauss_h, tanh_density)


@pytest.fixture(scope="session")
def kernel_warm(ou_model, ou_stein):
    """Compile all chain kernels before any timed fixture or budget runs."""
    import numpy as np

    from milstein_mdp import _kernels
    from milstein_mdp.scheme import ChainConfig, NoiseStream, simulate_chain

    run_replicas(ou_model, ou_stein, eta=0.05, m=None, n_replicas=8, master_seed=1)
    simulate_chain(ou_model, ChainConfig(eta=0.05, steps=4), NoiseStream(1, 0))
    x0, dx, ncell, c_h, _ = ou_stein.interp_tables()
    _kernels.observable_chain_1d(
        ou_model.kernel_code, ou_model.kernel_param_array(), 0.0, 0.05,
        np.zeros(8), True, x0, dx, ncell, c_h, 0, np.zeros(2), np.zeros(2, dtype=np.int64),
    )
    return True


@pytest.fixture(scope="session")
def clt_set(ou_model, ou_stein, kernel_warm):
    """Criterion 5 sample set: eta=0.02 (m=2500), 2000 replicas, theta0=0."""
    t0 = time.perf_counter()
    sset = run_replicas(
        ou_model, ou_stein, eta=0.02, m=None, n_replicas=2000,
        master_seed=CLT_SEED, workers=2,
    )
    sset.wall_time = time.perf_counter() - t0
    return sset


@pytest.fixture(scope="session")
def tails_set(ou_model, ou_stein, kernel_warm):
    """Criterion 6 sample set: eta=0.05 (m=400), 1e5 replicas, 4 workers.

    The initial state is the stationary Gaussian (a sub-Gaussian start);
    a deterministic start at 0 provably biases the x=2 tail ratio below
    the acceptance band at this step size (exact value 0.827 vs 0.884).
    """
    t0 = time.perf_counter()
    sset = run_replicas(
        ou_model, ou_stein, eta=0.05, m=None, n_replicas=100_000,
        master_seed=TAILS_SEED, workers=4,
        initial_state=InitialState(kind="gauss", mean=0.0, std=STATIONARY_STD),
        experiment="tails",
    )
    sset.wall_time = time.perf_counter() - t0
    return sset


@pytest.fixture(scope="session")
def tanh_curves_set(tanh_model, tanh_gauss_stein, kernel_warm):
    """Non-degenerate companion set for the concentration-shape checks."""
    return run_replicas(
        tanh_model, tanh_gauss_stein, eta=0.05, m=None, n_replicas=100_000,
        master_seed=TAILS_SEED + 1, workers=4,
        initial_state=InitialState(kind="gauss", mean=0.0, std=STATIONARY_STD),
        experiment="curves",
    )
