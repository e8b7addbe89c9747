import numpy as np
import pytest

from dpmerge.core import GaussianMechanism, OrderGrid, validate_weights
from dpmerge.oracle import GaussianMixture1D
from dpmerge.rdp import RdpCurve


@pytest.fixture
def rng():
    return np.random.default_rng(20_250_810)


def single_gaussian(mean: float, var: float) -> GaussianMixture1D:
    return GaussianMixture1D(((1.0, mean, var),))


def shifted_pair(shift: float, var: float):
    """The worst-case Gaussian output pair (P shifted, Q centered)."""
    return single_gaussian(shift, var), single_gaussian(0.0, var)


def random_monotone_curve(rng, grid: OrderGrid, scale: float = 1.0) -> RdpCurve:
    steps = rng.exponential(scale / len(grid), size=len(grid))
    return RdpCurve(grid, tuple(np.cumsum(steps)))


def random_weights(rng, n: int):
    return validate_weights(rng.dirichlet(np.ones(n)))


def gaussian_battery():
    """Mechanisms spanning the ratios the acceptance suite exercises."""
    return [
        GaussianMechanism(1.0, 10.0),
        GaussianMechanism(1.0, 2.0),
        GaussianMechanism(1.0, 1.0),
        GaussianMechanism(2.0, 1.0),
    ]
