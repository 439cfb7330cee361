import os
import tempfile

os.environ.setdefault("DATA_DIR", tempfile.mkdtemp(prefix="grmfit-test-"))
os.environ.setdefault("LOG_TO_FILE", "false")

from typing import Callable, List, Sequence  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from scipy.integrate import trapezoid  # noqa: E402

from grmfit.models.schemas import ItemParameters  # noqa: E402
from grmfit.services.grm import as_itemset, pattern_loglik_grid  # noqa: E402
from grmfit.services.simulation_service import sample_item_parameters, simulate_dataset  # noqa: E402

ORACLE_GRID = np.linspace(-10.0, 10.0, 100_001)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def five_items() -> List[ItemParameters]:
    return [
        ItemParameters(item_id=0, a=1.0, b=(-2.0, -0.5, 0.5, 2.0)),
        ItemParameters(item_id=1, a=1.6, b=(-1.5, -0.6, 0.3, 1.4)),
        ItemParameters(item_id=2, a=0.7, b=(-2.2, -0.9, 0.6, 1.9)),
        ItemParameters(item_id=3, a=2.3, b=(-1.2, -0.2, 0.4, 1.2)),
        ItemParameters(item_id=4, a=1.2, b=(-1.8, -0.4, 0.2, 2.3)),
    ]


@pytest.fixture
def random_items() -> Callable[[int, int], List[ItemParameters]]:
    def make(m: int, seed: int) -> List[ItemParameters]:
        return sample_item_parameters(m, seed)

    return make


@pytest.fixture
def small_dataset(five_items):
    return simulate_dataset(five_items, 300, seed=7).data


def trapezoid_marginal(items: Sequence[ItemParameters], pattern: Sequence[int]) -> float:
    """log of the trapezoid integral of L(psi) * phi(psi) over [-10, 10]."""
    loglik = np.zeros_like(ORACLE_GRID)
    for item, y in zip(items, pattern):
        loglik += pattern_loglik_grid(as_itemset([item]), np.asarray([[y]]), ORACLE_GRID)[0]
    log_joint = loglik - 0.5 * ORACLE_GRID**2 - 0.5 * np.log(2 * np.pi)
    peak = log_joint.max()
    return float(peak + np.log(trapezoid(np.exp(log_joint - peak), ORACLE_GRID)))


@pytest.fixture
def oracle_marginal() -> Callable[[Sequence[ItemParameters], Sequence[int]], float]:
    return trapezoid_marginal
