import numpy as np
import pytest

from ddmc.model import builtin_model, validate_model
from ddmc.fluid import solve_fluid, solve_lyapunov

T0 = 1.0
H = 1e-3


@pytest.fixture(scope="session")
def yule():
    return validate_model(builtin_model("yule", **{"lambda": 1.0, "x0": 1.0}))


@pytest.fixture(scope="session")
def yule2():
    return validate_model(builtin_model("yule", **{"lambda": 2.0, "x0": 1.0}))


@pytest.fixture(scope="session")
def contact():
    return validate_model(builtin_model("contact", **{"lambda": 2.0, "x0": 0.5}))


@pytest.fixture(scope="session")
def contact_moving():
    # x0 away from the lambda=2 fixed point so the fluid path actually moves
    return validate_model(builtin_model("contact", **{"lambda": 2.0, "x0": 0.3}))


@pytest.fixture(scope="session")
def sir():
    return validate_model(builtin_model("sir"))


@pytest.fixture(scope="session")
def chemical():
    return validate_model(builtin_model("chemical"))


@pytest.fixture(scope="session")
def yule_fluid(yule):
    return solve_lyapunov(solve_fluid(yule, T0, H))


@pytest.fixture(scope="session")
def contact_fluid(contact):
    return solve_lyapunov(solve_fluid(contact, T0, H))


@pytest.fixture(scope="session")
def sir_fluid(sir):
    return solve_lyapunov(solve_fluid(sir, T0, H))


@pytest.fixture(scope="session")
def chemical_fluid(chemical):
    return solve_lyapunov(solve_fluid(chemical, T0, H))


def assert_close(actual, expected, rtol, what=""):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    denom = np.maximum(np.abs(expected), 1e-300)
    rel = float(np.max(np.abs(actual - expected) / denom))
    assert rel <= rtol, f"{what}: relative error {rel:.3e} > {rtol:.1e}"
