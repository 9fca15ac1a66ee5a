import math

import numpy as np
import pytest

from ddmc.errors import (
    GridMismatchError,
    SigmaSingularError,
    SingularEndpointCovarianceError,
)
from ddmc.fluid import TiltControl, solve_tilted_ode, uniform_grid
from ddmc.ratefn import (
    CandidatePath,
    endpoint_min_cost,
    endpoint_min_cost_qp,
    energy_quadratic,
    optimal_tilt,
    pairing_linear,
    rate_closed_form,
    rate_degenerate,
    variational_sup,
    variational_value,
)

from conftest import H, T0

YULE_GOLDEN_C = 1.0


def yule_golden_path(grid, c=YULE_GOLDEN_C):
    """f = c (e^t - 1): straight-line verification values I = c^2 (1 - e^-1)/2."""
    return CandidatePath(grid, c * (np.exp(grid) - 1.0), df=c * np.exp(grid))


def smooth_path(grid, coeffs):
    """Mix of smooth pinned-at-zero shapes per coordinate."""
    d = len(coeffs)
    f = np.zeros((len(grid), d))
    for k, (a, b, c) in enumerate(coeffs):
        f[:, k] = a * (np.exp(grid) - 1) + b * np.sin(math.pi * grid / grid[-1]) + c * grid**2
    return CandidatePath(grid, f)


class TestClosedForm:
    def test_zero_path(self, yule_fluid):
        rep = rate_closed_form(yule_fluid, CandidatePath(yule_fluid.grid,
                                                         np.zeros(len(yule_fluid.grid))))
        assert rep.value == 0.0
        assert rep.method == "closed"

    def test_yule_golden_value(self, yule_fluid):
        rep = rate_closed_form(yule_fluid, yule_golden_path(yule_fluid.grid))
        exact = (1 - math.exp(-1)) / 2
        assert rep.value == pytest.approx(exact, rel=1e-6)

    def test_yule_golden_psi(self, yule_fluid):
        rep = rate_closed_form(yule_fluid, yule_golden_path(yule_fluid.grid))
        np.testing.assert_allclose(rep.psi[:, 0], np.exp(-yule_fluid.grid), atol=1e-12)

    def test_quadrature_self_convergence(self, contact_moving):
        # second-order convergence against Richardson extrapolation
        from ddmc.fluid import solve_fluid

        vals = {}
        for h in (4e-3, 2e-3, 1e-3):
            fl = solve_fluid(contact_moving, T0, h)
            f = 0.4 * (np.exp(fl.grid) - 1.0)
            vals[h] = rate_closed_form(fl, CandidatePath(fl.grid, f)).value
        rich = vals[1e-3] + (vals[1e-3] - vals[2e-3]) / 3.0
        e_coarse = abs(vals[4e-3] - rich)
        e_mid = abs(vals[2e-3] - rich)
        e_fine = abs(vals[1e-3] - rich)
        assert vals[1e-3] >= 0.0
        assert e_mid < e_coarse / 3.0
        assert e_fine < e_mid / 3.0

    def test_sigma_singular_raises(self, chemical_fluid):
        f = smooth_path(chemical_fluid.grid, [(0.1, 0, 0), (0.1, 0, 0), (0, 0.1, 0)])
        with pytest.raises(SigmaSingularError):
            rate_closed_form(chemical_fluid, f)

    def test_nonzero_start_rejected(self, yule_fluid):
        with pytest.raises(ValueError):
            CandidatePath(yule_fluid.grid, np.ones(len(yule_fluid.grid)))

    def test_grid_mismatch(self, yule_fluid):
        other = uniform_grid(T0, 2e-3)
        path = CandidatePath(other, np.zeros(len(other)))
        with pytest.raises(GridMismatchError):
            rate_closed_form(yule_fluid, path)


class TestDegenerate:
    def test_zero_path(self, chemical_fluid):
        rep = rate_degenerate(chemical_fluid,
                              CandidatePath(chemical_fluid.grid,
                                            np.zeros((len(chemical_fluid.grid), 3))))
        assert rep.value == 0.0
        np.testing.assert_array_equal(rep.psi, 0.0)

    @pytest.mark.parametrize("fixture", ["yule_fluid", "contact_fluid", "sir_fluid"])
    def test_matches_closed_on_invertible_sigma(self, fixture, request):
        fluid = request.getfixturevalue(fixture)
        d = fluid.dimension
        coeffs = [(0.3, 0.2, -0.1), (-0.2, 0.4, 0.1)][:d] if d > 1 else [(0.5, 0.3, 0.2)]
        f = smooth_path(fluid.grid, coeffs)
        closed = rate_closed_form(fluid, f)
        degen = rate_degenerate(fluid, f)
        assert degen.value == pytest.approx(closed.value, rel=1e-8)

    def test_chemical_pattern_path_finite_with_printed_psi(self, chemical_fluid):
        # reachable direction: components (v, v, -v); the representer's first
        # coordinate follows the displayed ratio formula
        grid = chemical_fluid.grid
        f1 = 0.2 * (np.exp(grid) - 1.0)
        df1 = 0.2 * np.exp(grid)
        f = np.stack([f1, f1, -f1], axis=1)
        df = np.stack([df1, df1, -df1], axis=1)
        rep = rate_degenerate(chemical_fluid, CandidatePath(grid, f, df=df))
        assert np.isfinite(rep.value) and rep.value > 0
        X = chemical_fluid.X
        lam = mu = 1.0
        denom = 3.0 * (lam * X[:, 0] * X[:, 1] + mu * X[:, 2])
        psi1 = (df1 + (lam * X[:, 0] + lam * X[:, 1] + mu) * f1) / denom
        np.testing.assert_allclose(rep.psi[:, 0], psi1, atol=1e-9)
        np.testing.assert_allclose(rep.psi[:, 1], psi1, atol=1e-9)
        np.testing.assert_allclose(rep.psi[:, 2], -psi1, atol=1e-9)

    def test_chemical_off_pattern_is_infinite(self, chemical_fluid):
        grid = chemical_fluid.grid
        f = np.zeros((len(grid), 3))
        f[:, 0] = grid  # breaks the (v, v, -v) reachability pattern
        rep = rate_degenerate(chemical_fluid, CandidatePath(grid, f))
        assert rep.value == math.inf
        assert rep.psi is None


class TestVariational:
    def test_zero_control(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        g = TiltControl.constant(yule_fluid.grid, [0.0])
        assert variational_value(yule_fluid, f, g) == 0.0

    def test_value_at_representer_equals_rate(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        rep = rate_closed_form(yule_fluid, f)
        val = variational_value(yule_fluid, f, TiltControl(yule_fluid.grid, rep.psi))
        assert val == pytest.approx(rep.value, rel=1e-5)

    def test_suboptimal_control_strictly_below(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        rep = rate_closed_form(yule_fluid, f)
        val = variational_value(yule_fluid, f, TiltControl.constant(yule_fluid.grid, [1.0]))
        assert val < rep.value - 1e-3

    def test_scaling_identity_exact(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        g = TiltControl.constant(yule_fluid.grid, [0.8])
        l1 = pairing_linear(yule_fluid, f.f, g.values)
        l2 = energy_quadratic(yule_fluid, g.values)
        for c in (-1.0, 2.0):
            v = variational_value(yule_fluid, f, g.scaled(c))
            assert v == c * l1 - 0.5 * c * c * l2
        v10 = variational_value(yule_fluid, f, g.scaled(10.0))
        ref = 10.0 * l1 - 50.0 * l2
        assert v10 == pytest.approx(ref, rel=5e-14)

    def test_lower_bound_property_random_pairs(self, contact_fluid):
        rng = np.random.default_rng(1234)
        grid = contact_fluid.grid
        for _ in range(100):
            f = smooth_path(grid, [tuple(rng.uniform(-0.5, 0.5, 3))])
            g = TiltControl(grid, np.column_stack([
                rng.uniform(-1, 1) * np.sin(math.pi * grid)
                + rng.uniform(-1, 1) * grid
                + rng.uniform(-0.5, 0.5)
            ]))
            rate = rate_closed_form(contact_fluid, f).value
            val = variational_value(contact_fluid, f, g)
            assert val <= rate + 1e-4 * (1.0 + rate)

    def test_sup_certifies_most_of_rate(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        closed = rate_closed_form(yule_fluid, f).value
        rep = variational_sup(yule_fluid, f, basis_size=32)
        assert rep.method == "variational_lb"
        assert rep.value >= 0.95 * closed

    def test_sup_monotone_in_basis(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        b32 = variational_sup(yule_fluid, f, basis_size=32).value
        b64 = variational_sup(yule_fluid, f, basis_size=64).value
        assert b64 >= b32 - 1e-12

    def test_sup_zero_path(self, yule_fluid):
        f = CandidatePath(yule_fluid.grid, np.zeros(len(yule_fluid.grid)))
        assert variational_sup(yule_fluid, f, basis_size=8).value == 0.0

    def test_sup_with_restarts_still_bounded(self, contact_fluid):
        f = smooth_path(contact_fluid.grid, [(0.3, 0.1, 0.0)])
        closed = rate_closed_form(contact_fluid, f).value
        rep = variational_sup(contact_fluid, f, basis_size=16, restarts=5, seed=9)
        assert rep.value <= closed * (1 + 1e-4) + 1e-12
        assert rep.value >= 0.9 * closed


class TestQuadraticScaling:
    @pytest.mark.parametrize("c", [2.0, 3.0])
    def test_rate_scales_quadratically(self, contact_fluid, c):
        f = smooth_path(contact_fluid.grid, [(0.3, -0.2, 0.1)])
        base = rate_closed_form(contact_fluid, f).value
        scaled = rate_closed_form(contact_fluid, f.scaled(c)).value
        assert scaled == pytest.approx(c * c * base, rel=1e-10)


class TestOptimalTilt:
    def test_zero_path(self, yule_fluid):
        tilt = optimal_tilt(yule_fluid, CandidatePath(yule_fluid.grid,
                                                      np.zeros(len(yule_fluid.grid))))
        np.testing.assert_array_equal(tilt.values, 0.0)

    def test_yule_golden_tilt(self, yule_fluid):
        tilt = optimal_tilt(yule_fluid, yule_golden_path(yule_fluid.grid))
        np.testing.assert_allclose(tilt.values[:, 0], np.exp(-yule_fluid.grid), atol=1e-12)

    def test_roundtrip_recovers_control(self, contact_fluid):
        g = TiltControl.from_function(contact_fluid.grid,
                                      lambda t: [0.5 * math.sin(2 * t) + 0.3])
        y = solve_tilted_ode(contact_fluid, g)
        tilt = optimal_tilt(contact_fluid, CandidatePath(contact_fluid.grid, y))
        assert np.max(np.abs(tilt.values - g.values)) < 1e-4

    def test_roundtrip_reproduces_path(self, yule_fluid):
        f = yule_golden_path(yule_fluid.grid)
        f_fd = CandidatePath(yule_fluid.grid, f.f)  # finite-difference derivative
        y = solve_tilted_ode(yule_fluid, optimal_tilt(yule_fluid, f_fd))
        assert np.max(np.abs(y - f.f)) <= 10 * H * H

    def test_singular_sigma_raises(self, chemical_fluid):
        f = CandidatePath(chemical_fluid.grid, np.zeros((len(chemical_fluid.grid), 3)))
        with pytest.raises(SigmaSingularError):
            optimal_tilt(chemical_fluid, f)


class TestEndpoint:
    def test_zero_target(self, yule_fluid):
        path, rep = endpoint_min_cost(yule_fluid, [0.0])
        assert rep.value == 0.0
        np.testing.assert_allclose(path.f, 0.0, atol=1e-12)

    def test_yule_identity(self, yule_fluid):
        z = 1.0
        _, rep = endpoint_min_cost(yule_fluid, [z])
        expect = z * z / (2 * (math.e**2 - math.e))
        assert rep.value == pytest.approx(expect, rel=1e-6)

    def test_contact_identity(self, contact_fluid):
        z = np.array([0.7])
        path, rep = endpoint_min_cost(contact_fluid, z)
        end_cov = contact_fluid.Sigma_ou[-1]
        expect = 0.5 * float(z @ np.linalg.solve(end_cov, z))
        assert rep.value == pytest.approx(expect, rel=1e-6)
        assert path.f[-1, 0] == pytest.approx(z[0], abs=1e-6)

    def test_sir_identity(self, sir_fluid):
        z = np.array([0.4, -0.3])
        path, rep = endpoint_min_cost(sir_fluid, z)
        end_cov = sir_fluid.Sigma_ou[-1]
        expect = 0.5 * float(z @ np.linalg.solve(end_cov, z))
        assert rep.value == pytest.approx(expect, rel=1e-6)
        np.testing.assert_allclose(path.f[-1], z, atol=1e-6)

    @pytest.mark.parametrize("fixture,z", [("yule_fluid", [1.0]), ("contact_fluid", [0.7])])
    def test_qp_oracle_agrees(self, fixture, z, request):
        fluid = request.getfixturevalue(fixture)
        _, rep = endpoint_min_cost(fluid, z)
        qp = endpoint_min_cost_qp(fluid, z)
        assert qp == pytest.approx(rep.value, rel=1e-4)

    def test_rate_of_minimizer_matches(self, contact_fluid):
        # the minimizing path's own rate equals the endpoint cost
        path, rep = endpoint_min_cost(contact_fluid, [0.5])
        again = rate_closed_form(contact_fluid, path)
        assert again.value == pytest.approx(rep.value, rel=1e-6)

    def test_singular_endpoint_covariance(self, chemical_fluid):
        with pytest.raises(SingularEndpointCovarianceError):
            endpoint_min_cost(chemical_fluid, [0.1, 0.1, -0.1])
