"""Quadratic path-cost functional: closed form, degenerate form, variational bound.

All evaluation happens on the shared fluid grid with trapezoid quadrature; path
derivatives default to second-order central differences, matching the
quadrature order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    GridMismatchError,
    SigmaSingularError,
    SingularEndpointCovarianceError,
)
from .fluid import (
    FluidSolution,
    TiltControl,
    grids_match,
    propagator_to_end,
    solve_lyapunov,
    solve_tilted_ode,
)

SIGMA_RCOND = 1e-10
RANGE_TOL = 1e-6  # relative residual above which a path is unreachable


@dataclass(frozen=True)
class CandidatePath:
    """Grid path f with f(0) = 0; derivative optional (else central differences)."""

    grid: np.ndarray
    f: np.ndarray                 # (M+1, d)
    df: np.ndarray | None = None  # analytic derivative, same shape

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        if f.ndim == 1:
            f = f.reshape(-1, 1)
        object.__setattr__(self, "f", f)
        if self.df is not None:
            df = np.asarray(self.df, dtype=np.float64)
            if df.ndim == 1:
                df = df.reshape(-1, 1)
            if df.shape != f.shape:
                raise ValueError("df must match f in shape")
            object.__setattr__(self, "df", df)
        if f.shape[0] != len(self.grid):
            raise ValueError("f must have one row per grid point")
        if np.any(f[0] != 0.0):
            raise ValueError("candidate paths are pinned at f(0) = 0")
        if not np.all(np.isfinite(f)):
            raise ValueError("candidate path has nonfinite entries")

    @property
    def dimension(self) -> int:
        return self.f.shape[1]

    def f_prime(self) -> np.ndarray:
        if self.df is not None:
            return self.df
        return np.gradient(self.f, self.grid, axis=0, edge_order=2)

    def scaled(self, c: float) -> "CandidatePath":
        return CandidatePath(self.grid, c * self.f, None if self.df is None else c * self.df)


@dataclass(frozen=True)
class RateReport:
    """Outcome of a rate evaluation: value, representer path, feasibility residual."""

    value: float
    psi: np.ndarray | None
    residual: float
    method: str  # closed | degenerate | variational_lb

    def __post_init__(self):
        if self.value < 0 and np.isfinite(self.value):
            raise ValueError("rate value must be nonnegative")


def _check_grids(fluid: FluidSolution, grid: np.ndarray):
    if not grids_match(fluid.grid, grid):
        raise GridMismatchError("path grid differs from the fluid grid")


def _trapz_weights(grid: np.ndarray) -> np.ndarray:
    w = np.empty(len(grid))
    h = np.diff(grid)
    w[0] = h[0] / 2
    w[-1] = h[-1] / 2
    w[1:-1] = (h[:-1] + h[1:]) / 2
    return w


def _residual_rhs(fluid: FluidSolution, path: CandidatePath) -> np.ndarray:
    """f' - b f on the grid."""
    fp = path.f_prime()
    bf = np.einsum("mij,mj->mi", fluid.b, path.f)
    return fp - bf


def _sigma_min_max_eig(fluid: FluidSolution) -> tuple[float, float]:
    eigs = np.linalg.eigvalsh(fluid.sigma)
    return float(eigs.min()), float(eigs.max())


def _require_invertible_sigma(fluid: FluidSolution):
    lo, hi = _sigma_min_max_eig(fluid)
    if lo <= SIGMA_RCOND * max(hi, 1e-300):
        raise SigmaSingularError(
            f"sigma has eigenvalue {lo:.3e} (max {hi:.3e}); use the degenerate form"
        )


def pairing_linear(fluid: FluidSolution, f: np.ndarray, g: np.ndarray) -> float:
    """f(T).g(T) - int f.g' - int (b f).g with the piecewise-linear reading of g.

    The f.g' term uses exact per-cell slopes of g paired with cell-average f, so
    the discrete product rule holds and the pairing is exactly linear in g.
    """
    grid = fluid.grid
    w = _trapz_weights(grid)
    term_end = float(f[-1] @ g[-1])
    dg = np.diff(g, axis=0)
    fbar = 0.5 * (f[:-1] + f[1:])
    term_fgp = float(np.sum(fbar * dg))
    bf = np.einsum("mij,mj->mi", fluid.b, f)
    term_bfg = float(np.sum(w[:, None] * bf * g))
    return term_end - term_fgp - term_bfg


def energy_quadratic(fluid: FluidSolution, g: np.ndarray) -> float:
    """int g^T sigma g with trapezoid weights."""
    w = _trapz_weights(fluid.grid)
    q = np.einsum("mi,mij,mj->m", g, fluid.sigma, g)
    return float(np.sum(w * q))


def variational_value(fluid: FluidSolution, path: CandidatePath, g: TiltControl) -> float:
    """Test-function value L1(f, g) - L2(g)/2; a lower bound on the rate at f."""
    _check_grids(fluid, path.grid)
    _check_grids(fluid, g.grid)
    return pairing_linear(fluid, path.f, g.values) - 0.5 * energy_quadratic(fluid, g.values)


def rate_closed_form(fluid: FluidSolution, path: CandidatePath) -> RateReport:
    """Rate via the inverse-covariance quadratic form (needs sigma invertible)."""
    _check_grids(fluid, path.grid)
    _require_invertible_sigma(fluid)
    rhs = _residual_rhs(fluid, path)
    psi = np.linalg.solve(fluid.sigma, rhs[..., None])[..., 0]
    w = _trapz_weights(fluid.grid)
    integrand = np.einsum("mi,mi->m", rhs, psi)
    value = 0.5 * float(np.sum(w * integrand))
    return RateReport(value=max(value, 0.0), psi=psi, residual=0.0, method="closed")


def rate_degenerate(fluid: FluidSolution, path: CandidatePath) -> RateReport:
    """Rate via the minimum-norm representer; +inf when f' - b f leaves range(sigma)."""
    _check_grids(fluid, path.grid)
    rhs = _residual_rhs(fluid, path)
    m1, d = rhs.shape
    psi = np.empty((m1, d))
    resid = np.empty(m1)
    evals, evecs = np.linalg.eigh(fluid.sigma)
    cutoff = SIGMA_RCOND * np.maximum(evals.max(axis=1), 1e-300)
    for k in range(m1):
        lam = evals[k]
        v = evecs[k]
        proj = v.T @ rhs[k]
        inv = np.where(lam > cutoff[k], 1.0 / np.maximum(lam, 1e-300), 0.0)
        psi[k] = v @ (inv * proj)
        resid[k] = np.linalg.norm(fluid.sigma[k] @ psi[k] - rhs[k])
    scale = max(float(np.max(np.linalg.norm(rhs, axis=1))), 1e-300)
    max_resid = float(resid.max())
    if max_resid > RANGE_TOL * scale:
        return RateReport(value=np.inf, psi=None, residual=max_resid, method="degenerate")
    w = _trapz_weights(fluid.grid)
    q = np.einsum("mi,mij,mj->m", psi, fluid.sigma, psi)
    value = 0.5 * float(np.sum(w * q))
    return RateReport(value=max(value, 0.0), psi=psi, residual=max_resid, method="degenerate")


def _tent_basis(grid: np.ndarray, m: int) -> np.ndarray:
    """m+1 hat functions on knots j*T/m evaluated on the grid, shape (m+1, M+1)."""
    t_end = grid[-1]
    knots = np.linspace(0.0, t_end, m + 1)
    width = t_end / m
    vals = 1.0 - np.abs(grid[None, :] - knots[:, None]) / width
    return np.maximum(vals, 0.0)


def variational_sup(fluid: FluidSolution, path: CandidatePath, basis_size: int = 32,
                    restarts: int = 0, seed: int = 0) -> RateReport:
    """Certified lower bound: maximize (L1(g))^2 / (2 L2(g)) over a tent-function span.

    The span optimum is the solution of the Gram system Q c = a, evaluated with
    the per-direction scaling optimum; extra random directions (restarts) can
    only raise the reported maximum.  Nested knot sets make the bound monotone
    in basis_size.
    """
    _check_grids(fluid, path.grid)
    if basis_size < 1:
        raise ValueError("basis_size must be >= 1")
    grid = fluid.grid
    d = fluid.dimension
    tents = _tent_basis(grid, basis_size)        # (m+1, M+1)
    nb = tents.shape[0] * d
    basis = np.zeros((nb, len(grid), d))
    for j in range(tents.shape[0]):
        for k in range(d):
            basis[j * d + k, :, k] = tents[j]
    a = np.array([pairing_linear(fluid, path.f, gb) for gb in basis])
    w = _trapz_weights(grid)
    sig_g = np.einsum("bmk,mkl->bml", basis, fluid.sigma)
    q = np.einsum("aml,bml,m->ab", basis, sig_g, w)

    def direction_bound(gvals):
        l2 = energy_quadratic(fluid, gvals)
        if l2 <= 0.0:
            return 0.0
        l1 = pairing_linear(fluid, path.f, gvals)
        return l1 * l1 / (2.0 * l2)

    best = 0.0
    best_g = np.zeros((len(grid), d))
    # per-direction optimum for each basis element
    for i in range(nb):
        if q[i, i] > 0 and a[i] * a[i] / (2 * q[i, i]) > best:
            best = a[i] * a[i] / (2 * q[i, i])
            best_g = basis[i] * (a[i] / q[i, i])
    # span optimum via the Gram system
    coef, *_ = np.linalg.lstsq(q, a, rcond=1e-12)
    g_star = np.einsum("b,bmk->mk", coef, basis)
    val = direction_bound(g_star)
    if val > best:
        best = val
        best_g = g_star
    if restarts > 0:
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        for _ in range(restarts):
            c = rng.standard_normal(nb)
            gr = np.einsum("b,bmk->mk", c, basis)
            val = direction_bound(gr)
            if val > best:
                best = val
                best_g = gr
    return RateReport(value=best, psi=best_g, residual=np.nan, method="variational_lb")


def optimal_tilt(fluid: FluidSolution, path: CandidatePath) -> TiltControl:
    """Representer sigma^{-1}(f' - b f) as a tilt control (invertible sigma only)."""
    _check_grids(fluid, path.grid)
    _require_invertible_sigma(fluid)
    rhs = _residual_rhs(fluid, path)
    psi = np.linalg.solve(fluid.sigma, rhs[..., None])[..., 0]
    return TiltControl(fluid.grid, psi)


def endpoint_min_cost(fluid: FluidSolution, z) -> tuple[CandidatePath, RateReport]:
    """Cheapest path reaching endpoint z: value z^T S(T)^{-1} z / 2.

    The minimizer's representer is psi_s = Phi(T, s)^T S(T)^{-1} z and the path
    solves the driven linear flow, so its derivative is available analytically.
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if fluid.Sigma_ou is None:
        fluid = solve_lyapunov(fluid)
    end_cov = fluid.Sigma_ou[-1]
    evals = np.linalg.eigvalsh(end_cov)
    if evals.min() <= 1e-10 * max(evals.max(), 1e-300):
        raise SingularEndpointCovarianceError(
            f"endpoint covariance eigenvalues span [{evals.min():.3e}, {evals.max():.3e}]"
        )
    nu = np.linalg.solve(end_cov, z)
    phi_end = propagator_to_end(fluid)
    psi = np.einsum("mij,i->mj", phi_end, nu)
    tilt = TiltControl(fluid.grid, psi)
    f = solve_tilted_ode(fluid, tilt)
    df = np.einsum("mij,mj->mi", fluid.b, f) + np.einsum("mij,mj->mi", fluid.sigma, psi)
    value = 0.5 * float(z @ nu)
    path = CandidatePath(fluid.grid, f, df=df)
    report = RateReport(value=max(value, 0.0), psi=psi, residual=0.0, method="closed")
    return path, report


def endpoint_min_cost_qp(fluid: FluidSolution, z) -> float:
    """Brute-force check of endpoint_min_cost: trapezoidal-collocation QP via its KKT system.

    Independent of the propagator construction; agreement is expected at the
    quadrature order of the grid.
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    grid = fluid.grid
    m1 = len(grid)
    mcells = m1 - 1
    d = fluid.dimension
    h = np.diff(grid)
    w = _trapz_weights(grid)
    n_psi = m1 * d
    n_f = mcells * d  # f_1 .. f_M (f_0 = 0 eliminated)
    nvar = n_psi + n_f

    def psi_ix(k):
        return slice(k * d, (k + 1) * d)

    def f_ix(k):  # k = 1..M
        return slice(n_psi + (k - 1) * d, n_psi + k * d)

    H = sp.lil_matrix((nvar, nvar))
    for k in range(m1):
        H[psi_ix(k), psi_ix(k)] = w[k] * fluid.sigma[k]
    A = sp.lil_matrix((mcells * d + d, nvar))
    rhs = np.zeros(mcells * d + d)
    eye = np.eye(d)
    for k in range(mcells):
        r = slice(k * d, (k + 1) * d)
        hk = h[k] / 2.0
        # f_{k+1} - f_k - hk (b_k f_k + s_k psi_k + b_{k+1} f_{k+1} + s_{k+1} psi_{k+1}) = 0
        A[r, psi_ix(k)] = -hk * fluid.sigma[k]
        A[r, psi_ix(k + 1)] = -hk * fluid.sigma[k + 1]
        if k > 0:
            A[r, f_ix(k)] = -eye - hk * fluid.b[k]
        A[r, f_ix(k + 1)] = eye - hk * fluid.b[k + 1]
    r_end = slice(mcells * d, mcells * d + d)
    A[r_end, f_ix(mcells)] = eye
    rhs[mcells * d:] = z
    kkt = sp.bmat([[H.tocsr(), A.tocsr().T], [A.tocsr(), None]], format="csc")
    full_rhs = np.concatenate([np.zeros(nvar), rhs])
    sol = spla.spsolve(kkt, full_rhs)
    x = sol[:nvar]
    return float(0.5 * x @ (H.tocsr() @ x))
