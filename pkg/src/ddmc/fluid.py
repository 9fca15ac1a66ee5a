"""Deterministic limit objects: fluid ODE, coefficient paths, limit covariance.

Everything lives on one shared uniform time grid.  The integrator is classical
fixed-step 4th-order Runge-Kutta; coefficient matrices are evaluated
analytically at the stage states, so convergence stays 4th order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    GridMismatchError,
    LeftDomainError,
    ParamsOutOfRangeError,
)
from .model import ValidatedModel

PSD_TOL = 1e-10
GRID_ATOL = 1e-12


def uniform_grid(t0: float, h: float) -> np.ndarray:
    """Uniform grid on [0, t0]; h must divide t0."""
    if h <= 0 or t0 <= 0:
        raise ValueError("need t0 > 0 and h > 0")
    m = int(round(t0 / h))
    if m < 1 or abs(m * h - t0) > 1e-9 * max(1.0, t0):
        raise ValueError(f"step h={h} does not divide t0={t0}")
    return np.linspace(0.0, t0, m + 1)


def grids_match(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.allclose(a, b, atol=GRID_ATOL, rtol=0.0))


def _check_psd(mats: np.ndarray, label: str, tol: float = PSD_TOL):
    for k, m in enumerate(mats):
        if not np.allclose(m, m.T, atol=1e-12):
            raise LeftDomainError(f"{label}[{k}] is not symmetric")
        w = np.linalg.eigvalsh(m)
        if w.min() < -tol:
            raise LeftDomainError(f"{label}[{k}] has eigenvalue {w.min():.3e} < -{tol:g}")


@dataclass(frozen=True)
class TiltControl:
    """Grid-sampled control g: [0, T0] -> R^d, interpreted piecewise-linearly."""

    grid: np.ndarray
    values: np.ndarray  # (M+1, d)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if g.ndim != 1 or v.shape[0] != g.shape[0]:
            raise ValueError("values must have one row per grid point")
        if not np.all(np.isfinite(v)):
            raise ValueError("tilt control values must be finite")
        g.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def t_end(self) -> float:
        return float(self.grid[-1])

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, grid, value) -> "TiltControl":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(np.asarray(grid, float), np.tile(value, (len(grid), 1)))

    @classmethod
    def from_function(cls, grid, fn) -> "TiltControl":
        vals = np.array([np.atleast_1d(fn(t)) for t in grid], dtype=np.float64)
        return cls(np.asarray(grid, float), vals)

    def value_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.empty(t.shape + (self.dimension,))
        for k in range(self.dimension):
            out[..., k] = np.interp(t, self.grid, self.values[:, k])
        return out

    def slopes(self) -> np.ndarray:
        """Exact piecewise slope on each grid cell, shape (M, d)."""
        dt = np.diff(self.grid)[:, None]
        return np.diff(self.values, axis=0) / dt

    def scaled(self, c: float) -> "TiltControl":
        return TiltControl(self.grid, c * self.values)


@dataclass(frozen=True)
class FluidSolution:
    """Fluid path with its coefficient matrices (and, optionally, the limit covariance)."""

    model: ValidatedModel
    grid: np.ndarray
    X: np.ndarray          # (M+1, d)
    b: np.ndarray          # (M+1, d, d)
    sigma: np.ndarray      # (M+1, d, d)
    Sigma_ou: np.ndarray | None = None

    def __post_init__(self):
        for arr in (self.grid, self.X, self.b, self.sigma):
            arr.setflags(write=False)
        if self.Sigma_ou is not None:
            self.Sigma_ou.setflags(write=False)

    @property
    def t_end(self) -> float:
        return float(self.grid[-1])

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def with_sigma_ou(self, sig: np.ndarray) -> "FluidSolution":
        return FluidSolution(self.model, self.grid, self.X, self.b, self.sigma, sig)


def solve_fluid(model: ValidatedModel, t0: float, h: float) -> FluidSolution:
    """Integrate the fluid ODE dX/dt = sum_l l F_l(X) and fill b, sigma along it."""
    grid = uniform_grid(t0, h)
    d = model.dimension
    X = np.empty((len(grid), d))
    X[0] = model.x0
    x = model.x0.copy()
    deriv = model.drift_unchecked
    for k in range(len(grid) - 1):
        t, hk = grid[k], grid[k + 1] - grid[k]
        k1 = deriv(x)
        k2 = deriv(x + 0.5 * hk * k1)
        k3 = deriv(x + 0.5 * hk * k2)
        k4 = deriv(x + hk * k3)
        x = x + (hk / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not model.domain.contains(x, tol=1e-9):
            raise LeftDomainError(f"fluid path left the domain at t={grid[k + 1]:.6g}: X={x}")
        X[k + 1] = x
    b = np.array([model.b_matrix_unchecked(xk) for xk in X])
    sigma = np.array([model.sigma_matrix_unchecked(xk) for xk in X])
    _check_psd(sigma, "sigma")
    return FluidSolution(model=model, grid=grid, X=X, b=b, sigma=sigma)


def solve_lyapunov(fluid: FluidSolution) -> FluidSolution:
    """Covariance of the Gaussian limit fluctuation: S' = bS + Sb^T + sigma, S(0) = 0.

    Integrated jointly with X so stage coefficients are analytic; the covariance
    is symmetrized after every step.
    """
    model = fluid.model
    d = model.dimension
    grid = fluid.grid
    S = np.zeros((len(grid), d, d))
    x = model.x0.copy()
    s = np.zeros((d, d))

    def deriv(xv, sv):
        bm = model.b_matrix_unchecked(xv)
        return model.drift_unchecked(xv), bm @ sv + sv @ bm.T + model.sigma_matrix_unchecked(xv)

    for k in range(len(grid) - 1):
        hk = grid[k + 1] - grid[k]
        dx1, ds1 = deriv(x, s)
        dx2, ds2 = deriv(x + 0.5 * hk * dx1, s + 0.5 * hk * ds1)
        dx3, ds3 = deriv(x + 0.5 * hk * dx2, s + 0.5 * hk * ds2)
        dx4, ds4 = deriv(x + hk * dx3, s + hk * ds3)
        x = x + (hk / 6.0) * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
        s = s + (hk / 6.0) * (ds1 + 2 * ds2 + 2 * ds3 + ds4)
        s = 0.5 * (s + s.T)
        S[k + 1] = s
    _check_psd(S, "Sigma_ou")
    return fluid.with_sigma_ou(S)


def solve_tilted_ode(fluid: FluidSolution, g: TiltControl) -> np.ndarray:
    """Solve y' = b_t y + sigma_t g_t, y(0) = 0 on the shared grid."""
    if not grids_match(fluid.grid, g.grid):
        raise GridMismatchError("tilt control grid differs from the fluid grid")
    model = fluid.model
    d = model.dimension
    grid = fluid.grid
    Y = np.zeros((len(grid), d))
    x = model.x0.copy()
    y = np.zeros(d)

    def deriv(xv, yv, gv):
        bm = model.b_matrix_unchecked(xv)
        sm = model.sigma_matrix_unchecked(xv)
        return model.drift_unchecked(xv), bm @ yv + sm @ gv

    gv = g.values
    for k in range(len(grid) - 1):
        hk = grid[k + 1] - grid[k]
        g0, g1 = gv[k], gv[k + 1]
        gm = 0.5 * (g0 + g1)
        dx1, dy1 = deriv(x, y, g0)
        dx2, dy2 = deriv(x + 0.5 * hk * dx1, y + 0.5 * hk * dy1, gm)
        dx3, dy3 = deriv(x + 0.5 * hk * dx2, y + 0.5 * hk * dy2, gm)
        dx4, dy4 = deriv(x + hk * dx3, y + hk * dy3, g1)
        x = x + (hk / 6.0) * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
        y = y + (hk / 6.0) * (dy1 + 2 * dy2 + 2 * dy3 + dy4)
        Y[k + 1] = y
    return Y


def propagator_to_end(fluid: FluidSolution) -> np.ndarray:
    """State-transition matrices Phi(T0, t_k) of y' = b_t y, one per grid point.

    Computed from the forward propagator Phi(t_k, 0) (integrated jointly with X)
    via Phi(T0, s) = Phi(T0, 0) Phi(s, 0)^{-1}.
    """
    model = fluid.model
    d = model.dimension
    grid = fluid.grid
    Phi = np.empty((len(grid), d, d))
    Phi[0] = np.eye(d)
    x = model.x0.copy()
    p = np.eye(d)

    def deriv(xv, pv):
        return model.drift_unchecked(xv), model.b_matrix_unchecked(xv) @ pv

    for k in range(len(grid) - 1):
        hk = grid[k + 1] - grid[k]
        dx1, dp1 = deriv(x, p)
        dx2, dp2 = deriv(x + 0.5 * hk * dx1, p + 0.5 * hk * dp1)
        dx3, dp3 = deriv(x + 0.5 * hk * dx2, p + 0.5 * hk * dp2)
        dx4, dp4 = deriv(x + hk * dx3, p + hk * dp3)
        x = x + (hk / 6.0) * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
        p = p + (hk / 6.0) * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
        Phi[k + 1] = p
    end = Phi[-1]
    out = np.empty_like(Phi)
    for k in range(len(grid)):
        out[k] = np.linalg.solve(Phi[k].T, end.T).T
    return out


# -- closed-form reference solutions ------------------------------------------


@dataclass(frozen=True)
class OracleValues:
    """Reference path values: X plus the coefficient matrices where available."""

    t: np.ndarray
    X: np.ndarray           # (T, d)
    b: np.ndarray           # (T, d, d)
    sigma: np.ndarray       # (T, d, d)
    sigma_inv: np.ndarray | None


def closed_form_oracle(name: str, params: dict, t) -> OracleValues:
    """Evaluate the printed closed-form solution of a built-in model at times t."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if name == "contact":
        return _oracle_contact(params, t)
    if name == "sir":
        return _oracle_sir(params, t)
    if name == "chemical":
        return _oracle_chemical(params, t)
    if name == "yule":
        return _oracle_yule(params, t)
    raise ValueError(f"no closed form for '{name}'")


def _oracle_contact(params, t):
    lam = float(params["lambda"])
    x0 = float(params["x0"])
    if lam == 1.0:
        X = x0 / (x0 * t + 1.0)
    else:
        em = np.exp((lam - 1.0) * t)
        X = (lam - 1.0) * x0 * em / ((lam - 1.0) - lam * x0 + lam * x0 * em)
    b = lam - 2.0 * lam * X - 1.0
    sig = X * (lam + 1.0 - lam * X)
    return OracleValues(
        t=t,
        X=X[:, None],
        b=b[:, None, None],
        sigma=sig[:, None, None],
        sigma_inv=(1.0 / sig)[:, None, None],
    )


def _oracle_sir(params, t):
    lam = float(params["lambda"])
    s0 = float(params["s0"])
    i0 = float(params["i0"])

    def phi_rhs(_t, phi):
        return -phi + i0 + s0 * (1.0 - np.exp(-lam * phi))

    t_end = float(t.max()) if t.size else 0.0
    sol = solve_ivp(
        phi_rhs, (0.0, max(t_end, 1e-12)), [0.0],
        method="DOP853", rtol=1e-12, atol=1e-14, t_eval=np.maximum(t, 0.0), dense_output=False,
    )
    if not sol.success:
        raise ParamsOutOfRangeError(f"time-change ODE failed: {sol.message}")
    phi = sol.y[0]
    S = s0 * np.exp(-lam * phi)
    I = -phi + i0 + s0 * (1.0 - np.exp(-lam * phi))
    X = np.stack([S, I], axis=1)
    b = np.empty((len(t), 2, 2))
    b[:, 0, 0] = -lam * I
    b[:, 0, 1] = -lam * S
    b[:, 1, 0] = lam * I
    b[:, 1, 1] = lam * S - 1.0
    sig = np.empty((len(t), 2, 2))
    a = lam * S * I
    sig[:, 0, 0] = a
    sig[:, 0, 1] = -a
    sig[:, 1, 0] = -a
    sig[:, 1, 1] = a + I
    inv = np.empty((len(t), 2, 2))
    pref = 1.0 / (lam * S * I**2)
    inv[:, 0, 0] = pref * (a + I)
    inv[:, 0, 1] = pref * a
    inv[:, 1, 0] = pref * a
    inv[:, 1, 1] = pref * a
    return OracleValues(t=t, X=X, b=b, sigma=sig, sigma_inv=inv)


def _oracle_chemical(params, t):
    lam = float(params["lambda"])
    mu = float(params["mu"])
    x0 = float(params["x0"])
    y0 = float(params["y0"])
    z0 = float(params["z0"])
    # roots of c^2 + (y0 - x0 + mu/lam) c - mu (x0 + z0)/lam = 0, ordered c1 > c2
    pcoef = y0 - x0 + mu / lam
    qcoef = -mu * (x0 + z0) / lam
    disc = pcoef * pcoef - 4.0 * qcoef
    if disc <= 1e-12:
        raise ParamsOutOfRangeError("equilibrium roots coincide; closed form undefined")
    c1 = (-pcoef + np.sqrt(disc)) / 2.0
    c2 = (-pcoef - np.sqrt(disc)) / 2.0
    rho0 = (x0 - c1) / (x0 - c2)
    rho = rho0 * np.exp(-lam * (c1 - c2) * t)
    # monotone bisection on (X - c1)/(X - c2) = rho, sign tracked by rho itself
    lo = np.full_like(t, min(x0, c1))
    hi = np.full_like(t, max(x0, c1))
    if abs(x0 - c1) < 1e-15:
        X1 = np.full_like(t, x0)
    else:
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            val = (mid - c1) / (mid - c2) - rho
            # (X-c1)/(X-c2) is increasing in X on the bracket (c2 < 0 < X)
            take_hi = val > 0
            hi = np.where(take_hi, mid, hi)
            lo = np.where(take_hi, lo, mid)
            if np.max(hi - lo) < 1e-13:
                break
        X1 = 0.5 * (lo + hi)
    X2 = X1 + (y0 - x0)
    X3 = (x0 + z0) - X1
    X = np.stack([X1, X2, X3], axis=1)
    b = np.empty((len(t), 3, 3))
    b[:, 0, 0] = -lam * X2
    b[:, 0, 1] = -lam * X1
    b[:, 0, 2] = mu
    b[:, 1] = b[:, 0]
    b[:, 2] = -b[:, 0]
    a = lam * X1 * X2 + mu * X3
    v = np.array([1.0, 1.0, -1.0])
    sig = a[:, None, None] * np.einsum("i,j->ij", v, v)[None, :, :]
    return OracleValues(t=t, X=X, b=b, sigma=sig, sigma_inv=None)


def _oracle_yule(params, t):
    lam = float(params["lambda"])
    x0 = float(params["x0"])
    X = x0 * np.exp(lam * t)
    sig = lam * X
    return OracleValues(
        t=t,
        X=X[:, None],
        b=np.full((len(t), 1, 1), lam),
        sigma=sig[:, None, None],
        sigma_inv=(1.0 / sig)[:, None, None],
    )
