"""Declaration, validation and evaluation of density-dependent Markov chain models.

A model is a finite set of integer jump vectors with polynomial jump rates on a
convex domain.  Rates are evaluated at density scale: a chain at integer state
``y`` with scale ``n`` fires jump ``l`` at rate ``n * F_l(y / n)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ModelValidationError, OutsideDomainError

# Negative polynomial evaluations up to this magnitude are treated as
# floating-point noise and clamped to zero.
RATE_CLAMP = 1e-12

# Tolerance for domain membership and boundary-rate checks.
DOMAIN_TOL = 1e-9

# Scales n at which the lattice boundary-consistency condition is probed.
_BOUNDARY_NS = (1, 2, 3, 5, 10, 100)


class Polynomial:
    """Sparse multivariate polynomial given as (exponent-vector, coefficient) terms."""

    def __init__(self, dimension: int, terms: Sequence[tuple[Sequence[int], float]]):
        self.dimension = int(dimension)
        exps = []
        coeffs = []
        for e, c in terms:
            e = tuple(int(k) for k in e)
            if len(e) != self.dimension:
                raise ValueError(f"exponent vector {e} has wrong length for d={dimension}")
            if any(k < 0 for k in e):
                raise ValueError(f"negative exponent in {e}")
            exps.append(e)
            coeffs.append(float(c))
        self.exponents = np.array(exps, dtype=np.int64).reshape(len(exps), self.dimension)
        self.coefficients = np.array(coeffs, dtype=np.float64)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if self.coefficients.size == 0:
            return 0.0
        return float(np.sum(self.coefficients * np.prod(x ** self.exponents, axis=1)))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros(self.dimension)
        for e, c in zip(self.exponents, self.coefficients):
            for k in range(self.dimension):
                if e[k] == 0:
                    continue
                ek = e.copy()
                ek[k] -= 1
                g[k] += c * e[k] * np.prod(x ** ek)
        return g

    def constant_term(self) -> float:
        mask = np.all(self.exponents == 0, axis=1)
        return float(np.sum(self.coefficients[mask]))

    def __repr__(self):
        parts = [
            f"{c:g}*x^{tuple(int(k) for k in e)}"
            for e, c in zip(self.exponents, self.coefficients)
        ]
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class Domain:
    """Closed convex set: box bounds intersected with half-spaces a.x <= c."""

    lower: np.ndarray
    upper: np.ndarray
    halfspace_a: np.ndarray  # (m, d)
    halfspace_c: np.ndarray  # (m,)

    @classmethod
    def build(cls, dimension, halfspaces=(), lower=None, upper=None) -> "Domain":
        d = int(dimension)
        lo = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
        hi = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
        if halfspaces:
            a = np.array([h[0] for h in halfspaces], dtype=np.float64).reshape(-1, d)
            c = np.array([h[1] for h in halfspaces], dtype=np.float64)
        else:
            a = np.zeros((0, d))
            c = np.zeros(0)
        for arr in (lo, hi, a, c):
            arr.setflags(write=False)
        return cls(lo, hi, a, c)

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol: float = DOMAIN_TOL) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        if self.halfspace_a.shape[0]:
            return bool(np.all(self.halfspace_a @ x <= self.halfspace_c + tol))
        return True

    def sample_window(self, x0) -> tuple[np.ndarray, np.ndarray]:
        """Finite box covering the operating range (caps unbounded directions)."""
        x0 = np.asarray(x0, dtype=np.float64)
        pad = 2.0 * (1.0 + np.abs(x0))
        lo = np.where(np.isfinite(self.lower), self.lower, x0 - pad)
        hi = np.where(np.isfinite(self.upper), self.upper, x0 + pad)
        return lo, hi

    def sample(self, count: int, seed: int, x0) -> np.ndarray:
        """Deterministic low-discrepancy sample of the domain (Halton, rejected)."""
        lo, hi = self.sample_window(x0)
        engine = qmc.Halton(d=self.dimension, scramble=True, seed=seed)
        points = []
        budget = 0
        while len(points) < count and budget < 200 * count + 4096:
            block = qmc.scale(engine.random(256), lo, hi)
            budget += 256
            for p in block:
                if self.contains(p):
                    points.append(p)
                    if len(points) == count:
                        break
        return np.array(points).reshape(len(points), self.dimension)

    def corners(self, x0) -> np.ndarray:
        """Vertices of the (window-capped) polytope, found by intersecting d active planes."""
        lo, hi = self.sample_window(x0)
        d = self.dimension
        planes = []  # rows (a, c) of a.x == c candidates
        for k in range(d):
            e = np.zeros(d)
            e[k] = 1.0
            planes.append((-e, -lo[k]))
            planes.append((e, hi[k]))
        for a, c in zip(self.halfspace_a, self.halfspace_c):
            planes.append((np.asarray(a, dtype=np.float64), float(c)))
        found = []
        for combo in itertools.combinations(range(len(planes)), d):
            A = np.array([planes[i][0] for i in combo])
            b = np.array([planes[i][1] for i in combo])
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            v = np.linalg.solve(A, b)
            if self.contains(v) and np.all(v >= lo - DOMAIN_TOL) and np.all(v <= hi + DOMAIN_TOL):
                if not any(np.allclose(v, w, atol=1e-10) for w in found):
                    found.append(v)
        return np.array(found).reshape(len(found), d)


@dataclass(frozen=True)
class ModelSpec:
    """Raw (unvalidated) model declaration."""

    dimension: int
    jumps: tuple  # tuple of int tuples
    rates: tuple  # Polynomial per jump
    domain: Domain
    x0: np.ndarray
    name: str = "model"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))
        self.x0.setflags(write=False)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Sampled bound on the L1 norm of every rate gradient over the domain."""

    k1: float


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    detail: str

    def __str__(self):
        return f"{self.code}: {self.detail}"


@dataclass(frozen=True)
class ValidatedModel:
    """Immutable validated model; safe to share across workers.

    All evaluation methods are pure functions of the density-scale state.
    """

    spec: ModelSpec
    lipschitz: LipschitzEstimate

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def jumps(self) -> np.ndarray:
        return self._jump_array

    @property
    def domain(self) -> Domain:
        return self.spec.domain

    @property
    def x0(self) -> np.ndarray:
        return self.spec.x0

    @property
    def name(self) -> str:
        return self.spec.name

    def __post_init__(self):
        j = np.array([list(l) for l in self.spec.jumps], dtype=np.int64)
        j = j.reshape(len(self.spec.jumps), self.spec.dimension)
        j.setflags(write=False)
        object.__setattr__(self, "_jump_array", j)

    # -- pointwise evaluation -------------------------------------------------

    def _check_domain(self, x):
        if not self.spec.domain.contains(x):
            raise OutsideDomainError(f"x={np.asarray(x)} is outside the model domain")

    def rates(self, x) -> np.ndarray:
        """Density-scale jump rates ``F_l(x)``, tiny negatives clamped to zero."""
        self._check_domain(x)
        vals = np.array([F(x) for F in self.spec.rates])
        vals[(vals < 0) & (vals >= -RATE_CLAMP)] = 0.0
        return vals

    def rate_map(self, x) -> dict:
        return {tuple(l): r for l, r in zip(self.spec.jumps, self.rates(x))}

    # Unchecked variants skip the domain test so ODE integrator stages may poke
    # a hair outside G; tiny negatives are still clamped.
    def rates_unchecked(self, x) -> np.ndarray:
        vals = np.array([F(x) for F in self.spec.rates])
        return np.maximum(vals, 0.0)

    def drift_unchecked(self, x) -> np.ndarray:
        return self.jumps.T.astype(np.float64) @ self.rates_unchecked(x)

    def b_matrix_unchecked(self, x) -> np.ndarray:
        d = self.dimension
        b = np.zeros((d, d))
        for l, F in zip(self.jumps, self.spec.rates):
            b += np.outer(l.astype(np.float64), F.gradient(x))
        return b

    def sigma_matrix_unchecked(self, x) -> np.ndarray:
        r = self.rates_unchecked(x)
        d = self.dimension
        s = np.zeros((d, d))
        for l, rl in zip(self.jumps, r):
            s += rl * np.outer(l, l)
        return s

    def drift(self, x) -> np.ndarray:
        """Fluid drift: sum of jump * rate."""
        return self.jumps.T.astype(np.float64) @ self.rates(x)

    def b_matrix(self, x) -> np.ndarray:
        """Drift linearization: sum of outer(jump, grad F) at x (analytic gradients)."""
        self._check_domain(x)
        d = self.dimension
        b = np.zeros((d, d))
        for l, F in zip(self.jumps, self.spec.rates):
            b += np.outer(l.astype(np.float64), F.gradient(x))
        return b

    def sigma_matrix(self, x) -> np.ndarray:
        """Fluctuation covariance rate: sum of rate * outer(jump, jump); symmetric PSD."""
        r = self.rates(x)
        d = self.dimension
        s = np.zeros((d, d))
        for l, rl in zip(self.jumps, r):
            s += rl * np.outer(l, l)
        return s

    # -- integer start state --------------------------------------------------

    def start_state(self, n: int) -> tuple[np.ndarray, bool]:
        """Componentwise rounding of n*x0, projected back into nG if rounding exits.

        Returns (state, exact) where exact means no rounding or projection was
        needed.
        """
        target = n * self.spec.x0
        y = np.rint(target).astype(np.int64)
        exact = bool(np.all(np.abs(y - target) < 1e-9))
        dom = self.spec.domain
        lo = np.where(np.isfinite(dom.lower), np.ceil(n * dom.lower - 1e-9), -np.inf)
        hi = np.where(np.isfinite(dom.upper), np.floor(n * dom.upper + 1e-9), np.inf)
        y = np.clip(y, lo, hi).astype(np.int64)
        # greedy half-space repair: push the largest-contribution coordinate down
        for _ in range(64):
            if dom.contains(y / n):
                break
            viol = dom.halfspace_a @ (y / n) - dom.halfspace_c
            worst = int(np.argmax(viol))
            a = dom.halfspace_a[worst]
            moved = False
            for j in np.argsort(-np.abs(a)):
                if a[j] == 0.0:
                    break
                step = -1 if a[j] > 0 else 1
                cand = y.copy()
                cand[j] += step
                if lo[j] <= cand[j] <= hi[j]:
                    y = cand
                    moved = True
                    break
            if not moved:
                raise OutsideDomainError(f"cannot project start state {y} into {n}G")
        else:
            raise OutsideDomainError(f"cannot project start state {y} into {n}G")
        exact = exact and bool(np.all(np.abs(y - target) < 1e-9))
        return y, exact

    # -- flattened arrays for the jit kernels ---------------------------------

    def kernel_args(self):
        """(jumps, exps, coeffs, term_start, box_lo, box_hi, hs_a, hs_c) as plain arrays."""
        exps = []
        coeffs = []
        term_start = [0]
        for F in self.spec.rates:
            exps.append(F.exponents)
            coeffs.append(F.coefficients)
            term_start.append(term_start[-1] + len(F.coefficients))
        exps = np.vstack(exps) if exps else np.zeros((0, self.dimension), dtype=np.int64)
        coeffs = np.concatenate(coeffs) if coeffs else np.zeros(0)
        dom = self.spec.domain
        return (
            self.jumps,
            exps.astype(np.int64),
            coeffs.astype(np.float64),
            np.array(term_start, dtype=np.int64),
            dom.lower.astype(np.float64),
            dom.upper.astype(np.float64),
            dom.halfspace_a.astype(np.float64),
            dom.halfspace_c.astype(np.float64),
        )


def validate_model(spec: ModelSpec, samples: int = 256, seed: int = 0) -> ValidatedModel:
    """Check the model invariants on a deterministic sample of the domain.

    Raises ModelValidationError carrying every violation found.  The checks are:
    nonempty jump set, zero constant terms, nonnegative rates on the sample,
    boundary consistency on lattice points near the sample, start inside the
    domain, and a finite sampled Lipschitz bound.
    """
    issues = []
    d = spec.dimension
    if len(spec.jumps) == 0:
        issues.append(ValidationIssue("EmptyJumpSet", "the jump set is empty"))
        raise ModelValidationError(issues)
    if len(spec.rates) != len(spec.jumps):
        issues.append(ValidationIssue("EmptyJumpSet", "rates and jumps have different lengths"))
        raise ModelValidationError(issues)
    for l, F in zip(spec.jumps, spec.rates):
        c0 = F.constant_term()
        if c0 != 0.0:
            issues.append(
                ValidationIssue("NonzeroConstantTerm", f"jump {tuple(l)} has F({np.zeros(d)})={c0:g}")
            )
    if not spec.domain.contains(spec.x0):
        issues.append(ValidationIssue("StartOutsideDomain", f"x0={spec.x0} is not in the domain"))
    if np.allclose(spec.x0, 0.0):
        issues.append(ValidationIssue("StartOutsideDomain", "x0 must be nonzero"))

    pts = spec.domain.sample(samples, seed, spec.x0)
    corners = spec.domain.corners(spec.x0)
    if corners.size:
        pts = np.vstack([pts, corners, spec.x0.reshape(1, d)])
    else:
        pts = np.vstack([pts, spec.x0.reshape(1, d)])

    k1 = 0.0
    for x in pts:
        for l, F in zip(spec.jumps, spec.rates):
            v = F(x)
            if v < -RATE_CLAMP:
                issues.append(
                    ValidationIssue("NegativeRateAt", f"F_{tuple(l)}({x}) = {v:.3e} < 0")
                )
            k1 = max(k1, float(np.sum(np.abs(F.gradient(x)))))
        # lattice boundary consistency: states that would exit nG must have zero rate
        for n in _BOUNDARY_NS:
            y = np.rint(n * x)
            if not spec.domain.contains(y / n):
                continue
            for l, F in zip(spec.jumps, spec.rates):
                if not spec.domain.contains((y + np.asarray(l)) / n):
                    leak = F(y / n)
                    if abs(leak) > DOMAIN_TOL:
                        issues.append(
                            ValidationIssue(
                                "BoundaryLeak",
                                f"F_{tuple(l)}({y / n}) = {leak:.3e} but jump exits {n}G",
                            )
                        )
    if not np.isfinite(k1):
        issues.append(ValidationIssue("NegativeRateAt", "gradient bound is not finite"))
    if issues:
        # deduplicate identical messages to keep error lists readable
        seen = set()
        unique = [i for i in issues if not (str(i) in seen or seen.add(str(i)))]
        raise ModelValidationError(unique)
    return ValidatedModel(spec=spec, lipschitz=LipschitzEstimate(k1=k1))


# -- built-in models ----------------------------------------------------------


def _contact(lam: float, x0: float) -> ModelSpec:
    return ModelSpec(
        dimension=1,
        jumps=((1,), (-1,)),
        rates=(
            Polynomial(1, [((1,), lam), ((2,), -lam)]),  # lam*x*(1-x)
            Polynomial(1, [((1,), 1.0)]),
        ),
        domain=Domain.build(1, lower=[0.0], upper=[1.0]),
        x0=[x0],
        name="contact",
        params={"lambda": lam, "x0": x0},
    )


def _sir(lam: float, s0: float, i0: float) -> ModelSpec:
    return ModelSpec(
        dimension=2,
        jumps=((0, -1), (-1, 1)),
        rates=(
            Polynomial(2, [((0, 1), 1.0)]),        # recovery at rate I
            Polynomial(2, [((1, 1), lam)]),         # infection at rate lam*S*I
        ),
        domain=Domain.build(2, halfspaces=[([1.0, 1.0], 1.0)], lower=[0.0, 0.0], upper=[1.0, 1.0]),
        x0=[s0, i0],
        name="sir",
        params={"lambda": lam, "s0": s0, "i0": i0},
    )


def _chemical(lam: float, mu: float, x0: float, y0: float, z0: float) -> ModelSpec:
    return ModelSpec(
        dimension=3,
        jumps=((-1, -1, 1), (1, 1, -1)),
        rates=(
            Polynomial(3, [((1, 1, 0), lam)]),      # binding at rate lam*x*y
            Polynomial(3, [((0, 0, 1), mu)]),       # unbinding at rate mu*z
        ),
        domain=Domain.build(
            3,
            halfspaces=[([1.0, 1.0, 2.0], 1.0)],
            lower=[0.0, 0.0, 0.0],
            upper=[1.0, 1.0, 0.5],
        ),
        x0=[x0, y0, z0],
        name="chemical",
        params={"lambda": lam, "mu": mu, "x0": x0, "y0": y0, "z0": z0},
    )


def _yule(lam: float, x0: float) -> ModelSpec:
    return ModelSpec(
        dimension=1,
        jumps=((1,),),
        rates=(Polynomial(1, [((1,), lam)]),),
        domain=Domain.build(1, lower=[0.0]),
        x0=[x0],
        name="yule",
        params={"lambda": lam, "x0": x0},
    )


BUILTIN_NAMES = ("contact", "sir", "chemical", "yule")


def builtin_model(name: str, **params) -> ModelSpec:
    """Model spec for one of the built-in examples.

    contact:  d=1, jumps {+1,-1}, birth lam*x*(1-x), death x, G=[0,1]
    sir:      d=2, jumps {(0,-1),(-1,1)}, recovery y, infection lam*x*y, simplex G
    chemical: d=3, jumps {(-1,-1,1),(1,1,-1)}, rates lam*x*y and mu*z
    yule:     d=1, jump {+1}, rate lam*x, G=[0,inf)
    """
    p = dict(params)

    def take(key, default=None):
        if key in p:
            return float(p.pop(key))
        if default is None:
            raise ValueError(f"builtin '{name}' requires parameter '{key}'")
        return float(default)

    if name == "contact":
        lam = take("lambda", 2.0)
        x0 = take("x0", 0.5)
        if lam <= 0 or not (0 < x0 < 1):
            raise ValueError("contact needs lambda > 0 and x0 in (0,1)")
        spec = _contact(lam, x0)
    elif name == "sir":
        lam = take("lambda", 3.0)
        s0 = take("s0", 0.4)
        i0 = take("i0", 0.2)
        if lam <= 0 or s0 <= 0 or i0 <= 0 or s0 + i0 >= 1:
            raise ValueError("sir needs lambda > 0, s0, i0 > 0, s0 + i0 < 1")
        spec = _sir(lam, s0, i0)
    elif name == "chemical":
        lam = take("lambda", 1.0)
        mu = take("mu", 1.0)
        x0 = take("x0", 0.3)
        y0 = take("y0", 0.2)
        z0 = take("z0", 0.1)
        if min(lam, mu, x0, y0, z0) <= 0 or x0 + y0 + 2 * z0 >= 1:
            raise ValueError("chemical needs positive parameters with x0 + y0 + 2*z0 < 1")
        spec = _chemical(lam, mu, x0, y0, z0)
    elif name == "yule":
        lam = take("lambda", 1.0)
        x0 = take("x0", 1.0)
        if lam <= 0 or x0 <= 0:
            raise ValueError("yule needs lambda > 0 and x0 > 0")
        spec = _yule(lam, x0)
    else:
        raise ValueError(f"unknown builtin model '{name}' (choose from {BUILTIN_NAMES})")
    if p:
        raise ValueError(f"unknown parameters for '{name}': {sorted(p)}")
    return spec
