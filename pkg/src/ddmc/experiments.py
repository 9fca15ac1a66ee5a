"""Statistical harness: limit-law checks and rare-event estimates at desk scale.

Every (n, replicate) cell is an independent task with its own RNG stream;
reductions run in replicate order with exact summation, so results are
bit-identical across thread counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import SingularCovarianceError
from .fluid import FluidSolution, TiltControl, solve_fluid, solve_lyapunov
from .model import ModelSpec, ValidatedModel, builtin_model, validate_model
from .ratefn import endpoint_min_cost
from .simulate import sample_endpoints, sample_grid_batch

ESS_RELIABLE = 30.0


@dataclass(frozen=True)
class EventSpec:
    """Rare event on the rescaled path: endpoint or grid-sup exceedance."""

    kind: str               # endpoint_exceed | supnorm_exceed
    level: float
    coordinate: int = 0

    def __post_init__(self):
        if self.kind not in ("endpoint_exceed", "supnorm_exceed"):
            raise ValueError(f"unknown event kind '{self.kind}'")
        if self.level < 0:
            raise ValueError("event level must be nonnegative")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    t0: float = 1.0
    h: float = 1e-3
    alpha: float = 0.75
    n_list: tuple = (1000,)
    reps: int = 1000
    seed: int = 0
    event: EventSpec | None = None
    epsilons: tuple = (0.05,)
    threads: int = 1
    tilt_profile: str = "constant"     # constant | sin (martingale experiment)
    tilt_amplitude: float = 0.15
    untilted_baseline: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.5 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (1/2, 1)")
        if self.reps < 100:
            raise ValueError("reps must be at least 100")
        if self.t0 <= 0 or self.h <= 0:
            raise ValueError("t0 and h must be positive")


@dataclass(frozen=True)
class EstimateRow:
    """One rare-event estimate at one scale."""

    n: int
    a_n: float
    p_hat: float
    stderr: float
    minus_log_scaled: float
    reference_rate: float
    ess: float
    estimator: str = "tilted"
    flagged: bool = False


def _validated(config: ExperimentConfig) -> ValidatedModel:
    return validate_model(config.model, seed=config.seed)


def tilt_from_profile(grid, dimension, profile: str, amplitude: float) -> TiltControl:
    if profile == "constant":
        return TiltControl.constant(grid, np.full(dimension, amplitude))
    if profile == "sin":
        t_end = grid[-1]
        vals = amplitude * np.sin(2.0 * np.pi * grid / t_end)
        return TiltControl(grid, np.tile(vals[:, None], (1, dimension)))
    raise ValueError(f"unknown tilt profile '{profile}'")


def _fsum_mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    mean = _fsum_mean(values)
    if len(values) < 2:
        return mean, 0.0
    var = math.fsum(((values - mean) ** 2).tolist()) / (len(values) - 1)
    return mean, math.sqrt(var / len(values))


# -- law of large numbers --------------------------------------------------------


@dataclass(frozen=True)
class LlnRow:
    n: int
    epsilon: float
    frequency: float


@dataclass(frozen=True)
class LlnResult:
    rows: tuple
    slope: float
    slope_pvalue: float


def lln_check(config: ExperimentConfig) -> LlnResult:
    """Frequencies of sup-norm deviation from the fluid path, with decay regression.

    The regression of log-frequency on n is fit over rows with nonzero counts;
    a negative slope is the finite-sample face of exponential decay.
    """
    model = _validated(config)
    fluid = solve_fluid(model, config.t0, config.h)
    rows = []
    for n in config.n_list:
        states, _ = sample_grid_batch(
            model, n, fluid.grid, config.seed, config.reps, threads=config.threads
        )
        dev = np.max(
            np.sum(np.abs(states / n - fluid.X[None, :, :]), axis=2), axis=1
        )
        for eps in config.epsilons:
            freq = _fsum_mean((dev > eps).astype(np.float64))
            rows.append(LlnRow(n=n, epsilon=float(eps), frequency=freq))
    slope = np.nan
    pvalue = np.nan
    pts = [(r.n, r.frequency) for r in rows if r.frequency > 0 and r.epsilon == config.epsilons[0]]
    if len(pts) >= 3:
        ns = np.array([p[0] for p in pts], dtype=np.float64)
        lf = np.log([p[1] for p in pts])
        fit = stats.linregress(ns, lf)
        slope, pvalue = float(fit.slope), float(fit.pvalue)
    return LlnResult(rows=tuple(rows), slope=slope, slope_pvalue=pvalue)


# -- central limit theorem --------------------------------------------------------


@dataclass(frozen=True)
class CltRow:
    n: int
    coordinate: int
    ks_stat: float
    p_value: float
    sample_var: float
    predicted_var: float


def clt_check(config: ExperimentConfig) -> tuple[CltRow, ...]:
    """KS test of the sqrt(n)-rescaled endpoint against its Gaussian limit."""
    model = _validated(config)
    fluid = solve_lyapunov(solve_fluid(model, config.t0, config.h))
    end_cov = fluid.Sigma_ou[-1]
    rows = []
    for n in config.n_list:
        ends, _ = sample_endpoints(
            model, n, config.t0, config.seed, config.reps, threads=config.threads
        )
        y = (ends - n * fluid.X[-1]) / math.sqrt(n)
        for k in range(model.dimension):
            pred = float(end_cov[k, k])
            if pred <= 1e-12:
                raise SingularCovarianceError(
                    f"limit covariance is singular in coordinate {k}"
                )
            z = y[:, k] / math.sqrt(pred)
            ks = stats.kstest(z, "norm")
            rows.append(
                CltRow(
                    n=n,
                    coordinate=k,
                    ks_stat=float(ks.statistic),
                    p_value=float(ks.pvalue),
                    sample_var=float(np.var(y[:, k], ddof=1)),
                    predicted_var=pred,
                )
            )
    return tuple(rows)


# -- rare-event estimation ---------------------------------------------------------


def _event_target(fluid: FluidSolution, event: EventSpec):
    """Minimizing endpoint target and reference rate for the event."""
    end_cov = fluid.Sigma_ou[-1]
    r = event.level
    if event.kind == "endpoint_exceed":
        i = event.coordinate
        sii = float(end_cov[i, i])
        if sii <= 1e-12:
            raise SingularCovarianceError(f"coordinate {i} has no limit variance")
        z = (r / sii) * end_cov[:, i]
        reference = r * r / (2.0 * sii)
        return z, reference
    # supnorm: cheapest coordinate exceedance in either direction
    best = None
    for i in range(end_cov.shape[0]):
        sii = float(end_cov[i, i])
        if sii <= 1e-12:
            continue
        cost = r * r / (2.0 * sii)
        if best is None or cost < best[1]:
            best = ((r / sii) * end_cov[:, i], cost)
    if best is None:
        raise SingularCovarianceError("limit covariance vanishes in every coordinate")
    return best


def _event_indicator(event: EventSpec, theta_grid: np.ndarray) -> np.ndarray:
    """Indicator per replicate from the rescaled grid path (reps, M+1, d)."""
    if event.kind == "endpoint_exceed":
        return theta_grid[:, -1, event.coordinate] >= event.level
    sup = np.max(np.sum(np.abs(theta_grid), axis=2), axis=1)
    return sup >= event.level


def mdp_estimate(config: ExperimentConfig) -> tuple[EstimateRow, ...]:
    """Tilted importance-sampling estimates of a rare fluctuation event.

    The tilt is the representer of the event's cheapest endpoint path, so the
    tilted dynamics concentrate on the minimizer; the estimator is the weighted
    indicator mean with weights exp(-log omega).
    """
    if config.event is None:
        raise ValueError("mdp_estimate needs an event spec")
    model = _validated(config)
    fluid = solve_lyapunov(solve_fluid(model, config.t0, config.h))
    z, reference = _event_target(fluid, config.event)
    if np.allclose(z, 0.0):
        tilt = TiltControl.constant(fluid.grid, np.zeros(model.dimension))
    else:
        _, report = endpoint_min_cost(fluid, z)
        tilt = TiltControl(fluid.grid, report.psi)
    need_grid = config.event.kind == "supnorm_exceed"
    grid = fluid.grid if need_grid else np.array([config.t0])
    x_ref = fluid.X if need_grid else fluid.X[-1:]
    rows = []
    for n in config.n_list:
        a_n = float(n**config.alpha)
        kappa = a_n * a_n / n
        states, logw = sample_grid_batch(
            model, n, grid, config.seed, config.reps,
            g=tilt, alpha=config.alpha, tilted=True, weighted=True,
            threads=config.threads,
        )
        theta = (states - n * x_ref[None, :, :]) / a_n
        ind = _event_indicator(config.event, theta)
        contrib = np.exp(-logw) * ind
        p_hat, stderr = _mean_stderr(contrib)
        tot = math.fsum(contrib.tolist())
        tot2 = math.fsum((contrib**2).tolist())
        ess = (tot * tot / tot2) if tot2 > 0 else 0.0
        scaled = -math.log(p_hat) / kappa if p_hat > 0 else math.inf
        rows.append(
            EstimateRow(
                n=n, a_n=a_n, p_hat=p_hat, stderr=stderr,
                minus_log_scaled=scaled, reference_rate=reference,
                ess=ess, estimator="tilted", flagged=ess < ESS_RELIABLE,
            )
        )
        if config.untilted_baseline:
            states_u, _ = sample_grid_batch(
                model, n, grid, config.seed, config.reps,
                threads=config.threads, stream_offset=config.reps,
            )
            theta_u = (states_u - n * x_ref[None, :, :]) / a_n
            ind_u = _event_indicator(config.event, theta_u).astype(np.float64)
            p_u, se_u = _mean_stderr(ind_u)
            ess_u = float(ind_u.sum())
            rows.append(
                EstimateRow(
                    n=n, a_n=a_n, p_hat=p_u, stderr=se_u,
                    minus_log_scaled=-math.log(p_u) / kappa if p_u > 0 else math.inf,
                    reference_rate=reference, ess=ess_u, estimator="naive",
                    flagged=ess_u < ESS_RELIABLE,
                )
            )
    return tuple(rows)


# -- exponential martingale --------------------------------------------------------


def martingale_mean_check(model: ValidatedModel, n: int, g: TiltControl, alpha: float,
                          reps: int, seed: int, threads: int = 1) -> tuple[float, float]:
    """Mean and standard error of the change-of-measure weight under the plain law."""
    _, logw = sample_endpoints(
        model, n, g.t_end, seed, reps, g=g, alpha=alpha, weighted=True, threads=threads
    )
    return _mean_stderr(np.exp(logw))


# -- centered Poisson sup-tail -------------------------------------------------------


@dataclass(frozen=True)
class PoissonTailBound:
    """Optimized exponential bounds for sup |beta(s) - s| over [0, n*t1] at level n*delta."""

    delta: float
    t1: float
    theta_upper: float
    exponent_upper: float
    theta_lower: float
    exponent_lower: float
    combined: float  # half the smaller exponent


def poisson_tail_exponent(delta: float, t1: float) -> PoissonTailBound:
    """Closed-form optimum of the Chernoff exponents for both tails.

    Upper tail: sup_theta [delta*theta - t1*(e^theta - theta - 1)] at
    theta = log(1 + delta/t1).  The lower tail optimum exists only for
    delta < t1 (the process cannot drop faster than rate one); otherwise the
    exponent is infinite.
    """
    if delta <= 0 or t1 <= 0:
        raise ValueError("delta and t1 must be positive")
    th_up = math.log1p(delta / t1)
    exp_up = delta * th_up - t1 * (math.exp(th_up) - th_up - 1.0)
    if delta < t1:
        th_lo = -math.log1p(-delta / t1)
        exp_lo = delta * th_lo - t1 * (math.exp(-th_lo) + th_lo - 1.0)
    else:
        th_lo = math.inf
        exp_lo = math.inf
    combined = 0.5 * min(exp_up, exp_lo)
    return PoissonTailBound(
        delta=delta, t1=t1, theta_upper=th_up, exponent_upper=exp_up,
        theta_lower=th_lo, exponent_lower=exp_lo, combined=combined,
    )


def empirical_poisson_sup_frequency(delta: float, t1: float, n: int, reps: int,
                                    seed: int) -> float:
    """Monte Carlo frequency of sup_{s <= n*t1} |beta(s) - s| >= n*delta."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    horizon = n * t1
    level = n * delta
    hits = 0
    for _ in range(reps):
        k = rng.poisson(horizon)
        if k == 0:
            if horizon >= level:
                hits += 1
            continue
        arrivals = np.sort(rng.uniform(0.0, horizon, size=k))
        counts = np.arange(1, k + 1, dtype=np.float64)
        up = np.max(counts - arrivals)
        down = np.min(counts - 1.0 - arrivals)
        down = min(down, k - horizon)
        if up >= level or -down >= level:
            hits += 1
    return hits / reps


def builtin_experiment_config(name: str, params: dict | None = None, **kw) -> ExperimentConfig:
    """Convenience constructor from a builtin model name."""
    spec = builtin_model(name, **(params or {}))
    return ExperimentConfig(model=spec, **kw)
