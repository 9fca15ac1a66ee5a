"""Exact stochastic simulation of the scaled jump chain, plain and tilted.

Replicate RNG streams are derived from (seed, replicate index), so batches are
reproducible and independent of worker scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import (
    GridMismatchError,
    LeftDomainError,
    NonfiniteWeightError,
    RateOverflowError,
    ThinningBoundError,
    UnboundedRatioError,
)
from .fluid import FluidSolution, TiltControl
from .model import ValidatedModel

DEFAULT_RATE_CAP = 1e12


@dataclass(frozen=True)
class TrajectoryPath:
    """One cadlag sample path: event times, integer states, fired jump indices."""

    n: int
    t_end: float
    times: np.ndarray      # (k+1,) starting at 0, strictly increasing
    states: np.ndarray     # (k+1, d) int64; states[j] holds on [times[j], times[j+1])
    jump_ids: np.ndarray   # (k,) index into the model jump list
    start_exact: bool = True

    def __post_init__(self):
        for arr in (self.times, self.states, self.jump_ids):
            arr.setflags(write=False)
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must start at 0 and increase strictly")

    @property
    def n_events(self) -> int:
        return len(self.jump_ids)

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def state_at(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(idx, 0)]

    def on_grid(self, grid: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, grid, side="right") - 1
        return self.states[np.maximum(idx, 0)]


@dataclass(frozen=True)
class FluctuationPath:
    """Centered, a_n-rescaled path sampled on a fluid grid."""

    grid: np.ndarray
    theta: np.ndarray      # (M+1, d)
    a_n: float
    alpha: float
    start_exact: bool

    def __post_init__(self):
        self.grid.setflags(write=False)
        self.theta.setflags(write=False)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("fluctuation path has nonfinite entries")


@dataclass(frozen=True)
class WeightedSample:
    """A sample path together with its accumulated log change-of-measure weight."""

    path: TrajectoryPath
    log_weight: float

    def __post_init__(self):
        if not np.isfinite(self.log_weight):
            raise NonfiniteWeightError(f"log weight {self.log_weight} is not finite")


def _raise_for_status(status: int, context: str):
    if status == K.STATUS_OK or status == K.STATUS_CAP_EXCEEDED:
        return
    if status == K.STATUS_RATE_OVERFLOW:
        raise RateOverflowError(f"{context}: total rate exceeded the configured cap")
    if status == K.STATUS_THINNING:
        raise ThinningBoundError(f"{context}: tilted rate exceeded its thinning bound")
    if status == K.STATUS_LEFT_DOMAIN:
        raise LeftDomainError(f"{context}: state left the domain")
    if status == K.STATUS_NEGATIVE_RATE:
        raise LeftDomainError(f"{context}: rate evaluation turned negative beyond tolerance")
    raise RuntimeError(f"{context}: unknown kernel status {status}")


def _tilt_arrays(model: ValidatedModel, g: TiltControl | None, n: int, alpha: float | None):
    """(gv, g_dt, eps, m_bound) kernel inputs; zero-filled when g is None."""
    jumps = model.jumps
    if g is None:
        gv = np.zeros((2, model.dimension))
        return gv, 1.0, 0.0, np.ones(len(jumps))
    if alpha is None or not (0.5 < alpha < 1.0):
        raise ValueError("tilted simulation needs alpha in (1/2, 1)")
    eps = float(n**alpha / n)
    gv = g.values
    if gv.shape[1] != model.dimension:
        raise GridMismatchError("tilt control dimension differs from the model")
    g_dt = float(g.grid[1] - g.grid[0])
    if not np.allclose(np.diff(g.grid), g_dt, rtol=0, atol=1e-12):
        raise GridMismatchError("tilt control grid must be uniform")
    m_bound = np.exp(eps * np.max(gv @ jumps.T.astype(np.float64), axis=0))
    return gv, g_dt, eps, m_bound


def _run_full_path(model, n, t_end, seed, stream, *, g=None, alpha=None,
                   tilted=False, weighted=False, rate_cap=DEFAULT_RATE_CAP, kernel="direct"):
    """Run a kernel with event recording, growing the event buffer as needed."""
    args = model.kernel_args()
    x0_state, start_exact = model.start_state(n)
    gv, g_dt, eps, m_bound = _tilt_arrays(model, g, n, alpha)
    grid = np.array([float(t_end)])
    cap = 4096
    while True:
        ev_times = np.empty(cap)
        ev_jids = np.empty(cap, dtype=np.int64)
        if kernel == "direct":
            status, n_events, log_w, _ = K.simulate_kernel(
                n, float(t_end), x0_state, *args,
                tilted, weighted, gv, g_dt, eps, m_bound,
                grid, True, ev_times, ev_jids, rate_cap, seed, stream,
            )
            lam = None
        else:
            status, n_events, _, lam = K.time_change_kernel(
                n, float(t_end), x0_state, *args,
                grid, True, ev_times, ev_jids, rate_cap, seed, stream,
            )
            log_w = 0.0
        if status == K.STATUS_CAP_EXCEEDED:
            if cap >= 2**27:
                raise RateOverflowError("event count exceeded the recording limit")
            cap *= 4
            continue
        _raise_for_status(status, f"{model.name} n={n}")
        break
    times = np.concatenate([[0.0], ev_times[:n_events]])
    jids = ev_jids[:n_events].copy()
    states = np.empty((n_events + 1, model.dimension), dtype=np.int64)
    states[0] = x0_state
    if n_events:
        states[1:] = x0_state + np.cumsum(model.jumps[jids], axis=0)
    path = TrajectoryPath(
        n=n, t_end=float(t_end), times=times, states=states,
        jump_ids=jids, start_exact=start_exact,
    )
    return path, log_w, lam


def gillespie(model: ValidatedModel, n: int, t0: float, seed: int,
              rate_cap: float = DEFAULT_RATE_CAP) -> TrajectoryPath:
    """Exact direct-method sample path on [0, t0] at scale n."""
    path, _, _ = _run_full_path(model, n, t0, seed, 0, rate_cap=rate_cap)
    return path


def random_time_change(model: ValidatedModel, n: int, t0: float, seed: int,
                       rate_cap: float = DEFAULT_RATE_CAP) -> TrajectoryPath:
    """Sample path via independent unit-rate streams per jump type (same law)."""
    path, _, _ = _run_full_path(model, n, t0, seed, 0, rate_cap=rate_cap, kernel="time-change")
    return path


def time_change_clocks(model: ValidatedModel, n: int, t0: float, seed: int,
                       rate_cap: float = DEFAULT_RATE_CAP):
    """(path, integrated rate per jump type) for the time-change sampler."""
    path, _, lam = _run_full_path(model, n, t0, seed, 0, rate_cap=rate_cap, kernel="time-change")
    return path, lam


def tilted_simulate(model: ValidatedModel, n: int, t0: float, g: TiltControl,
                    alpha: float, seed: int,
                    rate_cap: float = DEFAULT_RATE_CAP) -> WeightedSample:
    """Sample from the exponentially tilted law; log weight accumulated exactly.

    Jump l fires at rate n F_l(x/n) exp(eps g_t . l) with eps = a_n/n, simulated
    by thinning against the per-jump supremum bound; the log weight is the jump
    sum minus the exactly integrated compensator.
    """
    path, log_w, _ = _run_full_path(
        model, n, t0, seed, 0, g=g, alpha=alpha, tilted=True, weighted=True,
        rate_cap=rate_cap,
    )
    return WeightedSample(path=path, log_weight=log_w)


def untilted_weight(model: ValidatedModel, n: int, t0: float, g: TiltControl,
                    alpha: float, seed: int,
                    rate_cap: float = DEFAULT_RATE_CAP) -> WeightedSample:
    """Plain-law sample carrying the exponential-martingale weight for g."""
    path, log_w, _ = _run_full_path(
        model, n, t0, seed, 0, g=g, alpha=alpha, tilted=False, weighted=True,
        rate_cap=rate_cap,
    )
    return WeightedSample(path=path, log_weight=log_w)


def fluctuation(path: TrajectoryPath, fluid: FluidSolution, alpha: float) -> FluctuationPath:
    """Centered rescaled path theta = (X^n - n X)/a_n on the fluid grid."""
    if abs(path.t_end - fluid.t_end) > 1e-12:
        raise GridMismatchError(
            f"path horizon {path.t_end} differs from fluid horizon {fluid.t_end}"
        )
    a_n = float(path.n**alpha)
    theta = (path.on_grid(fluid.grid) - path.n * fluid.X) / a_n
    if path.start_exact:
        theta[0] = 0.0
    return FluctuationPath(grid=fluid.grid, theta=theta, a_n=a_n, alpha=alpha,
                           start_exact=path.start_exact)


# -- batched sampling ----------------------------------------------------------


def sample_grid_batch(model: ValidatedModel, n: int, grid: np.ndarray, seed: int,
                      reps: int, *, g: TiltControl | None = None,
                      alpha: float | None = None, tilted: bool = False,
                      weighted: bool = False, threads: int = 1,
                      rate_cap: float = DEFAULT_RATE_CAP, stream_offset: int = 0):
    """States on a recording grid for many replicates; optionally tilted/weighted.

    Returns (states, log_weights) with states shaped (reps, len(grid), d).
    Replicate r uses RNG stream (seed, stream_offset + r); the output ordering
    is by replicate index regardless of thread count.
    """
    args = model.kernel_args()
    x0_state, _ = model.start_state(n)
    gv, g_dt, eps, m_bound = _tilt_arrays(model, g, n, alpha)
    grid = np.asarray(grid, dtype=np.float64)
    t_end = float(grid[-1])
    ev_times = np.empty(0)
    ev_jids = np.empty(0, dtype=np.int64)
    states = np.empty((reps, len(grid), model.dimension), dtype=np.int64)
    log_w = np.zeros(reps)

    def run(r):
        status, _, lw, gs = K.simulate_kernel(
            n, t_end, x0_state, *args,
            tilted, weighted, gv, g_dt, eps, m_bound,
            grid, False, ev_times, ev_jids, rate_cap, seed, stream_offset + r,
        )
        _raise_for_status(status, f"{model.name} n={n} rep={r}")
        states[r] = gs
        log_w[r] = lw

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(reps)))
    else:
        for r in range(reps):
            run(r)
    if weighted and not np.all(np.isfinite(log_w)):
        raise NonfiniteWeightError("a replicate produced a nonfinite log weight")
    return states, log_w


def sample_endpoints(model: ValidatedModel, n: int, t0: float, seed: int, reps: int,
                     **kw) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint states X^n_{t0} over replicates; see sample_grid_batch."""
    states, log_w = sample_grid_batch(model, n, np.array([float(t0)]), seed, reps, **kw)
    return states[:, 0, :], log_w


# -- domination utilities -------------------------------------------------------


def yule_domination_constants(model: ValidatedModel, samples: int = 512,
                              seed: int = 0) -> tuple[float, float]:
    """(K6, K7): jump-size bound K7 and sampled linear-growth constant K6.

    K7 is the largest L1 jump size; K6 is the sampled supremum of
    sum_l |l|_1 F_l(x) / |x|_1 over the domain, so the L1 norm of the chain is
    dominated by a pure-birth chain jumping +K7 at rate K6 * count.  Raises
    UnboundedRatioError when the ratio keeps growing on an enlarged window
    (linear growth violated).
    """
    jumps = model.jumps
    k7 = float(np.max(np.sum(np.abs(jumps), axis=1)))
    weights = np.sum(np.abs(jumps), axis=1).astype(np.float64)
    pts = model.domain.sample(samples, seed, model.x0)

    def ratio_sup(points):
        best = 0.0
        for x in points:
            norm = float(np.sum(np.abs(x)))
            if norm < 1e-9:
                continue
            tot = float(weights @ model.rates_unchecked(x))
            best = max(best, tot / norm)
        return best

    k6 = ratio_sup(pts)
    # probe an enlarged window along unbounded directions
    enlarged = model.x0 + 2.0 * (pts - model.x0)
    enlarged = np.array([p for p in enlarged if model.domain.contains(p)])
    if enlarged.size:
        k6_far = ratio_sup(enlarged)
        if k6_far > k6 * 1.05 + 1e-12:
            raise UnboundedRatioError(
                f"rate/norm ratio grows with the window ({k6_far:.3g} > {k6:.3g}); "
                "linear growth assumption violated"
            )
        k6 = max(k6, k6_far)
    return k6, k7


def dominated_pair(model: ValidatedModel, n: int, t0: float, seed: int,
                   k6: float | None = None, k7: float | None = None,
                   rate_cap: float = DEFAULT_RATE_CAP):
    """Couple the chain with its dominating pure-birth chain (shared randomness).

    Every chain event is paired with a +K7 birth of the dominating count, which
    additionally jumps alone at the leftover rate K6*eta - total.  Returns
    (sup_t |X_t|_1, eta at t0, trajectory).  K6 gets a 2% slack because it is a
    sampled constant.
    """
    if k6 is None or k7 is None:
        s6, s7 = yule_domination_constants(model)
        k6 = s6 if k6 is None else k6
        k7 = s7 if k7 is None else k7
    k6 *= 1.02
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    state, _ = model.start_state(n)
    state = state.astype(np.int64)
    eta = float(np.sum(np.abs(state)))
    sup_norm = eta
    t = 0.0
    times = [0.0]
    states = [state.copy()]
    jids = []
    while True:
        rates = n * model.rates(state / n)
        r_x = float(np.sum(rates))
        r_eta = k6 * eta
        if r_x > r_eta * (1 + 1e-9):
            raise UnboundedRatioError("domination coupling broke: chain rate exceeds K6*eta")
        if r_eta > rate_cap:
            raise RateOverflowError("dominating chain rate exceeded the cap")
        if r_eta <= 0.0:
            break
        t += rng.exponential(1.0 / r_eta)
        if t >= t0:
            break
        if rng.uniform() * r_eta < r_x:
            probs = rates / r_x
            j = int(rng.choice(len(rates), p=probs))
            state = state + model.jumps[j]
            times.append(t)
            states.append(state.copy())
            jids.append(j)
            sup_norm = max(sup_norm, float(np.sum(np.abs(state))))
        eta += k7
    path = TrajectoryPath(
        n=n, t_end=t0, times=np.array(times), states=np.array(states, dtype=np.int64),
        jump_ids=np.array(jids, dtype=np.int64),
    )
    return sup_norm, eta, path
