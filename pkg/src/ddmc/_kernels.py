"""Jit-compiled simulation kernels (private).

One kernel serves plain, tilted and weight-accumulating simulation so that a
zero tilt reproduces the plain sampler draw-for-draw: with g == 0 the thinning
bound equals the actual rate bitwise and no acceptance variate is consumed.

The RNG is xoshiro256++ with per-replicate state derived from (seed, stream)
via splitmix64, so replicate streams are independent of scheduling order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_RATE_OVERFLOW = 1
STATUS_CAP_EXCEEDED = 2
STATUS_THINNING = 3
STATUS_LEFT_DOMAIN = 4
STATUS_NEGATIVE_RATE = 5

DOMAIN_TOL = 1e-9
RATE_CLAMP = 1e-12

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)
_U64_30 = np.uint64(30)
_U64_27 = np.uint64(27)
_U64_31 = np.uint64(31)
_U64_11 = np.uint64(11)
_U64_17 = np.uint64(17)
_INV_2_53 = 1.1102230246251565e-16  # 2**-53


@njit(cache=True, inline="always")
def _splitmix64(z):
    z = z + _SM_GAMMA
    z = (z ^ (z >> _U64_30)) * _SM_M1
    z = (z ^ (z >> _U64_27)) * _SM_M2
    return z ^ (z >> _U64_31)


@njit(cache=True)
def _rng_init(seed, stream):
    s = np.empty(4, dtype=np.uint64)
    z = _splitmix64(np.uint64(seed))
    z = _splitmix64(z ^ (np.uint64(stream) + _SM_GAMMA))
    for i in range(4):
        z = _splitmix64(z)
        s[i] = z
    if s[0] == np.uint64(0) and s[1] == np.uint64(0) and s[2] == np.uint64(0) and s[3] == np.uint64(0):
        s[0] = np.uint64(1)
    return s


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, inline="always")
def _rng_next(s):
    result = _rotl(s[0] + s[3], 23) + s[0]
    t = s[1] << _U64_17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def _rng_uniform(s):
    # in [0, 1)
    return float(_rng_next(s) >> _U64_11) * _INV_2_53


@njit(cache=True, inline="always")
def _rng_exponential(s):
    u = _rng_uniform(s)
    while u == 0.0:
        u = _rng_uniform(s)
    return -math.log(u)


@njit(cache=True, inline="always")
def _eval_rates(xd, exps, coeffs, term_start, out):
    # density-scale rates F_l(x); returns most negative raw value seen
    worst = 0.0
    for l in range(term_start.shape[0] - 1):
        acc = 0.0
        for ti in range(term_start[l], term_start[l + 1]):
            term = coeffs[ti]
            for k in range(xd.shape[0]):
                e = exps[ti, k]
                for _ in range(e):
                    term *= xd[k]
            acc += term
        if acc < 0.0:
            if acc < worst:
                worst = acc
            acc = 0.0 if acc >= -RATE_CLAMP else acc
        out[l] = acc
    return worst


@njit(cache=True, inline="always")
def _in_domain(xd, box_lo, box_hi, hs_a, hs_c):
    for k in range(xd.shape[0]):
        if xd[k] < box_lo[k] - DOMAIN_TOL or xd[k] > box_hi[k] + DOMAIN_TOL:
            return False
    for m in range(hs_a.shape[0]):
        acc = 0.0
        for k in range(xd.shape[0]):
            acc += hs_a[m, k] * xd[k]
        if acc > hs_c[m] + DOMAIN_TOL:
            return False
    return True


@njit(cache=True, inline="always")
def _g_dot_jump(gv, g_dt, t, jumps, l):
    # linear interpolation of g(t) . jump_l on the uniform tilt grid
    mg = gv.shape[0] - 1
    pos = t / g_dt
    idx = int(pos)
    if idx > mg - 1:
        idx = mg - 1
    if idx < 0:
        idx = 0
    w = pos - idx
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    acc = 0.0
    for k in range(gv.shape[1]):
        acc += (gv[idx, k] * (1.0 - w) + gv[idx + 1, k] * w) * jumps[l, k]
    return acc


@njit(cache=True, inline="always")
def _expm1_over(z):
    # (exp(z) - 1)/z, stable near 0
    if z > 1e-8 or z < -1e-8:
        return math.expm1(z) / z
    return 1.0 + 0.5 * z + z * z / 6.0


@njit(cache=True)
def _compensator(nrates, jumps, gv, g_dt, eps, t0, t1):
    """Exact integral over [t0, t1] of sum_l nrates[l] * (exp(eps * g(s).l) - 1) ds.

    The state (hence nrates) is constant on the interval; g is piecewise linear,
    so each tilt-grid cell contributes a closed-form exponential-of-linear term.
    """
    if t1 <= t0:
        return 0.0
    mg = gv.shape[0] - 1
    total = 0.0
    i = int(t0 / g_dt)
    if i > mg - 1:
        i = mg - 1
    if i < 0:
        i = 0
    s0 = t0
    while s0 < t1:
        cell_end = (i + 1) * g_dt
        s1 = t1 if (cell_end > t1 or i == mg - 1) else cell_end
        if s1 <= s0:
            s1 = t1
        dt_seg = s1 - s0
        for l in range(jumps.shape[0]):
            c = nrates[l]
            if c == 0.0:
                continue
            ga = 0.0
            gb = 0.0
            for k in range(gv.shape[1]):
                ga += gv[i, k] * jumps[l, k]
                gb += gv[i + 1, k] * jumps[l, k]
            frac0 = (s0 - i * g_dt) / g_dt
            if frac0 < 0.0:
                frac0 = 0.0
            elif frac0 > 1.0:
                frac0 = 1.0
            u0 = eps * (ga + (gb - ga) * frac0)
            slope = eps * (gb - ga) / g_dt
            z = slope * dt_seg
            total += c * (math.exp(u0) * dt_seg * _expm1_over(z) - dt_seg)
        s0 = s1
        i += 1
        if i > mg - 1:
            i = mg - 1
    return total


@njit(cache=True, nogil=True)
def simulate_kernel(
    n,
    t_end,
    x0_state,
    jumps,
    exps,
    coeffs,
    term_start,
    box_lo,
    box_hi,
    hs_a,
    hs_c,
    tilt_active,
    weight_active,
    gv,
    g_dt,
    eps,
    m_bound,
    grid,
    record_events,
    ev_times,
    ev_jids,
    rate_cap,
    seed,
    stream,
):
    """Exact jump-chain sample; returns (status, n_events, log_weight, grid_states).

    grid_states[k] is the (cadlag) state at grid[k].  When record_events, event
    times and fired jump indices go into the preallocated ev_* arrays; overflow
    of their capacity reports STATUS_CAP_EXCEEDED so the caller can retry.
    """
    d = x0_state.shape[0]
    nlive = jumps.shape[0]
    cap = ev_times.shape[0]
    rng = _rng_init(seed, stream)
    state = x0_state.copy()
    xd = np.empty(d)
    for k in range(d):
        xd[k] = state[k] / n
    rates = np.empty(nlive)
    nrates = np.empty(nlive)
    weights = np.empty(nlive)
    m1 = grid.shape[0]
    grid_states = np.empty((m1, d), dtype=np.int64)
    gi = 0
    t = 0.0
    log_w = 0.0
    n_events = 0
    status = STATUS_OK

    if not _in_domain(xd, box_lo, box_hi, hs_a, hs_c):
        status = STATUS_LEFT_DOMAIN

    while status == STATUS_OK:
        worst = _eval_rates(xd, exps, coeffs, term_start, rates)
        if worst < -RATE_CLAMP:
            status = STATUS_NEGATIVE_RATE
            break
        r_bar = 0.0
        for l in range(nlive):
            nrates[l] = n * rates[l]
            if tilt_active:
                r_bar += nrates[l] * m_bound[l]
            else:
                r_bar += nrates[l]
        if r_bar > rate_cap:
            status = STATUS_RATE_OVERFLOW
            break
        if r_bar <= 0.0:
            break  # frozen until t_end
        dt = _rng_exponential(rng) / r_bar
        t_prop = t + dt
        if t_prop >= t_end:
            break
        while gi < m1 and grid[gi] < t_prop:
            for k in range(d):
                grid_states[gi, k] = state[k]
            gi += 1
        if weight_active:
            log_w -= _compensator(nrates, jumps, gv, g_dt, eps, t, t_prop)
        t = t_prop
        # actual (possibly tilted) rates at the proposal time
        r_act = 0.0
        for l in range(nlive):
            if tilt_active:
                weights[l] = nrates[l] * math.exp(eps * _g_dot_jump(gv, g_dt, t, jumps, l))
            else:
                weights[l] = nrates[l]
            r_act += weights[l]
        if tilt_active:
            if r_act > r_bar * (1.0 + 1e-9):
                status = STATUS_THINNING
                break
            if r_act < r_bar:
                if _rng_uniform(rng) * r_bar >= r_act:
                    continue  # thinning rejection; no event
        u = _rng_uniform(rng) * r_act
        chosen = nlive - 1
        acc = 0.0
        for l in range(nlive):
            acc += weights[l]
            if u < acc:
                chosen = l
                break
        for k in range(d):
            state[k] += jumps[chosen, k]
            xd[k] = state[k] / n
        if not _in_domain(xd, box_lo, box_hi, hs_a, hs_c):
            status = STATUS_LEFT_DOMAIN
            break
        if weight_active:
            log_w += eps * _g_dot_jump(gv, g_dt, t, jumps, chosen)
        if record_events:
            if n_events >= cap:
                status = STATUS_CAP_EXCEEDED
                break
            ev_times[n_events] = t
            ev_jids[n_events] = chosen
        n_events += 1

    if status == STATUS_OK and weight_active:
        worst = _eval_rates(xd, exps, coeffs, term_start, rates)
        for l in range(nlive):
            nrates[l] = n * rates[l]
        log_w -= _compensator(nrates, jumps, gv, g_dt, eps, t, t_end)
    while gi < m1:
        for k in range(d):
            grid_states[gi, k] = state[k]
        gi += 1
    return status, n_events, log_w, grid_states


@njit(cache=True, nogil=True)
def time_change_kernel(
    n,
    t_end,
    x0_state,
    jumps,
    exps,
    coeffs,
    term_start,
    box_lo,
    box_hi,
    hs_a,
    hs_c,
    grid,
    record_events,
    ev_times,
    ev_jids,
    rate_cap,
    seed,
    stream,
):
    """Same law as simulate_kernel via independent unit-rate streams per jump type.

    Each jump type owns an internal clock: it fires when its integrated rate
    reaches the next arrival of a unit Poisson process.  Returns
    (status, n_events, grid_states, integrated_rates).
    """
    d = x0_state.shape[0]
    nlive = jumps.shape[0]
    cap = ev_times.shape[0]
    rng = _rng_init(seed, stream)
    state = x0_state.copy()
    xd = np.empty(d)
    for k in range(d):
        xd[k] = state[k] / n
    rates = np.empty(nlive)
    lam = np.zeros(nlive)  # integrated rates (internal clocks)
    nxt = np.empty(nlive)  # next arrival threshold per channel
    for l in range(nlive):
        nxt[l] = _rng_exponential(rng)
    m1 = grid.shape[0]
    grid_states = np.empty((m1, d), dtype=np.int64)
    gi = 0
    t = 0.0
    n_events = 0
    status = STATUS_OK

    if not _in_domain(xd, box_lo, box_hi, hs_a, hs_c):
        status = STATUS_LEFT_DOMAIN

    while status == STATUS_OK:
        worst = _eval_rates(xd, exps, coeffs, term_start, rates)
        if worst < -RATE_CLAMP:
            status = STATUS_NEGATIVE_RATE
            break
        total = 0.0
        for l in range(nlive):
            total += n * rates[l]
        if total > rate_cap:
            status = STATUS_RATE_OVERFLOW
            break
        dt_min = np.inf
        chosen = -1
        for l in range(nlive):
            rl = n * rates[l]
            if rl > 0.0:
                dtl = (nxt[l] - lam[l]) / rl
                if dtl < dt_min:
                    dt_min = dtl
                    chosen = l
        if chosen < 0:
            break  # frozen
        t_prop = t + dt_min
        if t_prop >= t_end:
            for l in range(nlive):
                lam[l] += n * rates[l] * (t_end - t)
            t = t_end
            break
        while gi < m1 and grid[gi] < t_prop:
            for k in range(d):
                grid_states[gi, k] = state[k]
            gi += 1
        for l in range(nlive):
            lam[l] += n * rates[l] * dt_min
        lam[chosen] = nxt[chosen]
        nxt[chosen] += _rng_exponential(rng)
        t = t_prop
        for k in range(d):
            state[k] += jumps[chosen, k]
            xd[k] = state[k] / n
        if not _in_domain(xd, box_lo, box_hi, hs_a, hs_c):
            status = STATUS_LEFT_DOMAIN
            break
        if record_events:
            if n_events >= cap:
                status = STATUS_CAP_EXCEEDED
                break
            ev_times[n_events] = t
            ev_jids[n_events] = chosen
        n_events += 1

    while gi < m1:
        for k in range(d):
            grid_states[gi, k] = state[k]
        gi += 1
    return status, n_events, grid_states, lam
