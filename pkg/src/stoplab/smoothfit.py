"""Boundary limits of the value function and integral identities.

Extracts one-sided derivative limits of V along geometric approach sequences
to the stopping boundary (space slope toward -1, time slope toward 0),
cross-checks the grid value against a stopping-rule Monte Carlo estimator,
verifies the local-time integral identity for the excess value V - (K - x)^+,
and computes the explicit constant bounding the value's time increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._rng import BRIDGE_SALT, path_generator
from .flowsim import EstimateWithError, GbmParams, default_local_time_bandwidth
from .diagnostics import sample_entry_time
from .putsolver import Boundary, ValueGrid

__all__ = [
    "LimitEstimate",
    "LagrangeReport",
    "DirectionalFitReport",
    "LipschitzBoundReport",
    "ResolutionError",
    "space_fit_limit",
    "time_fit_limit",
    "directional_fit_check",
    "mc_value_estimate",
    "lagrange_check",
    "lipschitz_constant",
    "lipschitz_bound_check",
]


class ResolutionError(RuntimeError):
    """Approach points collide on the grid; carries the space resolution needed."""


@dataclass(frozen=True)
class LimitEstimate:
    """Derivative estimates along an approach sequence with their extrapolated limit.

    ``estimates[k]`` is the one-sided derivative at x_n for n = n_values[k];
    ``extrapolated`` applies one Richardson step, 2 a_n - a_{n-1}, to the two
    finest terms (the approach sequence is geometric with ratio 1/2 and the
    leading error is first order in the offset); ``rate`` is the measured
    order, the mean log2 ratio of successive differences, reported so the
    extrapolation order can be audited rather than trusted.  For time limits
    ``c_bound`` carries the Lipschitz constant used in the one-sided bound
    check and ``bounds_ok`` its verdict.
    """

    kind: str
    t: float
    boundary_level: float
    n_values: np.ndarray
    x_n: np.ndarray
    estimates: np.ndarray
    extrapolated: float
    target: float
    discrepancy: float
    rate: float
    c_bound: float | None = None
    bounds_ok: bool | None = None


@dataclass(frozen=True)
class DirectionalFitReport:
    """One-sided derivative limits across the boundary and their gap."""

    t: float
    boundary_level: float
    c_side: float
    d_side: float
    gap: float
    space_limit: LimitEstimate


@dataclass(frozen=True)
class LagrangeReport:
    """Grid excess value vs Monte Carlo local-time functional at one point.

    lhs is V - (K - x)^+ read off the grid; rhs estimates
    E[int_0^tau e^{-r s} / 2 dl_s^K - int_0^tau r e^{-r s} K 1{X_s < K} ds]
    at the stopping rule of the boundary; z = (lhs - rhs) / se.
    """

    t: float
    x: float
    lhs: float
    rhs: float
    se: float
    z_score: float
    n_paths: int


@dataclass(frozen=True)
class LipschitzBoundReport:
    """Grid check of the one-sided time increment bound V(t+eps) - V(t) >= -c eps."""

    t: float
    eps_list: np.ndarray
    c: float
    slack: float
    n_violations: int
    worst_margin: float


def _grid_row(grid: ValueGrid, t: float) -> np.ndarray:
    """Value row at time t, linearly interpolated between grid rows."""
    if t < grid.t_grid[0] - 1e-12 or t > grid.t_grid[-1] + 1e-12:
        raise ValueError(f"t={t} outside grid range [{grid.t_grid[0]}, {grid.t_grid[-1]}]")
    i = int(np.clip(np.searchsorted(grid.t_grid, t) - 1, 0, grid.n_time - 1))
    w = (t - grid.t_grid[i]) / (grid.t_grid[i + 1] - grid.t_grid[i])
    w = min(max(w, 0.0), 1.0)
    return (1.0 - w) * grid.values[i] + w * grid.values[i + 1]


def _approach_sequence(grid: ValueGrid, b_t: float, n_terms: int, eta0: float) -> tuple[np.ndarray, np.ndarray]:
    if n_terms < 3:
        raise ValueError(f"extrapolation needs >= 3 approach terms, got {n_terms}")
    n_values = np.arange(1, n_terms + 1)
    x_n = b_t * (1.0 + eta0 * 0.5**n_values)
    h = math.log(grid.x_grid[1] / grid.x_grid[0])
    gaps = np.diff(np.log(x_n[::-1]))  # separations, finest pair first
    if gaps[0] < 2.0 * h:
        span = math.log(grid.x_grid[-1] / grid.x_grid[0])
        n_req = int(math.ceil(span / (gaps[0] / 2.0)))
        raise ResolutionError(
            f"approach points collide on the grid: finest separation {gaps[0]:.3e} needs "
            f"space step <= {gaps[0] / 2.0:.3e} (n_space >= {n_req}, have {grid.n_space})"
        )
    return n_values, x_n


def _extrapolate(estimates: np.ndarray) -> tuple[float, float]:
    """One Richardson step on the two finest terms plus the measured order."""
    diffs = np.diff(estimates)
    rates = []
    for k in range(len(diffs) - 1):
        if diffs[k + 1] != 0 and diffs[k] / diffs[k + 1] > 0:
            rates.append(math.log2(abs(diffs[k] / diffs[k + 1])))
    rate = float(np.mean(rates)) if rates else float("nan")
    extrapolated = float(2.0 * estimates[-1] - estimates[-2])
    return extrapolated, rate


def space_fit_limit(
    grid: ValueGrid,
    boundary: Boundary,
    z: tuple[float, float],
    n_terms: int = 4,
    eta0: float = 0.1,
) -> LimitEstimate:
    """Limit of the space derivative V_x along starts approaching the boundary.

    V_x is formed by central differences in log-price on the continuation
    side, evaluated at x_n = b(t) (1 + eta0 2^-n) by linear interpolation
    between nodes, and Richardson-extrapolated to the boundary; the target is
    the obstacle slope -1.

    Raises
    ------
    ResolutionError
        If consecutive approach points are closer than 2 space cells.
    """
    t, b_t = float(z[0]), float(z[1])
    if not (grid.t_grid[0] < t < grid.t_grid[-1]):
        raise ValueError(f"t={t} must be strictly inside the time range")
    n_values, x_n = _approach_sequence(grid, b_t, n_terms, eta0)
    row = _grid_row(grid, t)
    h = math.log(grid.x_grid[1] / grid.x_grid[0])
    # dV/dx = (dV/dy) / x on the uniform log grid.
    v_x_nodes = (row[2:] - row[:-2]) / (2.0 * h) / grid.x_grid[1:-1]
    estimates = np.asarray(np.interp(x_n, grid.x_grid[1:-1], v_x_nodes), dtype=float)
    extrapolated, rate = _extrapolate(estimates)
    target = -1.0
    return LimitEstimate(
        kind="space",
        t=t,
        boundary_level=b_t,
        n_values=n_values,
        x_n=x_n,
        estimates=estimates,
        extrapolated=extrapolated,
        target=target,
        discrepancy=abs(extrapolated - target),
        rate=rate,
    )


def time_fit_limit(
    grid: ValueGrid,
    boundary: Boundary,
    z: tuple[float, float],
    n_terms: int = 4,
    eta0: float = 0.1,
) -> LimitEstimate:
    """Limit of the time derivative V_t along starts approaching the boundary.

    V_t is formed by central differences across the rows at t +- dt,
    evaluated at the same approach points as the space limit and extrapolated
    to the boundary; the target is the obstacle's time slope 0.  Each sampled
    estimate is also checked against the one-sided bounds
    -c (1 + 0.01) <= V_t <= 0.01, with c from lipschitz_constant (V is
    nonincreasing in time and its drop rate is bounded by c).
    """
    t, b_t = float(z[0]), float(z[1])
    dt = float(grid.t_grid[1] - grid.t_grid[0])
    if not (grid.t_grid[0] + dt <= t <= grid.t_grid[-1] - dt):
        raise ValueError(f"t={t} must be at least one time step inside the grid")
    n_values, x_n = _approach_sequence(grid, b_t, n_terms, eta0)
    row_hi = _grid_row(grid, t + dt)
    row_lo = _grid_row(grid, t - dt)
    v_t_nodes = (row_hi - row_lo) / (2.0 * dt)
    estimates = np.asarray(np.interp(x_n, grid.x_grid, v_t_nodes), dtype=float)
    extrapolated, rate = _extrapolate(estimates)
    c = lipschitz_constant(grid.params, t)
    bounds_ok = bool(np.all(estimates <= 0.01) and np.all(estimates >= -c * 1.01))
    return LimitEstimate(
        kind="time",
        t=t,
        boundary_level=b_t,
        n_values=n_values,
        x_n=x_n,
        estimates=estimates,
        extrapolated=extrapolated,
        target=0.0,
        discrepancy=abs(extrapolated),
        rate=rate,
        c_bound=c,
        bounds_ok=bounds_ok,
    )


def directional_fit_check(
    grid: ValueGrid,
    boundary: Boundary,
    z: tuple[float, float],
    n_terms: int = 4,
    eta0: float = 0.1,
) -> DirectionalFitReport:
    """Compare the space-derivative limits from the two sides of the boundary.

    The continuation-side limit comes from space_fit_limit; the stopping-side
    derivative is the obstacle slope, exactly -1 since V = K - x there.
    """
    limit = space_fit_limit(grid, boundary, z, n_terms=n_terms, eta0=eta0)
    d_side = -1.0
    return DirectionalFitReport(
        t=limit.t,
        boundary_level=limit.boundary_level,
        c_side=limit.extrapolated,
        d_side=d_side,
        gap=abs(limit.extrapolated - d_side),
        space_limit=limit,
    )


def mc_value_estimate(
    boundary: Boundary,
    params: GbmParams,
    start: tuple[float, float],
    n_paths: int,
    dt: float,
    seed: int,
    bridge: bool = True,
) -> EstimateWithError:
    """Value of the stop-at-boundary rule by Monte Carlo.

    Discounted payoff e^{-r tau} (K - X_tau)^+ with tau the sampled first
    entry into {x <= b(t)}; censored paths exercise the remaining payoff at
    the horizon.  Any admissible rule bounds the value function from below,
    so this estimate (noise aside) cannot exceed the solved grid value, and
    attains it when the boundary is the optimal one.
    """
    sample = sample_entry_time(boundary, params, start, n_paths, dt, seed, bridge=bridge)
    payoff = np.maximum(params.strike - sample.x_at_tau, 0.0)
    disc = np.exp(-params.r * sample.tau)
    vals = disc * payoff
    mean = float(np.mean(vals))
    se = float(np.std(vals) / math.sqrt(n_paths))
    return EstimateWithError(value=mean, se=se, n_samples=n_paths)


@njit(cache=True)
def _lagrange_block(lx, acc, inc, u, disc, log_b, use_bridge, sig2dt, k_strike, ca, cb, eps, status, step):
    """One time block of the local-time functional accumulation.

    Per alive step at state x = exp(lx): add disc * x^2 * ca when
    |x - K| < eps (band local-time term, left endpoint) and subtract
    disc * cb when x < K (discounted strike-rate term); a crossing during the
    step scales that step's contribution by the interpolated fraction.
    """
    n, n_steps = inc.shape
    for i in range(n):
        x_log = lx[i]
        a = acc[i]
        st = 0
        k_hit = -1
        for k in range(n_steps):
            x = math.exp(x_log)
            contrib = 0.0
            d_level = x - k_strike
            if -eps < d_level < eps:
                contrib += disc[k] * x * x * ca
            if d_level < 0.0:
                contrib -= disc[k] * cb
            x_log_new = x_log + inc[i, k]
            d2 = x_log_new - log_b[k + 1]
            if d2 <= 0.0:
                a += contrib
                st = 1
                k_hit = k
                x_log = x_log_new
                break
            if use_bridge:
                d1 = x_log - log_b[k]
                p = math.exp(-2.0 * d1 * d2 / sig2dt)
                if u[i, k] < p:
                    th = d1 / (d1 + d2) if d1 + d2 > 0.0 else 0.0
                    a += th * contrib
                    st = 2
                    k_hit = k
                    break
            a += contrib
            x_log = x_log_new
        lx[i] = x_log
        acc[i] = a
        status[i] = st
        step[i] = k_hit


def lagrange_check(
    grid: ValueGrid,
    boundary: Boundary,
    params: GbmParams,
    start: tuple[float, float],
    n_paths: int,
    dt: float,
    seed: int,
    bandwidth: float | None = None,
) -> LagrangeReport:
    """Check the local-time integral identity for the excess value at one point.

    The excess V - (K - x)^+ read off the grid (lhs) must equal the expected
    functional int_0^tau e^{-rs}/2 dl_s^K - int_0^tau r e^{-rs} K 1{X < K} ds
    along paths stopped at the boundary (rhs).  The local time increment is
    the band estimator 1{|X - K| < eps} sigma^2 X^2 dt / (2 eps) at left
    endpoints, with eps defaulting to the step-matched bandwidth.

    Returns
    -------
    LagrangeReport
        With z = (lhs - rhs) / se; |z| <= 3 is the pass criterion used by the
        callers.
    """
    t0, x0 = float(start[0]), float(start[1])
    if x0 <= 0:
        raise ValueError(f"start state must be > 0, got {x0}")
    remaining = params.horizon - t0
    if remaining <= 0:
        raise ValueError(f"no remaining horizon at t={t0}")
    if dt <= 0 or dt > remaining / 100.0:
        raise ValueError(f"need 0 < dt <= (T - t)/100, got {dt}")
    k_strike = params.strike
    lhs = grid.value_at(t0, x0) - max(k_strike - x0, 0.0)

    b0 = float(boundary(t0))
    if x0 <= b0:
        # Stopping region: tau = 0, both sides vanish.
        return LagrangeReport(t=t0, x=x0, lhs=lhs, rhs=0.0, se=0.0, z_score=0.0, n_paths=n_paths)

    n_steps = max(int(math.ceil(remaining / dt - 1e-9)), 100)
    dt_eff = remaining / n_steps
    if bandwidth is None:
        bandwidth = default_local_time_bandwidth(params, dt_eff)
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    b_vals = np.asarray(boundary(t0 + dt_eff * np.arange(n_steps + 1)), dtype=float)
    log_b = np.log(b_vals)
    drift = (params.r - 0.5 * params.sigma**2) * dt_eff
    sig_sq_dt = params.sigma * math.sqrt(dt_eff)
    sig2dt = params.sigma**2 * dt_eff
    ca = params.sigma**2 * dt_eff / (4.0 * bandwidth)
    cb = params.r * k_strike * dt_eff

    block_steps = 1024
    chunk = 4096
    rhs_paths = np.empty(n_paths)
    for chunk_start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - chunk_start)
        gens = [path_generator(seed, chunk_start + i) for i in range(m)]
        ugens = [path_generator(seed, chunk_start + i, BRIDGE_SALT) for i in range(m)]
        active = np.arange(m)
        lx = np.full(m, math.log(x0))
        acc = np.zeros(m)
        k0 = 0
        while k0 < n_steps and active.size:
            n_act = active.size
            block = min(block_steps, n_steps - k0)
            raw = np.empty((n_act, block))
            for ii in range(n_act):
                gens[active[ii]].standard_normal(block, out=raw[ii])
            inc = sig_sq_dt * raw + drift
            u = np.empty((n_act, block))
            for ii in range(n_act):
                ugens[active[ii]].random(out=u[ii])
            disc = np.exp(-params.r * dt_eff * (k0 + np.arange(block)))
            lx_act = lx[active].copy()
            acc_act = acc[active].copy()
            status = np.empty(n_act, dtype=np.int8)
            step = np.empty(n_act, dtype=np.int64)
            _lagrange_block(
                lx_act, acc_act, inc, u, disc, log_b[k0 : k0 + block + 1],
                True, sig2dt, k_strike, ca, cb, bandwidth, status, step,
            )
            lx[active] = lx_act
            acc[active] = acc_act
            crossed = status > 0
            if np.any(crossed):
                rhs_paths[chunk_start + active[crossed]] = acc_act[crossed]
            active = active[~crossed]
            k0 += block
        rhs_paths[chunk_start + active] = acc[active]

    rhs = float(np.mean(rhs_paths))
    se = float(np.std(rhs_paths) / math.sqrt(n_paths))
    z = (lhs - rhs) / se if se > 0 else 0.0
    return LagrangeReport(t=t0, x=x0, lhs=lhs, rhs=rhs, se=se, z_score=float(z), n_paths=n_paths)


def _golden_max(f, lo: float, hi: float, rel_tol: float) -> tuple[float, float]:
    """Golden-section maximizer on [lo, hi] to a relative interval tolerance."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    scale = max(abs(lo), abs(hi), 1e-30)
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > rel_tol * scale:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    xm = 0.5 * (lo + hi)
    return xm, f(xm)


def lipschitz_constant(params: GbmParams, t: float, horizon: float | None = None) -> float:
    """Explicit constant bounding the value's one-sided time increments.

    c = sigma K^2 sup over s in [(T-t)/2, 2(T-t)] and y real of
    (e^{-y} / sqrt(s)) phi((y - (r - sigma^2/2) s) / (sigma sqrt(s))),
    with phi the standard normal density.  Located by a 401 x 401 grid
    search (the y window is centered on the drift line and spans
    +-10 sigma sqrt(2(T-t)), widened if the maximum lands on a y edge) and
    refined by coordinate descent to relative 1e-6.

    Raises
    ------
    ValueError
        If t >= horizon.
    """
    T = params.horizon if horizon is None else horizon
    if not (t < T):
        raise ValueError(f"need t < horizon, got t={t}, horizon={T}")
    rem = T - t
    s_lo, s_hi = 0.5 * rem, 2.0 * rem
    mu = params.r - 0.5 * params.sigma**2

    def g(s, y):
        zed = (y - mu * s) / (params.sigma * np.sqrt(s))
        return np.exp(-y) / np.sqrt(s) * np.exp(-0.5 * zed**2) / math.sqrt(2.0 * math.pi)

    width = 10.0 * params.sigma * math.sqrt(2.0 * rem)
    for _ in range(8):
        s_grid = np.linspace(s_lo, s_hi, 401)
        offsets = np.linspace(-width, width, 401)
        y_grid = mu * s_grid[:, None] + offsets[None, :]
        vals = g(s_grid[:, None], y_grid)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        if 0 < j < 400:
            break
        width *= 2.0
    else:
        raise RuntimeError("maximum of the Lipschitz integrand not interior in y; window widening failed")

    s_best = float(s_grid[i])
    y_best = float(y_grid[i, j])
    ds = s_grid[1] - s_grid[0]
    dy = offsets[1] - offsets[0]
    for _ in range(60):
        s_new, _ = _golden_max(
            lambda s: g(s, y_best), max(s_lo, s_best - 2 * ds), min(s_hi, s_best + 2 * ds), 1e-9
        )
        y_new, _ = _golden_max(lambda y: g(s_new, y), y_best - 2 * dy, y_best + 2 * dy, 1e-9)
        moved = abs(s_new - s_best) / max(s_best, 1e-30) + abs(y_new - y_best) / max(abs(y_best), 1e-30)
        s_best, y_best = s_new, y_new
        if moved < 1e-6:
            break
    c = params.sigma * params.strike**2 * float(g(s_best, y_best))
    return c


def lipschitz_bound_check(
    grid: ValueGrid,
    params: GbmParams,
    t: float,
    eps_list,
    c: float | None = None,
) -> LipschitzBoundReport:
    """Assert V(t + eps, x) - V(t, x) >= -c eps (1 + slack) on all grid nodes.

    The slack, 10 (h^2 + (dt/T)^2) with h the log-space step, allows for the
    second-order truncation of the solved grid.  Reports the violation count
    and the worst margin (most negative value of increment + c eps (1+slack)).
    """
    eps_arr = np.asarray(eps_list, dtype=float)
    if np.any(eps_arr < 0):
        raise ValueError("eps entries must be >= 0")
    if t + float(np.max(eps_arr, initial=0.0)) > grid.t_grid[-1] + 1e-12:
        raise ValueError("t + max(eps) exceeds the grid horizon")
    if c is None:
        c = lipschitz_constant(params, t)
    h = math.log(grid.x_grid[1] / grid.x_grid[0])
    dtg = float(grid.t_grid[1] - grid.t_grid[0])
    horizon = float(grid.t_grid[-1])
    slack = 10.0 * (h**2 + (dtg / horizon) ** 2)
    base = _grid_row(grid, t)
    n_violations = 0
    worst = math.inf
    for eps in eps_arr:
        inc = _grid_row(grid, t + eps) - base
        margin = inc + c * eps * (1.0 + slack)
        n_violations += int(np.sum(margin < 0))
        worst = min(worst, float(np.min(margin)))
    return LipschitzBoundReport(
        t=t,
        eps_list=eps_arr,
        c=c,
        slack=slack,
        n_violations=n_violations,
        worst_margin=worst,
    )
