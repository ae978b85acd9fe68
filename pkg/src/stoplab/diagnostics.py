"""Monte Carlo first-entry diagnostics for the stopping region.

Samples entry times of GBM into the region below a nondecreasing boundary
(with an optional Brownian-bridge correction for crossings between monitoring
times), scans entry-time tail probabilities along a sequence of start points
approaching the boundary, and compares hitting times into the stopping region
and its interior when starting exactly on the boundary.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._rng import BRIDGE_SALT, path_generator
from .flowsim import GbmParams
from .putsolver import Boundary

__all__ = [
    "StoppingTimeSample",
    "RegularityScan",
    "StableBoundaryReport",
    "sample_entry_time",
    "green_scan",
    "stable_boundary_check",
]

_BLOCK_STEPS = 1024
_PATH_CHUNK = 4096


@dataclass(frozen=True)
class StoppingTimeSample:
    """Entry-time sample for one start point.

    ``tau`` holds per-path entry-time estimates, censored at the remaining
    horizon (``hit`` False means censored, with tau equal to the horizon);
    ``bridge_corrected`` marks paths whose crossing was produced by the
    bridge adjustment between monitoring times; ``x_at_tau`` is the state at
    the estimated entry: continuous paths enter through the boundary, so for
    every hit this is the boundary value at the interpolated within-step
    crossing (censored paths carry the terminal state instead).
    """

    start: tuple[float, float]
    remaining: float
    dt: float
    tau: np.ndarray
    hit: np.ndarray
    bridge_corrected: np.ndarray
    x_at_tau: np.ndarray


@dataclass(frozen=True)
class RegularityScan:
    """Entry-time tail probabilities along an approach sequence.

    Row n of ``p_hat`` estimates P(tau >= eps) for each eps in ``eps_list``
    when starting at x_n = b(t) (1 + eta0 2^-n); ``se`` holds the binomial
    standard errors and ``mean_tau`` the censored means.  ``monotone`` is the
    trend verdict: estimates nonincreasing in n within 2 combined SE down
    every column.
    """

    t: float
    boundary_level: float
    n_values: np.ndarray
    x_n: np.ndarray
    eps_list: np.ndarray
    p_hat: np.ndarray
    se: np.ndarray
    mean_tau: np.ndarray
    monotone: bool


@dataclass(frozen=True)
class StableBoundaryReport:
    """Hitting times into the stopping region vs its interior, from the boundary.

    ``tau_region`` estimates the hitting time of {x <= b}, ``tau_interior``
    that of {x <= b - delta} (the interior margin is one bridge resolution),
    both excluding the time-zero sample.  The verdict passes when at most
    ``budget`` of the paths differ by more than ``threshold``.
    """

    t: float
    boundary_level: float
    delta: float
    threshold: float
    budget: float
    tau_region: np.ndarray
    tau_interior: np.ndarray
    fraction_exceeding: float
    mean_difference: float
    passed: bool


@njit(cache=True)
def _entry_scan_block(lx, inc, u, log_b, use_bridge, sig2dt, status, step, theta):
    """Advance one time block for every active path, detecting first entry.

    lx : (n,) log-states at the block start, all strictly above log_b[0].
    inc : (n, L) log-increments.  u : (n, L) bridge uniforms (ignored when
    use_bridge is false).  log_b : (L+1,) log-boundary at the block's step
    edges.  On return status[i] is 0 (alive; lx[i] updated to block end),
    1 (below the boundary at a monitoring time; lx[i] is the end-of-step
    state), or 2 (bridge crossing).  In both hit cases theta[i] is the
    within-step crossing fraction of the linear chord, so the continuous-path
    entry state is the boundary point at step + theta.
    """
    n, n_steps = inc.shape
    for i in range(n):
        x = lx[i]
        st = 0
        k_hit = -1
        th = 0.0
        for k in range(n_steps):
            x_new = x + inc[i, k]
            d2 = x_new - log_b[k + 1]
            if d2 <= 0.0:
                st = 1
                k_hit = k
                d1 = x - log_b[k]
                th = d1 / (d1 - d2) if d1 - d2 > 0.0 else 0.0
                x = x_new
                break
            if use_bridge:
                d1 = x - log_b[k]
                p = math.exp(-2.0 * d1 * d2 / sig2dt)
                if u[i, k] < p:
                    st = 2
                    k_hit = k
                    th = d1 / (d1 + d2) if d1 + d2 > 0.0 else 0.0
                    break
            x = x_new
        lx[i] = x
        status[i] = st
        step[i] = k_hit
        theta[i] = th


def sample_entry_time(
    boundary: Boundary,
    params: GbmParams,
    start: tuple[float, float],
    n_paths: int,
    dt: float,
    seed: int,
    bridge: bool = True,
    include_start: bool = True,
) -> StoppingTimeSample:
    """Sample first entry times of GBM into the region at or below the boundary.

    Paths start at ``start = (t, x)`` and are monitored on a uniform grid of
    step ~dt (adjusted to divide the remaining horizon T - t evenly).  Entry
    is the first monitoring time with X <= b; with ``bridge`` enabled, a
    crossing between monitoring times fires with the Brownian-bridge
    probability exp(-2 d1 d2 / (sigma^2 dt)) computed from the log-distances
    to the log-boundary at the step endpoints, and is placed at the
    interpolated time fraction d1 / (d1 + d2).  Paths that never enter are
    censored at the horizon.

    ``include_start`` distinguishes first entry (time zero counts: starting
    at or below the boundary gives tau = 0) from first hitting (the time-zero
    sample is excluded and only the evolution after it can produce entry).

    Returns
    -------
    StoppingTimeSample
        Per-path tau, hit flag, bridge flag, and state at entry; bit-for-bit
        reproducible from (seed, path index) and independent of chunking.
    """
    t0, x0 = float(start[0]), float(start[1])
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if x0 <= 0:
        raise ValueError(f"start state must be > 0, got {x0}")
    remaining = params.horizon - t0
    if remaining <= 0:
        raise ValueError(f"no remaining horizon at t={t0} (T={params.horizon})")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt > remaining / 100.0:
        raise ValueError(f"dt={dt} too coarse: need dt <= (T - t)/100 = {remaining / 100.0:.3g}")

    b0 = float(boundary(t0))
    tol_deep = params.sigma * b0 * math.sqrt(dt) * 1e-2
    if include_start and x0 <= b0:
        if x0 < b0 - tol_deep:
            warnings.warn(
                f"start x={x0} deep inside the stopping region (boundary {b0:.6g}); taus are all zero",
                stacklevel=2,
            )
        zeros = np.zeros(n_paths)
        return StoppingTimeSample(
            start=(t0, x0),
            remaining=remaining,
            dt=dt,
            tau=zeros,
            hit=np.ones(n_paths, dtype=bool),
            bridge_corrected=np.zeros(n_paths, dtype=bool),
            x_at_tau=np.full(n_paths, x0),
        )

    n_steps = max(int(math.ceil(remaining / dt - 1e-9)), 100)
    dt_eff = remaining / n_steps
    b_vals = np.asarray(boundary(t0 + dt_eff * np.arange(n_steps + 1)), dtype=float)
    if np.any(b_vals <= 0):
        raise ValueError("boundary must stay positive over the sampling window")
    log_b = np.log(b_vals)
    lx0 = math.log(x0)
    # Hitting-time variant from exactly on (or below) the boundary: the path
    # is treated as starting at the boundary level and only t > 0 can enter.
    if not include_start and lx0 < log_b[0]:
        lx0 = log_b[0]

    drift = (params.r - 0.5 * params.sigma**2) * dt_eff
    sig_sq_dt = params.sigma * math.sqrt(dt_eff)
    sig2dt = params.sigma**2 * dt_eff

    tau = np.full(n_paths, remaining)
    hit = np.zeros(n_paths, dtype=bool)
    bridged = np.zeros(n_paths, dtype=bool)
    x_at = np.empty(n_paths)

    for chunk_start in range(0, n_paths, _PATH_CHUNK):
        m = min(_PATH_CHUNK, n_paths - chunk_start)
        gens = [path_generator(seed, chunk_start + i) for i in range(m)]
        ugens = [path_generator(seed, chunk_start + i, BRIDGE_SALT) for i in range(m)] if bridge else None
        active = np.arange(m)
        lx = np.full(m, lx0)
        k0 = 0
        while k0 < n_steps and active.size:
            n_act = active.size
            block = min(_BLOCK_STEPS, n_steps - k0)
            raw = np.empty((n_act, block))
            for ii in range(n_act):
                gens[active[ii]].standard_normal(block, out=raw[ii])
            inc = sig_sq_dt * raw + drift
            if bridge:
                u = np.empty((n_act, block))
                for ii in range(n_act):
                    ugens[active[ii]].random(out=u[ii])
            else:
                u = np.empty((1, block))
            lx_act = lx[active].copy()
            status = np.empty(n_act, dtype=np.int8)
            step = np.empty(n_act, dtype=np.int64)
            theta = np.empty(n_act)
            _entry_scan_block(lx_act, inc, u, log_b[k0 : k0 + block + 1], bridge, sig2dt, status, step, theta)
            lx[active] = lx_act

            crossed = status > 0
            if np.any(crossed):
                idx = active[crossed]
                gidx = chunk_start + idx
                k_abs = k0 + step[crossed]
                th = theta[crossed]
                tau_c = (k_abs + th) * dt_eff
                lb0 = log_b[k_abs]
                lb1 = log_b[k_abs + 1]
                # Continuous paths enter the closed region through its
                # boundary, so the entry state is the boundary point at the
                # chord-crossing time for both detection branches.
                x_c = np.exp(lb0 + th * (lb1 - lb0))
                tau[gidx] = tau_c
                hit[gidx] = True
                bridged[gidx] = status[crossed] == 2
                x_at[gidx] = x_c
            active = active[~crossed]
            k0 += block
        # Censored survivors keep tau = remaining.
        x_at[chunk_start + active] = np.exp(lx[active])

    return StoppingTimeSample(
        start=(t0, x0),
        remaining=remaining,
        dt=dt_eff,
        tau=tau,
        hit=hit,
        bridge_corrected=bridged,
        x_at_tau=x_at,
    )


def green_scan(
    boundary: Boundary,
    params: GbmParams,
    z: tuple[float, float],
    n_terms: int = 8,
    eps_list=(0.01, 0.02, 0.05, 0.1),
    n_paths: int = 20_000,
    dt: float = 1e-4,
    seed: int = 0,
    eta0: float = 0.1,
    bridge: bool = True,
) -> RegularityScan:
    """Tail probabilities of the entry time along starts approaching a boundary point.

    Builds the approach sequence x_n = b(t) (1 + eta0 2^-n), n = 1..n_terms,
    estimates P(tau >= eps) for each eps, and reports the table with a
    monotone-trend verdict.  All rows share one master seed, so the Gaussian
    drivers are common across n and the estimates inherit the pathwise
    ordering of entry times in the start point.

    Raises
    ------
    ValueError
        If the anchor time has no remaining horizon or n_terms < 4.
    """
    t, b_t = float(z[0]), float(z[1])
    if t >= params.horizon:
        raise ValueError(f"boundary point at t={t} has no remaining horizon (T={params.horizon})")
    if n_terms < 4:
        raise ValueError(f"n_terms must be >= 4, got {n_terms}")
    eps_arr = np.asarray(eps_list, dtype=float)
    if eps_arr.size == 0 or np.any(eps_arr <= 0):
        raise ValueError("eps_list must contain positive entries")

    n_values = np.arange(1, n_terms + 1)
    x_n = b_t * (1.0 + eta0 * 0.5**n_values)
    p_hat = np.empty((n_terms, eps_arr.size))
    se = np.empty_like(p_hat)
    mean_tau = np.empty(n_terms)
    for row, x_start in enumerate(x_n):
        sample = sample_entry_time(boundary, params, (t, x_start), n_paths, dt, seed, bridge=bridge)
        mean_tau[row] = float(np.mean(sample.tau))
        for col, eps in enumerate(eps_arr):
            p = float(np.mean(sample.tau >= eps))
            p_hat[row, col] = p
            se[row, col] = math.sqrt(p * (1.0 - p) / n_paths)

    monotone = True
    for col in range(eps_arr.size):
        for row in range(n_terms - 1):
            allowance = 2.0 * math.hypot(se[row, col], se[row + 1, col])
            if p_hat[row + 1, col] > p_hat[row, col] + allowance:
                monotone = False
    return RegularityScan(
        t=t,
        boundary_level=b_t,
        n_values=n_values,
        x_n=x_n,
        eps_list=eps_arr,
        p_hat=p_hat,
        se=se,
        mean_tau=mean_tau,
        monotone=monotone,
    )


def stable_boundary_check(
    boundary: Boundary,
    params: GbmParams,
    z: tuple[float, float],
    n_paths: int = 20_000,
    dt: float = 1e-4,
    seed: int = 0,
    delta: float | None = None,
    threshold: float = 1e-3,
    budget: float = 0.02,
) -> StableBoundaryReport:
    """Compare hitting times into the stopping region and into its interior.

    Starting exactly on the boundary at z = (t, b(t)), estimates the hitting
    time (time-zero sample excluded) of {x <= b} and of {x <= b - delta} on a
    common Gaussian driver, with delta defaulting to one bridge resolution
    sigma b sqrt(dt) / 100 (membership in the open interior cannot be tested
    at zero margin in floating point).  Passes when the fraction of paths
    whose two times differ by more than ``threshold`` is at most ``budget``.

    Raises
    ------
    ValueError
        If the boundary is not nondecreasing.
    """
    if np.any(np.diff(boundary.b) < -1e-9 * float(np.max(np.abs(boundary.b)))):
        raise ValueError("boundary must be nondecreasing; a decreasing boundary has no stable-boundary guarantee")
    t, b_t = float(z[0]), float(z[1])
    if delta is None:
        delta = params.sigma * b_t * math.sqrt(dt) * 1e-2
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")

    common = dict(params=params, start=(t, b_t), n_paths=n_paths, dt=dt, seed=seed, bridge=True, include_start=False)
    region = sample_entry_time(boundary=boundary, **common)
    interior = sample_entry_time(boundary=boundary.shifted(-delta), **common)
    diff = interior.tau - region.tau
    frac = float(np.mean(diff > threshold))
    return StableBoundaryReport(
        t=t,
        boundary_level=b_t,
        delta=delta,
        threshold=threshold,
        budget=budget,
        tau_region=region.tau,
        tau_interior=interior.tau,
        fraction_exceeding=frac,
        mean_difference=float(np.mean(diff)),
        passed=frac <= budget,
    )
