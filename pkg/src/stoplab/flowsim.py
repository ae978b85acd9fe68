"""Diffusion paths as stochastic flows.

Simulates geometric Brownian motion exactly (per-step lognormal updates) and
generic one-dimensional SDEs by Euler-Maruyama, carrying the pathwise spatial
derivative of the flow alongside the state.  Also provides the lognormal
marginal density of the unit flow and the band local-time estimator built on
the quadratic variation of the path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from ._rng import path_generator

__all__ = [
    "GbmParams",
    "SdeSpec",
    "FlowPath",
    "EstimateWithError",
    "simulate_gbm_flow",
    "simulate_sde_flow",
    "gbm_unit_density",
    "local_time_estimate",
    "default_local_time_bandwidth",
    "gbm_local_time_mc",
]


@dataclass(frozen=True)
class GbmParams:
    """Geometric Brownian motion put-problem parameters.

    Attributes
    ----------
    r : float
        Risk-free / discount rate, >= 0 (per unit time).
    sigma : float
        Volatility, > 0 (per square-root time).
    strike : float
        Strike K, > 0.
    horizon : float
        Horizon T, > 0; ``math.inf`` selects the perpetual problem.
    """

    r: float
    sigma: float
    strike: float
    horizon: float

    def __post_init__(self) -> None:
        for name in ("r", "sigma", "strike", "horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and (math.isfinite(v) or (name == "horizon" and v == math.inf))):
                raise ValueError(f"{name} must be finite (or inf for horizon), got {v!r}")
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.strike <= 0:
            raise ValueError(f"strike must be > 0, got {self.strike}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")


@dataclass(frozen=True)
class SdeSpec:
    """Coefficients of a one-dimensional SDE dX = mu(X) dt + vol(X) dB.

    ``mu_prime`` and ``vol_prime`` are the state derivatives of the
    coefficients, used by the variational recursion for the pathwise
    derivative of the flow.  ``domain`` is the open state interval on which
    the coefficients are valid; paths leaving it are flagged truncated.
    """

    mu: Callable[[float], float]
    vol: Callable[[float], float]
    mu_prime: Callable[[float], float]
    vol_prime: Callable[[float], float]
    domain: tuple[float, float] = (-math.inf, math.inf)


@dataclass(frozen=True)
class FlowPath:
    """One simulated trajectory of a stochastic flow.

    For GBM the flow is x -> x * unit_flow and the pathwise derivative equals
    the unit flow itself; generic SDE paths store explicit states started at
    ``x0``.  ``vol_of_state`` maps state to local volatility sigma(x) so
    downstream estimators can form the quadratic variation sigma(x)^2 dt.
    ``truncated_at`` is the index of the first grid point whose proposed state
    left the domain; states and deriv are frozen at their last admissible
    values from there on.
    """

    times: np.ndarray
    driver: np.ndarray
    deriv: np.ndarray
    unit_flow: np.ndarray | None = None
    states: np.ndarray | None = None
    x0: float | None = None
    vol_of_state: Callable[[np.ndarray], np.ndarray] | None = None
    truncated: bool = False
    truncated_at: int | None = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def state(self, x: float) -> np.ndarray:
        """Trajectory of the flow started at x.

        GBM paths evaluate x * unit_flow for any x > 0; generic SDE paths are
        realized at a single start point and reject any other x.
        """
        if self.unit_flow is not None:
            if x <= 0:
                raise ValueError(f"GBM flow requires x > 0, got {x}")
            return x * self.unit_flow
        if self.states is None:
            raise ValueError("path carries neither unit_flow nor explicit states")
        if self.x0 is None or not math.isclose(x, self.x0, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"generic SDE path is realized at x0={self.x0}, cannot evaluate at x={x}")
        return self.states


@dataclass(frozen=True)
class EstimateWithError:
    """Monte Carlo point estimate with its standard error and sample count."""

    value: float
    se: float
    n_samples: int


def _check_sim_args(duration: float, n_steps: int) -> None:
    if not (math.isfinite(duration) and duration > 0):
        raise ValueError(f"duration must be finite and > 0, got {duration}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")


def simulate_gbm_flow(
    params: GbmParams,
    duration: float,
    n_steps: int,
    seed: int,
    path_index: int = 0,
) -> FlowPath:
    """Simulate the GBM unit flow X^1 with exact per-step lognormal updates.

    Parameters
    ----------
    params : GbmParams
        Dynamics (r, sigma); strike/horizon are not used here.
    duration : float
        Length of the simulated window.
    n_steps : int
        Number of equal steps; the grid has n_steps + 1 points.
    seed : int
        Master seed; combined with ``path_index`` it determines the path
        bit-for-bit, independent of execution order.
    path_index : int, optional
        Path counter for batched runs; batch element i must reproduce the
        single call with path_index = i.

    Returns
    -------
    FlowPath
        With unit_flow[0] = 1 and deriv = unit_flow (the flow x -> x * X^1 is
        linear in x, so its spatial derivative is X^1 itself).
    """
    _check_sim_args(duration, n_steps)
    dt = duration / n_steps
    rng = path_generator(seed, path_index)
    z = rng.standard_normal(n_steps)
    db = math.sqrt(dt) * z
    log_inc = params.sigma * db + (params.r - 0.5 * params.sigma**2) * dt
    unit_flow = np.empty(n_steps + 1)
    unit_flow[0] = 1.0
    np.exp(np.cumsum(log_inc), out=unit_flow[1:])
    times = np.linspace(0.0, duration, n_steps + 1)
    sigma = params.sigma
    return FlowPath(
        times=times,
        driver=db,
        deriv=unit_flow.copy(),
        unit_flow=unit_flow,
        vol_of_state=lambda x: sigma * np.asarray(x),
    )


def simulate_sde_flow(
    spec: SdeSpec,
    x0: float,
    duration: float,
    n_steps: int,
    seed: int,
    path_index: int = 0,
) -> FlowPath:
    """Simulate a generic SDE by Euler-Maruyama with its variational derivative.

    The pathwise derivative J = d X^x / dx follows the recursion
    J_{k+1} = J_k * (1 + mu'(X_k) dt + vol'(X_k) dB_k) driven by the same
    Brownian increments as the state, with J_0 = 1.

    Returns
    -------
    FlowPath
        With explicit states; if the state leaves ``spec.domain`` the path is
        flagged truncated at the offending step and frozen from there on.
    """
    _check_sim_args(duration, n_steps)
    lo, hi = spec.domain
    if not (lo < x0 < hi):
        raise ValueError(f"x0={x0} outside declared domain {spec.domain}")
    dt = duration / n_steps
    rng = path_generator(seed, path_index)
    db = math.sqrt(dt) * rng.standard_normal(n_steps)
    states = np.empty(n_steps + 1)
    deriv = np.empty(n_steps + 1)
    states[0] = x0
    deriv[0] = 1.0
    truncated = False
    truncated_at: int | None = None
    x = x0
    j = 1.0
    for k in range(n_steps):
        x_new = x + spec.mu(x) * dt + spec.vol(x) * db[k]
        j_new = j * (1.0 + spec.mu_prime(x) * dt + spec.vol_prime(x) * db[k])
        if not (lo < x_new < hi):
            truncated = True
            truncated_at = k + 1
            states[k + 1 :] = x
            deriv[k + 1 :] = j
            break
        x, j = x_new, j_new
        states[k + 1] = x
        deriv[k + 1] = j
    times = np.linspace(0.0, duration, n_steps + 1)
    vol = spec.vol
    return FlowPath(
        times=times,
        driver=db,
        deriv=deriv,
        states=states,
        x0=x0,
        vol_of_state=lambda x: np.vectorize(vol)(x),
        truncated=truncated,
        truncated_at=truncated_at,
    )


def gbm_unit_density(s: float, x, params: GbmParams):
    """Marginal density of the GBM unit flow X^1 at time s.

    f(x) = 1 / (sigma x sqrt(s)) * phi((log x - (r - sigma^2/2) s) / (sigma sqrt(s)))
    with phi the standard normal density.

    Parameters
    ----------
    s : float
        Time, > 0.
    x : float or ndarray
        Evaluation point(s), > 0.
    params : GbmParams
        Provides r and sigma.

    Returns
    -------
    float or ndarray
        Density value(s); nonnegative and finite.
    """
    if not (s > 0):
        raise ValueError(f"s must be > 0, got {s}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("x must be > 0")
    sig_sqrt_s = params.sigma * math.sqrt(s)
    z = (np.log(x_arr) - (params.r - 0.5 * params.sigma**2) * s) / sig_sqrt_s
    out = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * sig_sqrt_s * x_arr)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


def default_local_time_bandwidth(params: GbmParams, dt: float) -> float:
    """Default band half-width for the local-time estimator.

    Two typical one-step moves, 2 * sigma * K * sqrt(dt): the limit defining
    the local time fixes no bandwidth, so resolution is tied to step size.
    """
    return 2.0 * params.sigma * params.strike * math.sqrt(dt)


def local_time_estimate(path: FlowPath, x0: float, level: float, bandwidth: float) -> float:
    """Band local time of the path at ``level`` up to the path horizon.

    Left-endpoint Riemann approximation of
    (1 / 2 eps) * integral of 1{level - eps < X_s < level + eps} d<X, X>_s
    with d<X, X>_s = vol_of_state(X_s)^2 ds.

    Returns
    -------
    float
        Nonnegative; nondecreasing in the path duration.
    """
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    if path.vol_of_state is None:
        raise ValueError("path carries no vol_of_state; cannot form quadratic variation")
    x = path.state(x0)
    left = x[:-1]
    in_band = np.abs(left - level) < bandwidth
    if not np.any(in_band):
        return 0.0
    vol = np.asarray(path.vol_of_state(left[in_band]), dtype=float)
    return float(np.sum(vol**2) * path.dt / (2.0 * bandwidth))


@njit(cache=True)
def _gbm_local_time_accum(growth, x0, level, eps, sigma_sq_dt_over_2eps):
    n_paths, n_steps = growth.shape
    out = np.empty(n_paths)
    for i in range(n_paths):
        x = x0
        acc = 0.0
        for k in range(n_steps):
            d = x - level
            if -eps < d < eps:
                acc += x * x
            x *= growth[i, k]
        out[i] = acc * sigma_sq_dt_over_2eps
    return out


def gbm_local_time_mc(
    params: GbmParams,
    x0: float,
    level: float,
    duration: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    bandwidth: float | None = None,
    chunk_size: int = 512,
) -> EstimateWithError:
    """Monte Carlo mean of the band local time at ``level`` for GBM from x0.

    Batched equivalent of local_time_estimate over simulate_gbm_flow paths:
    path i uses the stream derived from (seed, i), so the result is
    independent of chunking.  Left endpoints are used for the quadratic
    variation, matching the single-path estimator.
    """
    _check_sim_args(duration, n_steps)
    if bandwidth is None:
        bandwidth = default_local_time_bandwidth(params, duration / n_steps)
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    dt = duration / n_steps
    drift = (params.r - 0.5 * params.sigma**2) * dt
    sq = params.sigma * math.sqrt(dt)
    coeff = params.sigma**2 * dt / (2.0 * bandwidth)
    total = 0.0
    total_sq = 0.0
    buf = np.empty((chunk_size, n_steps))
    done = 0
    while done < n_paths:
        m = min(chunk_size, n_paths - done)
        for i in range(m):
            rng = path_generator(seed, done + i)
            rng.standard_normal(n_steps, out=buf[i])
        growth = np.exp(sq * buf[:m] + drift)
        vals = _gbm_local_time_accum(growth, x0, level, bandwidth, coeff)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals**2))
        done += m
    mean = total / n_paths
    var = max(total_sq / n_paths - mean**2, 0.0)
    se = math.sqrt(var / n_paths)
    return EstimateWithError(value=mean, se=se, n_samples=n_paths)
