"""American put free-boundary solvers and boundary extraction.

Finite horizon: Crank-Nicolson in log-price with projected SOR enforcing the
early-exercise obstacle.  Perpetual horizon: closed-form threshold value,
cross-validated by a golden-section search over exercise thresholds.  Includes
a CRR binomial tree as an independent pricing oracle, extraction of the
optimal stopping boundary from a solved grid, and the generator residual on
the continuation region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .flowsim import GbmParams, SdeSpec

__all__ = [
    "ProblemSpec",
    "FdConfig",
    "ValueGrid",
    "Boundary",
    "PerpetualPut",
    "GeneratorResidual",
    "SolverError",
    "ExtractionError",
    "price_put_fd",
    "price_put_binomial",
    "binomial_exercise_frontier",
    "perpetual_put",
    "perpetual_threshold_value",
    "perpetual_threshold_search",
    "extract_boundary",
    "generator_residual",
]


class SolverError(RuntimeError):
    """Iterative solver failed to converge; carries the worst residual seen."""

    def __init__(self, message: str, worst_residual: float):
        super().__init__(message)
        self.worst_residual = worst_residual


class ExtractionError(RuntimeError):
    """Boundary extraction failed (empty exercise region on some time row)."""


@dataclass(frozen=True)
class ProblemSpec:
    """One-dimensional diffusion optimal stopping problem.

    gain(t, x) is the payoff collected at stopping, running(t, x) the flow
    payoff rate, and discount(t, x) >= 0 the killing rate; dynamics is either
    GbmParams or a generic SdeSpec; horizon may be ``math.inf``.
    """

    gain: Callable[[float, np.ndarray], np.ndarray]
    running: Callable[[float, np.ndarray], np.ndarray]
    discount: Callable[[float, np.ndarray], np.ndarray]
    dynamics: GbmParams | SdeSpec
    horizon: float

    @classmethod
    def american_put(cls, params: GbmParams) -> "ProblemSpec":
        """The put instance: gain (K - x)^+, no running payoff, discount r."""
        k = params.strike
        r = params.r
        return cls(
            gain=lambda t, x: np.maximum(k - np.asarray(x, dtype=float), 0.0),
            running=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
            discount=lambda t, x: np.full_like(np.asarray(x, dtype=float), r),
            dynamics=params,
            horizon=params.horizon,
        )


@dataclass(frozen=True)
class FdConfig:
    """Finite-difference grid and solver controls.

    ``None`` entries default from the strike: x_min = K/50, x_max = 4K,
    fit_tol = 1e-6 K, psor_tol = 1e-8 K.  fit_tol must dominate psor_tol so
    that exercise-set extraction is stable against solver noise.
    """

    n_time: int = 500
    n_space: int = 2000
    x_min: float | None = None
    x_max: float | None = None
    fit_tol: float | None = None
    psor_tol: float | None = None
    max_iter: int = 10_000
    omega: float = 1.6

    def resolved(self, params: GbmParams) -> "FdConfig":
        k = params.strike
        return FdConfig(
            n_time=self.n_time,
            n_space=self.n_space,
            x_min=self.x_min if self.x_min is not None else k / 50.0,
            x_max=self.x_max if self.x_max is not None else 4.0 * k,
            fit_tol=self.fit_tol if self.fit_tol is not None else 1e-6 * k,
            psor_tol=self.psor_tol if self.psor_tol is not None else 1e-8 * k,
            max_iter=self.max_iter,
            omega=self.omega,
        )


@dataclass(frozen=True)
class ValueGrid:
    """Solved value function on a rectangular (t, x) grid.

    ``values[i, j]`` approximates V(t_grid[i], x_grid[j]); ``exercise`` marks
    the stopping region: nodes with V - G < fit_tol restricted to G > 0 (the
    put's stopping region lies strictly in the money; without the restriction
    the far out-of-the-money tail, where V and G both vanish, would be
    mislabeled).
    """

    t_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    exercise: np.ndarray
    fit_tol: float
    params: GbmParams

    @property
    def n_time(self) -> int:
        return len(self.t_grid) - 1

    @property
    def n_space(self) -> int:
        return len(self.x_grid) - 1

    def gain(self) -> np.ndarray:
        """Obstacle (K - x)^+ per space node."""
        return np.maximum(self.params.strike - self.x_grid, 0.0)

    def value_at(self, t: float, x: float) -> float:
        """Bilinear interpolation of V at an off-grid point."""
        ti = np.clip(np.searchsorted(self.t_grid, t) - 1, 0, self.n_time - 1)
        wt = (t - self.t_grid[ti]) / (self.t_grid[ti + 1] - self.t_grid[ti])
        wt = min(max(wt, 0.0), 1.0)
        row = (1.0 - wt) * self.values[ti] + wt * self.values[ti + 1]
        return float(np.interp(x, self.x_grid, row))


@dataclass(frozen=True)
class Boundary:
    """Optimal stopping boundary t -> b(t), nondecreasing.

    ``pre_projection_violation`` is the largest amount (in state units) by
    which the raw extracted levels dipped below their running maximum before
    the isotonic projection restored monotonicity;
    ``pre_projection_violation_cells`` states it in local x-cell widths.
    """

    t_grid: np.ndarray
    b: np.ndarray
    pre_projection_violation: float = 0.0
    pre_projection_violation_cells: float = 0.0

    def __call__(self, t) -> np.ndarray | float:
        """Monotone piecewise-linear interpolation, clamped at the ends."""
        out = np.interp(t, self.t_grid, self.b)
        if np.isscalar(t):
            return float(out)
        return out

    def shifted(self, delta: float) -> "Boundary":
        """Boundary rigidly shifted by delta (for suboptimality experiments)."""
        return Boundary(
            t_grid=self.t_grid,
            b=self.b + delta,
            pre_projection_violation=self.pre_projection_violation,
            pre_projection_violation_cells=self.pre_projection_violation_cells,
        )


@njit(cache=True)
def _psor_step(lo: float, di: float, up: float, rhs, g, v, omega: float, tol: float, max_iter: int):
    """Projected SOR sweeps on a constant-coefficient tridiagonal system.

    Solves the complementarity problem A v >= rhs, v >= g,
    (A v - rhs)(v - g) = 0 with A = tridiag(lo, di, up), Gauss-Seidel order
    left to right (the sweep order is part of the algorithm).  Convergence is
    measured by the complementarity residual max_j |min((A v - rhs)_j,
    v_j - g_j)|, which vanishes exactly at the solution.  Returns
    (iterations, final residual).
    """
    n = v.shape[0]
    resid = 0.0
    for it in range(max_iter):
        for j in range(n):
            acc = rhs[j]
            if j > 0:
                acc -= lo * v[j - 1]
            if j < n - 1:
                acc -= up * v[j + 1]
            new = v[j] + omega * (acc / di - v[j])
            if new < g[j]:
                new = g[j]
            v[j] = new
        resid = 0.0
        for j in range(n):
            av = di * v[j]
            if j > 0:
                av += lo * v[j - 1]
            if j < n - 1:
                av += up * v[j + 1]
            eq = av - rhs[j]
            slack = v[j] - g[j]
            m = eq if eq < slack else slack
            if abs(m) > resid:
                resid = abs(m)
        if resid <= tol:
            return it + 1, resid
    return max_iter, resid


def price_put_fd(params: GbmParams, config: FdConfig | None = None) -> ValueGrid:
    """Solve the finite-horizon American put variational inequality.

    Crank-Nicolson on a uniform log-price grid with projected SOR at each
    backward time step, enforcing V >= (K - x)^+.  Dirichlet far-field data:
    V = K - x_min at the lower edge, V = 0 at the upper edge.

    Raises
    ------
    SolverError
        If some time step fails to reach psor_tol within max_iter sweeps.
    ValueError
        On an infinite horizon or an inadmissible grid configuration.
    """
    if not math.isfinite(params.horizon):
        raise ValueError("finite-difference solver requires a finite horizon")
    cfg = (config or FdConfig()).resolved(params)
    m, n = cfg.n_time, cfg.n_space
    if m < 50 or n < 50:
        raise ValueError(f"grid too coarse: need n_time, n_space >= 50, got {m}, {n}")
    if not (0 < cfg.x_min < params.strike < cfg.x_max):
        raise ValueError(f"need 0 < x_min < K < x_max, got [{cfg.x_min}, {cfg.x_max}]")

    t_grid = np.linspace(0.0, params.horizon, m + 1)
    y = np.linspace(math.log(cfg.x_min), math.log(cfg.x_max), n + 1)
    x_grid = np.exp(y)
    h = y[1] - y[0]
    dt = params.horizon / m

    gain = np.maximum(params.strike - x_grid, 0.0)
    a = 0.5 * params.sigma**2
    beta = params.r - 0.5 * params.sigma**2
    # Crank-Nicolson: (I - dt/2 L) V_new = (I + dt/2 L) V_old, L = a D_yy + beta D_y - r
    c_dd = a / h**2
    c_d = beta / (2.0 * h)
    lo = -0.5 * dt * (c_dd - c_d)
    di = 1.0 + 0.5 * dt * (2.0 * c_dd + params.r)
    up = -0.5 * dt * (c_dd + c_d)
    r_lo = 0.5 * dt * (c_dd - c_d)
    r_di = 1.0 - 0.5 * dt * (2.0 * c_dd + params.r)
    r_up = 0.5 * dt * (c_dd + c_d)

    values = np.empty((m + 1, n + 1))
    values[m] = gain
    v_lo_bc = params.strike - cfg.x_min
    v_hi_bc = 0.0
    g_int = gain[1:-1].copy()
    worst = 0.0
    for i in range(m - 1, -1, -1):
        prev = values[i + 1]
        rhs = r_lo * prev[:-2] + r_di * prev[1:-1] + r_up * prev[2:]
        # Dirichlet contributions at the new time level
        rhs[0] -= lo * v_lo_bc
        rhs[-1] -= up * v_hi_bc
        v = prev[1:-1].copy()
        n_iter, resid = _psor_step(lo, di, up, rhs, g_int, v, cfg.omega, cfg.psor_tol, cfg.max_iter)
        worst = max(worst, resid)
        if resid > cfg.psor_tol:
            raise SolverError(
                f"PSOR did not converge at t={t_grid[i]:.6g}: residual {resid:.3e} > {cfg.psor_tol:.3e}",
                worst_residual=resid,
            )
        values[i, 0] = v_lo_bc
        values[i, -1] = v_hi_bc
        values[i, 1:-1] = v

    diff = values - gain[None, :]
    exercise = (diff < cfg.fit_tol) & (gain[None, :] > 0.0)
    return ValueGrid(
        t_grid=t_grid,
        x_grid=x_grid,
        values=values,
        exercise=exercise,
        fit_tol=cfg.fit_tol,
        params=params,
    )


def _binomial_backward(params: GbmParams, x0: float, n_levels: int, record_frontier: bool):
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    if x0 <= 0:
        raise ValueError(f"x0 must be > 0, got {x0}")
    if not math.isfinite(params.horizon):
        raise ValueError("binomial tree requires a finite horizon")
    step = params.horizon / n_levels
    u = math.exp(params.sigma * math.sqrt(step))
    d = 1.0 / u
    disc = math.exp(-params.r * step)
    p = (math.exp(params.r * step) - d) / (u - d)
    if not (0.0 < p < 1.0):
        raise ValueError(f"inadmissible tree: risk-neutral probability {p} outside (0, 1)")
    k = params.strike
    log_u = params.sigma * math.sqrt(step)

    # Level m nodes: x0 * exp((2j - m) log_u), j = 0..m.
    j = np.arange(n_levels + 1)
    x = x0 * np.exp((2.0 * j - n_levels) * log_u)
    v = np.maximum(k - x, 0.0)
    frontier = np.full(n_levels + 1, np.nan) if record_frontier else None
    if record_frontier:
        ex = v > 0.0
        if np.any(ex):
            frontier[n_levels] = x[np.nonzero(ex)[0][-1]]
    for m in range(n_levels - 1, -1, -1):
        cont = disc * (p * v[1 : m + 2] + (1.0 - p) * v[: m + 1])
        x = x0 * np.exp((2.0 * np.arange(m + 1) - m) * log_u)
        payoff = np.maximum(k - x, 0.0)
        v = np.maximum(payoff, cont)
        if record_frontier:
            ex = (payoff >= cont - 1e-12) & (payoff > 0.0)
            if np.any(ex):
                frontier[m] = x[np.nonzero(ex)[0][-1]]
    return float(v[0]), frontier


def price_put_binomial(params: GbmParams, x0: float, n_levels: int) -> float:
    """American put value by a CRR binomial tree with early-exercise max.

    Deterministic; serves as an independent oracle for the PDE solver.
    """
    value, _ = _binomial_backward(params, x0, n_levels, record_frontier=False)
    return value


def binomial_exercise_frontier(params: GbmParams, x0: float, n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Exercise frontier of the CRR tree: per level, the largest exercised node.

    Returns
    -------
    (times, frontier)
        Arrays of length n_levels + 1, maturity included; times[m] =
        m * T / n_levels.  frontier[m] is NaN on levels whose nodes do not
        reach the exercise region (always the earliest levels, whose span
        around x0 is too narrow).
    """
    _, frontier = _binomial_backward(params, x0, n_levels, record_frontier=True)
    times = np.arange(n_levels + 1) * (params.horizon / n_levels)
    return times, frontier


def perpetual_threshold_value(params: GbmParams, x: float, y: float) -> float:
    """Value of the stop-at-threshold rule: collect K - y on first hitting y.

    h(y; x) = (K - y) * (x / y)^(-2r/sigma^2) for a start x above the
    threshold (the power factor is the Laplace transform of the GBM hitting
    time of y at rate r).
    """
    if params.r <= 0:
        raise ValueError("perpetual threshold value requires r > 0")
    if y <= 0 or x <= 0:
        raise ValueError("x and y must be > 0")
    gamma = 2.0 * params.r / params.sigma**2
    return (params.strike - y) * (x / y) ** (-gamma)


def perpetual_threshold_search(params: GbmParams, x: float, tol: float = 1e-12) -> tuple[float, float]:
    """Best exercise threshold by golden-section search over y in (0, K).

    Returns
    -------
    (y_star, value)
        Maximizer and maximum of perpetual_threshold_value(., x).  The
        maximum is resolved to machine precision; the maximizer itself is
        limited to ~sqrt(eps) * K by the flatness of the objective at its
        peak, as for any derivative-free search.
    """
    if params.r <= 0:
        raise ValueError("perpetual threshold search requires r > 0")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    lo = 1e-9 * params.strike
    hi = params.strike * (1.0 - 1e-12)
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = perpetual_threshold_value(params, x, c)
    fd = perpetual_threshold_value(params, x, d)
    while hi - lo > tol * params.strike:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = perpetual_threshold_value(params, x, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = perpetual_threshold_value(params, x, d)
    y_star = 0.5 * (lo + hi)
    return y_star, perpetual_threshold_value(params, x, y_star)


@dataclass(frozen=True)
class PerpetualPut:
    """Perpetual American put: threshold b_star and closed-form value.

    V(x) = (K - b*) (x / b*)^(-2r/sigma^2) for x >= b*, K - x below, with
    b* = 2 r K / (2 r + sigma^2).
    """

    params: GbmParams
    b_star: float

    def value(self, x):
        x_arr = np.asarray(x, dtype=float)
        gamma = 2.0 * self.params.r / self.params.sigma**2
        k = self.params.strike
        cont = (k - self.b_star) * (x_arr / self.b_star) ** (-gamma)
        out = np.where(x_arr < self.b_star, k - x_arr, cont)
        if np.isscalar(x) or x_arr.ndim == 0:
            return float(out)
        return out

    def derivative(self, x):
        """V'(x); equals -1 on the stopping side and tends to -1 at b*."""
        x_arr = np.asarray(x, dtype=float)
        gamma = 2.0 * self.params.r / self.params.sigma**2
        k = self.params.strike
        cont = -gamma * (k - self.b_star) / self.b_star * (x_arr / self.b_star) ** (-gamma - 1.0)
        out = np.where(x_arr < self.b_star, -1.0, cont)
        if np.isscalar(x) or x_arr.ndim == 0:
            return float(out)
        return out


def perpetual_put(params: GbmParams) -> PerpetualPut:
    """Closed-form perpetual American put.

    Raises
    ------
    ValueError
        If r <= 0 (the perpetual problem degenerates: never exercising is
        optimal in the limit and no finite threshold exists).
    """
    if params.r <= 0:
        raise ValueError("perpetual put requires r > 0")
    b_star = 2.0 * params.r * params.strike / (2.0 * params.r + params.sigma**2)
    return PerpetualPut(params=params, b_star=b_star)


def extract_boundary(grid: ValueGrid, fit_tol: float | None = None) -> Boundary:
    """Read the optimal stopping boundary off a solved value grid.

    Per time row, the raw level is the largest exercised node refined by one
    linear interpolation step of V - G to the fit_tol crossing; the result is
    made nondecreasing by an isotonic maximum scan, and the magnitude of any
    pre-projection monotonicity violation is reported on the Boundary.

    Raises
    ------
    ExtractionError
        If some row before the horizon has an empty exercise region (grid too
        coarse or x_min above the boundary).
    """
    tol = grid.fit_tol if fit_tol is None else fit_tol
    if tol < grid.fit_tol:
        raise ValueError(f"fit_tol {tol} below the grid's solve tolerance {grid.fit_tol}")
    gain = grid.gain()
    diff = grid.values - gain[None, :]
    mask = (diff < tol) & (gain[None, :] > 0.0)
    m = grid.n_time
    raw = np.empty(m + 1)
    for i in range(m + 1):
        idx = np.nonzero(mask[i])[0]
        # The lower edge is pinned at V = K - x_min = G, so node 0 alone is
        # no evidence of genuine exercise.
        if idx.size == 0 or idx[-1] == 0:
            raise ExtractionError(
                f"empty exercise region at t={grid.t_grid[i]:.6g}; refine the grid or lower x_min"
            )
        j = int(idx[-1])
        if j + 1 > grid.n_space:
            raise ExtractionError("exercise region touches x_max; raise x_max")
        d0, d1 = diff[i, j], diff[i, j + 1]
        if d1 > d0:
            frac = (tol - d0) / (d1 - d0)
            frac = min(max(frac, 0.0), 1.0)
        else:
            frac = 0.0
        raw[i] = grid.x_grid[j] + frac * (grid.x_grid[j + 1] - grid.x_grid[j])
    iso = np.maximum.accumulate(raw)
    violation = float(np.max(iso - raw))
    # Local cell width at the boundary scale for reporting in cell units.
    h_log = math.log(grid.x_grid[1] / grid.x_grid[0])
    cells = violation / (float(np.median(iso)) * h_log) if violation > 0 else 0.0
    return Boundary(
        t_grid=grid.t_grid.copy(),
        b=iso,
        pre_projection_violation=violation,
        pre_projection_violation_cells=cells,
    )


@dataclass(frozen=True)
class GeneratorResidual:
    """PDE residual of the solved value on the continuation region.

    residual[i, j] = V_t + (r - sigma^2/2) V_y + sigma^2/2 V_yy - r V in log
    coordinates (equal to V_t + r x V_x + sigma^2 x^2 / 2 V_xx - r V), NaN
    outside the qualifying node set.
    """

    residual: np.ndarray
    mask: np.ndarray
    max_abs: float
    mean_abs: float


def generator_residual(grid: ValueGrid, params: GbmParams) -> GeneratorResidual:
    """Central-difference generator residual on interior continuation nodes.

    Qualifying nodes lie at least 2 cells from the grid edges (both axes) and
    at least 2 cells above the exercise region of their row.

    Raises
    ------
    RuntimeError
        If no node qualifies.
    """
    v = grid.values
    m, n = grid.n_time, grid.n_space
    dt = grid.t_grid[1] - grid.t_grid[0]
    h = math.log(grid.x_grid[1] / grid.x_grid[0])
    v_t = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2.0 * dt)
    v_y = (v[1:-1, 2:] - v[1:-1, :-2]) / (2.0 * h)
    v_yy = (v[1:-1, 2:] - 2.0 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h**2
    res_int = (
        v_t
        + (params.r - 0.5 * params.sigma**2) * v_y
        + 0.5 * params.sigma**2 * v_yy
        - params.r * v[1:-1, 1:-1]
    )
    residual = np.full((m + 1, n + 1), np.nan)
    residual[1:-1, 1:-1] = res_int

    mask = np.zeros((m + 1, n + 1), dtype=bool)
    for i in range(2, m - 1):
        idx = np.nonzero(grid.exercise[i])[0]
        j_lo = (int(idx[-1]) + 2) if idx.size else 2
        j_lo = max(j_lo, 2)
        if j_lo <= n - 2:
            mask[i, j_lo : n - 1] = True
    if not np.any(mask):
        raise RuntimeError("no qualifying continuation nodes for the residual")
    vals = np.abs(residual[mask])
    return GeneratorResidual(
        residual=np.where(mask, residual, np.nan),
        mask=mask,
        max_abs=float(np.max(vals)),
        mean_abs=float(np.mean(vals)),
    )
