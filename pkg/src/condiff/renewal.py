"""Renewal verification of survival via a restart kernel.

Each boundary exit of the reinsertion dynamics restarts a path from
the conditional law at the exit time.  The expected number of restarts
per particle F then solves a Volterra equation driven by the first
exit-time law and a two-argument restart kernel

    F(t) = P(tau1 <= t) + int_0^t K(s, t - s) dF(s),

where K(s, u) is the probability that a path restarted at time s from
the conditional law exits again within u.  Solving this equation from
independently estimated ingredients and comparing F against -log of
the directly simulated survival is a strong consistency check: the two
sides come from different estimators and different randomness.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .errors import ContractionViolation, SurvivorDepletion
from .killed_sim import KilledEnsemble, SimConfig, exit_cdf, simulate_killed
from .measures import MeasureFlow
from .model import Cloud, FeedbackPolicy, ModelSpec
from .parallel import indexed_map

_TIME_TOL = 1e-9
_DENOM_FLOOR = 1e-12


@dataclass
class RestartKernel:
    """Exit-time CDFs after restarting at s from the conditional law.

    cdf[i, j] = P(exit within u_grid[j] | restarted at s_grid[i]); NaN
    where s + u overruns the horizon of the estimate.  se holds the
    binomial standard error per entry.  isotonic_correction reports the
    largest adjustment the monotone projection applied (exit-time CDFs
    sampled from one ensemble are already monotone, so this is a guard
    that stays at zero unless something upstream went wrong).
    """

    s_grid: np.ndarray
    u_grid: np.ndarray
    cdf: np.ndarray
    se: np.ndarray
    n_paths: int
    isotonic_correction: float

    @property
    def dt_r(self) -> float:
        return float(self.u_grid[1] - self.u_grid[0])

    def phat(self, t: float) -> float:
        """max_s K(s, t - s) over grid points, the one-cycle exit bound."""
        m = int(round(t / self.dt_r))
        if abs(m * self.dt_r - t) > _TIME_TOL or m < 0 or m >= self.u_grid.shape[0]:
            raise ValueError("t must be a node of the kernel grid")
        vals = [self.cdf[j, m - j] for j in range(min(m + 1, self.s_grid.shape[0]))]
        return float(np.nanmax(vals)) if vals else 0.0


def estimate_restart_kernel(model: ModelSpec, policy: FeedbackPolicy,
                            flow: MeasureFlow, config: SimConfig, dt_r: float,
                            n_paths: int, threads: int = 1) -> RestartKernel:
    """Estimate K column by column with fresh restart ensembles.

    Column i restarts n_paths particles at s = i * dt_r from the flow
    node there and records the exit-time CDF on the remaining window.
    Columns are independent (derived seeds) so threading over them
    leaves the result bit-identical.
    """
    if not isinstance(policy, FeedbackPolicy):
        raise ValueError("restart estimation requires a feedback policy")
    t_end = float(flow.times[-1])
    n_r = int(round(t_end / dt_r))
    if n_r < 1 or abs(n_r * dt_r - t_end) > _TIME_TOL:
        raise ValueError("dt_r must divide the flow horizon evenly")
    steps_per = dt_r / config.dt
    if abs(steps_per - round(steps_per)) > 1e-6:
        raise ValueError("dt_r must be a multiple of the simulation step")

    s_grid = np.arange(n_r) * dt_r
    u_grid = np.arange(n_r + 1) * dt_r
    for s in s_grid:
        flow.index_at(s)  # raises if the flow grid lacks a node at s

    def column(i: int) -> tuple[np.ndarray, np.ndarray]:
        s = float(s_grid[i])
        col_seed = rng.derive_seed(config.seed, rng.KERNEL_COLUMN, i)
        col_config = replace(config, n_particles=n_paths, seed=col_seed,
                             grid=np.array([s, t_end]), min_survivors=0,
                             record_controls=False, record_outside_time=False)
        start = Cloud(flow.node_at(s).points)
        ens = simulate_killed(model, policy, flow, col_config,
                              initial_law=start, t0=s)
        valid = n_r - i + 1
        k_row = exit_cdf(ens, s + u_grid[:valid])
        return k_row, np.sqrt(k_row * (1.0 - k_row) / n_paths)

    rows = indexed_map(column, range(n_r), threads=threads)

    cdf = np.full((n_r, n_r + 1), np.nan)
    se = np.full((n_r, n_r + 1), np.nan)
    correction = 0.0
    for i, (k_row, se_row) in enumerate(rows):
        mono = np.maximum.accumulate(k_row)
        correction = max(correction, float(np.max(mono - k_row)))
        cdf[i, : k_row.shape[0]] = mono
        se[i, : k_row.shape[0]] = se_row
    return RestartKernel(s_grid=s_grid, u_grid=u_grid, cdf=cdf, se=se,
                         n_paths=n_paths, isotonic_correction=correction)


def _check_inputs(cdf_tau1: np.ndarray, kernel: RestartKernel,
                  grid: np.ndarray) -> int:
    n = grid.shape[0]
    if cdf_tau1.shape != (n,):
        raise ValueError("cdf_tau1 must be sampled on the output grid")
    if kernel.u_grid.shape[0] != n or np.any(np.abs(kernel.u_grid - (grid - grid[0])) > _TIME_TOL):
        raise ValueError("kernel grid must match the output grid")
    return n


def volterra_solve(cdf_tau1, kernel: RestartKernel, grid) -> np.ndarray:
    """Forward substitution for F on the renewal grid.

    The left-endpoint rule makes the last increment of each prefix sum
    implicit, so every step divides by 1 - K(t_{m-1}, dt_r).  A kernel
    whose one-cycle exit probability reaches one has no finite renewal
    function; that surfaces as ContractionViolation.
    """
    grid = np.asarray(grid, dtype=float)
    cdf_tau1 = np.asarray(cdf_tau1, dtype=float)
    n = _check_inputs(cdf_tau1, kernel, grid)
    p_end = kernel.phat(float(grid[-1] - grid[0]))
    if p_end >= 1.0 - _DENOM_FLOOR:
        raise ContractionViolation(
            f"one-cycle exit probability {p_end:.6g} reaches 1; "
            "the renewal equation has no bounded solution")
    f = np.zeros(n)
    f[0] = cdf_tau1[0]
    for m in range(1, n):
        k_prev = kernel.cdf[m - 1, 1]
        denom = 1.0 - k_prev
        if not np.isfinite(denom) or denom <= _DENOM_FLOOR:
            raise ContractionViolation(
                f"restart kernel step probability {k_prev:.6g} at "
                f"s={grid[m - 1]:g} leaves no mass to propagate")
        acc = cdf_tau1[m]
        for j in range(m - 1):
            acc += kernel.cdf[j, m - j] * (f[j + 1] - f[j])
        f[m] = (acc - k_prev * f[m - 1]) / denom
    return f


def volterra_fixed_point_iteration(cdf_tau1, kernel: RestartKernel, grid,
                                   tol: float = 1e-13,
                                   max_iter: int = 10_000) -> np.ndarray:
    """Solve the same discrete system by Picard iteration.

    Converges geometrically at rate p_end < 1 and agrees with the
    forward substitution to solver precision; kept as an independent
    route through the same equations.
    """
    grid = np.asarray(grid, dtype=float)
    cdf_tau1 = np.asarray(cdf_tau1, dtype=float)
    n = _check_inputs(cdf_tau1, kernel, grid)
    p_end = kernel.phat(float(grid[-1] - grid[0]))
    if p_end >= 1.0 - _DENOM_FLOOR:
        raise ContractionViolation(
            f"one-cycle exit probability {p_end:.6g} reaches 1; "
            "the renewal equation has no bounded solution")
    f = cdf_tau1.copy()
    for _ in range(max_iter):
        f_next = cdf_tau1.copy()
        for m in range(1, n):
            acc = 0.0
            for j in range(m):
                acc += kernel.cdf[j, m - j] * (f[j + 1] - f[j])
            f_next[m] += acc
        delta = float(np.max(np.abs(f_next - f)))
        f = f_next
        if delta < tol:
            break
    return f


@dataclass
class LogSurvivalReport:
    """Residuals between a renewal curve and -log of a survival curve."""

    times: np.ndarray
    f_values: np.ndarray
    neg_log_survival: np.ndarray
    residuals: np.ndarray
    max_residual: float


def log_survival_check(times, f_values, survival) -> LogSurvivalReport:
    """Compare F(t) against -log S(t) pointwise on a shared grid."""
    times = np.asarray(times, dtype=float)
    f_values = np.asarray(f_values, dtype=float)
    survival = np.asarray(survival, dtype=float)
    if not (times.shape == f_values.shape == survival.shape):
        raise ValueError("times, f_values, and survival must share a shape")
    bad = survival <= 0
    if np.any(bad):
        t_bad = float(times[np.argmax(bad)])
        raise SurvivorDepletion(t_bad, 0, 1)
    neg_log = -np.log(survival)
    resid = np.abs(f_values - neg_log)
    return LogSurvivalReport(times=times.copy(), f_values=f_values.copy(),
                             neg_log_survival=neg_log, residuals=resid,
                             max_residual=float(resid.max()))


def first_exit_cdf(ens: KilledEnsemble, grid) -> np.ndarray:
    """The Volterra driving term, read off a killed ensemble."""
    return exit_cdf(ens, np.asarray(grid, dtype=float))
