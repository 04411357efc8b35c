"""Reward evaluation on simulated ensembles, and policy search.

The objective is the time integral of the running reward under the
conditional law plus a terminal term, with an optional penalty per
reinsertion when the reinsertion dynamics do the estimating.  The
integral uses the left-endpoint rule on the output grid, so a running
reward identically equal to one integrates to the horizon exactly.

Optimization evaluates candidate policies under common random numbers:
every candidate re-solves the fixed point and re-simulates with the
same seed, so objective differences between candidates are not buried
in Monte Carlo noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, minimize

from . import rng
from .errors import ReinsertionBlowup, SurvivorDepletion, TotalExtinction
from .fleming_viot import DEFAULT_REINSERTION_CAP, FVTrace, simulate_fv_meanfield
from .killed_sim import KilledEnsemble, SimConfig
from .measures import EmpiricalMeasure, MeasureFlow, conditional_empirical
from .model import (ConstantPolicy, FeedbackPolicy, GridPolicy, LinearPolicy,
                    ModelSpec, RewardSpec)
from .parallel import indexed_map
from .picard import solve_fixed_point

DEFAULT_BATCHES = 20


@dataclass
class RewardReport:
    """Reward estimate with a batch-based standard error.

    batch_totals holds the estimate recomputed on contiguous particle
    batches; the standard errors are the batch standard deviations
    scaled by 1/sqrt(B).
    """

    running: float
    terminal: float
    reinsertion: float
    total: float
    running_se: float
    terminal_se: float
    total_se: float
    batch_totals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "running": self.running,
            "terminal": self.terminal,
            "reinsertion": self.reinsertion,
            "total": self.total,
            "running_se": self.running_se,
            "terminal_se": self.terminal_se,
            "total_se": self.total_se,
        }


def _batch_slices(n: int, n_batches: int) -> list[slice]:
    bounds = np.linspace(0, n, min(n_batches, n) + 1).astype(int)
    return [slice(int(bounds[b]), int(bounds[b + 1])) for b in range(len(bounds) - 1)]


def _running_values(reward: RewardSpec, flow: MeasureFlow, times: np.ndarray,
                    snapshots: np.ndarray, controls: np.ndarray) -> list[np.ndarray]:
    """Per-particle running integrand at every node except the last."""
    out = []
    for m in range(times.shape[0] - 1):
        t = float(times[m])
        out.append(reward.running(t, snapshots[m], flow.mean_at(t), controls[m]))
    return out


def eval_reward_conditional(ens: KilledEnsemble, flow: MeasureFlow,
                            reward: RewardSpec | None = None,
                            n_batches: int = DEFAULT_BATCHES) -> RewardReport:
    """Reward of a killed run, conditioning every term on survival.

    The measure argument of the running reward is read from the frozen
    input flow, matching what the drift saw during the simulation.
    """
    if ens.controls is None:
        raise ValueError("reward evaluation needs recorded controls")
    reward = ens.model.reward if reward is None else reward
    times = ens.times
    deltas = np.diff(times)
    values = _running_values(reward, flow, times, ens.snapshots, ens.controls)
    alive_masks = [ens.alive_at(m) for m in range(times.shape[0])]

    def totals(sel: slice) -> tuple[float, float]:
        run = 0.0
        for m, vals in enumerate(values):
            alive = alive_masks[m][sel]
            if not alive.any():
                raise SurvivorDepletion(float(times[m]), 0, 1)
            run += float(deltas[m]) * float(vals[sel][alive].mean())
        cloud = conditional_empirical(ens.snapshots[-1][sel], alive_masks[-1][sel])
        return run, reward.terminal(cloud)

    running, terminal = totals(slice(None))
    batches = [totals(s) for s in _batch_slices(ens.n, n_batches)]
    return _assemble_report(running, terminal, 0.0, batches, reinsertions=None)


def eval_reward_fv(fv: FVTrace, flow: MeasureFlow, reward: RewardSpec | None = None,
                   reinsertion_cost: float | None = None,
                   n_batches: int = DEFAULT_BATCHES) -> RewardReport:
    """Reward of a reinsertion run, charging a cost per reinsertion.

    All particles are alive by construction, so the averages are plain;
    the reinsertion term is -cost times the mean final count, which
    makes the dependence on the cost exactly linear.
    """
    reward = fv.model.reward if reward is None else reward
    cost = reward.reinsertion_cost if reinsertion_cost is None else float(reinsertion_cost)
    if cost < 0:
        raise ValueError("reinsertion_cost must be nonnegative")
    times = fv.times
    deltas = np.diff(times)
    values = _running_values(reward, flow, times, fv.snapshots, fv.controls)

    def totals(sel: slice) -> tuple[float, float, float]:
        run = sum(float(deltas[m]) * float(vals[sel].mean())
                  for m, vals in enumerate(values))
        term = reward.terminal(EmpiricalMeasure(fv.snapshots[-1][sel]))
        return run, term, -cost * float(fv.final_counts[sel].mean())

    running, terminal, reinsertion = totals(slice(None))
    batches = [totals(s) for s in _batch_slices(fv.n, n_batches)]
    return _assemble_report(running, terminal, reinsertion,
                            [(r, t) for r, t, _ in batches],
                            reinsertions=[c for _, _, c in batches])


def _assemble_report(running: float, terminal: float, reinsertion: float,
                     batches: list[tuple[float, float]],
                     reinsertions: list[float] | None) -> RewardReport:
    runs = np.array([r for r, _ in batches])
    terms = np.array([t for _, t in batches])
    extra = np.asarray(reinsertions) if reinsertions is not None else np.zeros(len(batches))
    totals = runs + terms + extra
    b = len(batches)

    def se(arr: np.ndarray) -> float:
        return float(arr.std(ddof=1) / np.sqrt(b)) if b > 1 else 0.0

    return RewardReport(
        running=running, terminal=terminal, reinsertion=reinsertion,
        total=running + terminal + reinsertion,
        running_se=se(runs), terminal_se=se(terms), total_se=se(totals),
        batch_totals=totals,
    )


@dataclass(frozen=True)
class PolicyFamily:
    """Finite-dimensional parametrization of a feedback policy."""

    kind: str
    dim: int
    init: tuple
    lo: tuple
    hi: tuple
    time_bins: int = 0
    space_bins: int = 0

    MAX_DIM = 64

    def __post_init__(self):
        if self.dim < 1 or self.dim > self.MAX_DIM:
            raise ValueError(f"parameter dimension must lie in [1, {self.MAX_DIM}]")

    @staticmethod
    def constant(model: ModelSpec) -> "PolicyFamily":
        box = model.control_set
        return PolicyFamily("constant", box.dim, (0.0,) * box.dim, box.lo, box.hi)

    @staticmethod
    def linear(model: ModelSpec) -> "PolicyFamily":
        box = model.control_set
        d_a, d = box.dim, model.dim
        widths = np.asarray(box.hi) - np.asarray(box.lo)
        slope = np.repeat(widths, d)
        lo = tuple(np.concatenate([np.asarray(box.lo), -slope]).tolist())
        hi = tuple(np.concatenate([np.asarray(box.hi), slope]).tolist())
        return PolicyFamily("linear", d_a + d_a * d, (0.0,) * (d_a + d_a * d), lo, hi)

    @staticmethod
    def grid(model: ModelSpec, time_bins: int, space_bins: int) -> "PolicyFamily":
        box = model.control_set
        cells = time_bins * space_bins ** model.dim * box.dim
        lo = tuple(np.tile(box.lo, cells // box.dim).tolist())
        hi = tuple(np.tile(box.hi, cells // box.dim).tolist())
        return PolicyFamily("grid", cells, (0.0,) * cells, lo, hi,
                            time_bins=time_bins, space_bins=space_bins)

    def build(self, model: ModelSpec, params) -> FeedbackPolicy:
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {params.shape}")
        box = model.control_set
        if self.kind == "constant":
            return ConstantPolicy(tuple(params.tolist()), box)
        if self.kind == "linear":
            d_a = box.dim
            theta1 = params[d_a:].reshape(d_a, model.dim)
            return LinearPolicy(tuple(params[:d_a].tolist()),
                                tuple(map(tuple, theta1.tolist())), box)
        if self.kind == "grid":
            return GridPolicy.build(model, self.time_bins, self.space_bins, params)
        raise ValueError(f"unknown policy family {self.kind!r}")


def policy_family(model: ModelSpec, kind: str, time_bins: int = 2,
                  space_bins: int = 2) -> PolicyFamily:
    if kind == "constant":
        return PolicyFamily.constant(model)
    if kind == "linear":
        return PolicyFamily.linear(model)
    if kind == "grid":
        return PolicyFamily.grid(model, time_bins, space_bins)
    raise ValueError(f"unknown policy family {kind!r}")


@dataclass
class OptResult:
    """Search outcome with the full evaluation trace.

    best_so_far is the running maximum of trace_values, so plots of the
    search progress never dip.
    """

    best_params: np.ndarray
    best_value: float
    trace_params: np.ndarray
    trace_values: np.ndarray
    trace_ses: np.ndarray
    best_so_far: np.ndarray
    n_evals: int
    method: str
    seed: int
    metadata: dict = field(default_factory=dict)


def optimize_policy(model: ModelSpec, family: PolicyFamily, config: SimConfig,
                    objective: str = "conditional", method: str = "nelder-mead",
                    budget: int = 100, picard_tol: float = 1e-2,
                    picard_max_iter: int = 10,
                    reinsertion_cost: float | None = None,
                    reinsertion_cap: int = DEFAULT_REINSERTION_CAP,
                    threads: int = 1) -> OptResult:
    """Maximize the reward over a policy family under common random numbers.

    objective "conditional" scores candidates on the killed ensemble of
    their own fixed point; "fv" rescores via mean-field reinsertion
    dynamics driven by that fixed point, including the reinsertion
    penalty.  Candidates whose ensemble depletes (or whose reinsertion
    run blows up) score -inf and stay in the trace.

    method "nelder-mead" is sequential; "cross-entropy" evaluates each
    generation's population in parallel when threads > 1, with results
    independent of the thread count.
    """
    if objective not in ("conditional", "fv"):
        raise ValueError("objective must be 'conditional' or 'fv'")
    if method not in ("nelder-mead", "cross-entropy"):
        raise ValueError("method must be 'nelder-mead' or 'cross-entropy'")
    if budget < 1:
        raise ValueError("budget must be positive")

    lo = np.asarray(family.lo, dtype=float)
    hi = np.asarray(family.hi, dtype=float)

    def evaluate(params: np.ndarray) -> tuple[float, float]:
        policy = family.build(model, params)
        try:
            fp = solve_fixed_point(model, policy, config, tol=picard_tol,
                                   max_iter=picard_max_iter)
            if objective == "conditional":
                report = eval_reward_conditional(fp.ensemble, fp.flow)
            else:
                fv = simulate_fv_meanfield(model, policy, fp.flow, config,
                                           reinsertion_cap=reinsertion_cap)
                report = eval_reward_fv(fv, fp.flow,
                                        reinsertion_cost=reinsertion_cost)
        except (SurvivorDepletion, TotalExtinction, ReinsertionBlowup):
            return -np.inf, np.nan
        return report.total, report.total_se

    trace_params: list[np.ndarray] = []
    trace_values: list[float] = []
    trace_ses: list[float] = []

    def record(params: np.ndarray, value: float, se: float) -> None:
        trace_params.append(np.array(params, dtype=float))
        trace_values.append(float(value))
        trace_ses.append(float(se))

    if method == "nelder-mead":
        def neg(params):
            value, se = evaluate(params)
            record(params, value, se)
            return np.inf if value == -np.inf else -value

        minimize(neg, np.asarray(family.init, dtype=float), method="Nelder-Mead",
                 bounds=Bounds(lo, hi), options={"maxfev": budget, "xatol": 1e-4,
                                                 "fatol": 1e-6})
    else:
        pop, elite_count, smoothing = 16, 4, 0.7
        gen = rng.generator(config.seed, rng.OPTIMIZER, 0)
        mean = np.asarray(family.init, dtype=float)
        std = (hi - lo) / 4.0
        std_floor = 1e-6 * (hi - lo)
        generations = max(1, budget // pop)
        for _ in range(generations):
            samples = np.clip(mean + std * gen.standard_normal((pop, family.dim)),
                              lo, hi)
            results = indexed_map(evaluate, list(samples), threads=threads)
            values = [v for v, _ in results]
            for params, (value, se) in zip(samples, results):
                record(params, value, se)
            order = np.argsort(-np.asarray(values), kind="stable")
            elites = samples[order[:elite_count]]
            finite = np.isfinite(np.asarray(values)[order[:elite_count]])
            if finite.any():
                elites = elites[finite]
                mean = smoothing * elites.mean(axis=0) + (1 - smoothing) * mean
                spread = elites.std(axis=0) if elites.shape[0] > 1 else std
                std = np.maximum(smoothing * spread + (1 - smoothing) * std, std_floor)

    values_arr = np.asarray(trace_values)
    params_arr = np.asarray(trace_params)
    best_idx = int(np.argmax(values_arr))
    return OptResult(
        best_params=params_arr[best_idx].copy(),
        best_value=float(values_arr[best_idx]),
        trace_params=params_arr,
        trace_values=values_arr,
        trace_ses=np.asarray(trace_ses),
        best_so_far=np.maximum.accumulate(values_arr),
        n_evals=values_arr.shape[0],
        method=method,
        seed=config.seed,
        metadata={"objective": objective, "budget": budget,
                  "family": family.kind, "picard_tol": picard_tol,
                  "picard_max_iter": picard_max_iter},
    )
