"""Reinsertion dynamics that keep every particle alive.

Instead of dying at the boundary, a particle jumps back into the domain
and a counter increments.  Two variants are provided: the finite-system
rule reinserts at the position of a uniformly chosen other particle
that is currently inside (and drives the drift with the instantaneous
empirical mean of all particles), while the mean-field rule reinserts
at a fresh sample of a frozen input flow (and reads the drift's measure
argument from that flow).  The cumulative mean number of reinsertions
per particle estimates minus the log survival probability of the
corresponding killed process.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import NumericalError, ReinsertionBlowup, TotalExtinction
from .geometry import BOUNDARY_TOL
from .killed_sim import KilledEnsemble, SimConfig, conditional_flow
from .measures import EmpiricalMeasure, MeasureFlow, sample, w1_distance_1d, sliced_w1
from .model import FeedbackPolicy, ModelSpec, drift_given_mean

_TIME_TOL = 1e-9

SOURCE_UNIFORM_PEER = 0
SOURCE_FLOW_SAMPLE = 1
_SOURCE_NAMES = {SOURCE_UNIFORM_PEER: "uniform-peer", SOURCE_FLOW_SAMPLE: "flow-sample"}

DEFAULT_REINSERTION_CAP = 10_000


@dataclass
class FVTrace:
    """Snapshots, reinsertion events, and the mean reinsertion curve."""

    model: ModelSpec
    variant: str
    times: np.ndarray
    snapshots: np.ndarray
    controls: np.ndarray
    f_curve: np.ndarray
    f_se: np.ndarray
    final_counts: np.ndarray
    event_times: np.ndarray
    event_particles: np.ndarray
    event_positions: np.ndarray
    event_sources: np.ndarray
    dt: float
    seed: int

    @property
    def n(self) -> int:
        return self.snapshots.shape[1]

    def f_at(self, t: float) -> float:
        """Mean reinsertion count per particle accumulated by time t."""
        return float(np.sum(self.event_times <= t + _TIME_TOL)) / self.n

    def source_names(self) -> list[str]:
        return [_SOURCE_NAMES[int(s)] for s in self.event_sources]


def _simulate_fv(model: ModelSpec, policy: FeedbackPolicy, flow: MeasureFlow | None,
                 config: SimConfig, variant: str, reinsertion_cap: int,
                 initial_law=None) -> FVTrace:
    grid = config.grid
    if abs(grid[0]) > _TIME_TOL:
        raise ValueError("reinsertion dynamics must start at t=0")
    if grid[-1] > model.horizon + _TIME_TOL:
        raise ValueError("grid extends beyond the model horizon")
    if not isinstance(policy, FeedbackPolicy):
        raise ValueError("reinsertion dynamics take a feedback policy")

    n = config.n_particles
    d = model.dim
    dt = config.dt
    sqrt_dt = np.sqrt(dt)
    sigma = model.sigma_matrix()
    sigma_t = sigma.T.copy()
    domain = model.domain
    seed = config.seed
    node_steps = config.node_steps()
    total_steps = int(node_steps[-1])

    mean_field = variant == "meanfield"
    if mean_field:
        if flow is None:
            raise ValueError("the mean-field variant requires an input flow")
        if model.drift.mf_gain != 0.0:
            step_times = np.arange(total_steps) * dt
            idx = np.searchsorted(flow.times, step_times - _TIME_TOL, side="left")
            if np.any(idx >= flow.times.shape[0]):
                raise ValueError("flow grid does not cover the simulation window")
            means = flow.node_means[idx]
        else:
            means = None
    else:
        if n < 2:
            raise ValueError("the finite variant needs at least two particles")
        means = None

    law = model.initial if initial_law is None else initial_law
    x = np.array(law.sample(n, seed, rng.INITIAL_SAMPLE, 0), dtype=float)
    if np.any(domain.boundary_distance(x) < -BOUNDARY_TOL):
        raise ValueError("initial points must lie in the closed domain")

    counts = np.zeros(n, dtype=np.int64)
    ev_times: list[float] = []
    ev_particles: list[int] = []
    ev_positions: list[np.ndarray] = []
    ev_sources: list[int] = []

    n_nodes = grid.shape[0]
    snapshots = np.empty((n_nodes, n, d))
    controls = np.empty((n_nodes, n, model.control_dim))
    f_curve = np.empty(n_nodes)
    f_se = np.empty(n_nodes)

    def record(node: int, t: float):
        snapshots[node] = x
        controls[node] = policy.values_at(t, x)
        f_curve[node] = counts.mean()
        f_se[node] = counts.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0

    record(0, 0.0)
    for segment in range(n_nodes - 1):
        for k in range(int(node_steps[segment]), int(node_steps[segment + 1])):
            t = k * dt
            a = policy.values_at(t, x)
            if mean_field:
                mean_k = means[k] if means is not None else None
            else:
                mean_k = x.mean(axis=0) if model.drift.mf_gain != 0.0 else None
            b = drift_given_mean(model, t, x, mean_k, a)
            z = rng.normals(seed, rng.GAUSS_STEP, k, (n, d))
            x_new = x + b * dt + (z @ sigma_t) * sqrt_dt
            inside_new = domain.contains_open(x_new)
            exited = ~inside_new
            hit_times = np.full(n, t + dt)
            if config.bridge_correction and inside_new.any():
                p = domain.bridge_exit_probability(x[inside_new], x_new[inside_new],
                                                   dt, sigma)
                u = rng.uniforms(seed, rng.BRIDGE_KILL, k, (n,))[inside_new]
                struck = np.flatnonzero(inside_new)[u < p]
                exited[struck] = True
                hit_times[struck] = t + 0.5 * dt
            exit_idx = np.flatnonzero(exited)
            if exit_idx.size:
                if mean_field:
                    target = flow.node_at(t + dt)
                    draws = rng.uniforms(seed, rng.REINSERT_SAMPLE, k, (n,))
                    for i in exit_idx:
                        x_new[i] = sample(target, draws[i])
                        counts[i] += 1
                        ev_times.append(float(hit_times[i]))
                        ev_particles.append(int(i))
                        ev_positions.append(x_new[i].copy())
                        ev_sources.append(SOURCE_FLOW_SAMPLE)
                else:
                    inside_mask = ~exited
                    draws = rng.uniforms(seed, rng.PEER_CHOICE, k, (n,))
                    for i in exit_idx:
                        hosts = np.flatnonzero(inside_mask)
                        if hosts.size == 0:
                            raise TotalExtinction(float(hit_times[i]))
                        host = hosts[min(int(draws[i] * hosts.size), hosts.size - 1)]
                        x_new[i] = x_new[host]
                        inside_mask[i] = True
                        counts[i] += 1
                        ev_times.append(float(hit_times[i]))
                        ev_particles.append(int(i))
                        ev_positions.append(x_new[i].copy())
                        ev_sources.append(SOURCE_UNIFORM_PEER)
                over = np.flatnonzero(counts > reinsertion_cap)
                if over.size:
                    raise ReinsertionBlowup(t + dt, int(over[0]), reinsertion_cap)
            x = x_new
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state at t={grid[segment + 1]:g}")
        record(segment + 1, float(grid[segment + 1]))

    return FVTrace(
        model=model,
        variant=variant,
        times=grid.copy(),
        snapshots=snapshots,
        controls=controls,
        f_curve=f_curve,
        f_se=f_se,
        final_counts=counts.astype(float),
        event_times=np.asarray(ev_times, dtype=float),
        event_particles=np.asarray(ev_particles, dtype=np.int64),
        event_positions=(np.asarray(ev_positions, dtype=float).reshape(-1, d)
                         if ev_positions else np.empty((0, d))),
        event_sources=np.asarray(ev_sources, dtype=np.int64),
        dt=dt,
        seed=seed,
    )


def simulate_fv_finite(model: ModelSpec, policy: FeedbackPolicy, config: SimConfig,
                       reinsertion_cap: int = DEFAULT_REINSERTION_CAP,
                       initial_law=None) -> FVTrace:
    """Interacting reinsertion system with uniform-peer jumps.

    Same-step exits are processed in ascending particle index, each
    seeing the post-update positions of the ones handled before it.
    """
    return _simulate_fv(model, policy, None, config, "finite", reinsertion_cap,
                        initial_law=initial_law)


def simulate_fv_meanfield(model: ModelSpec, policy: FeedbackPolicy, flow: MeasureFlow,
                          config: SimConfig,
                          reinsertion_cap: int = DEFAULT_REINSERTION_CAP,
                          initial_law=None) -> FVTrace:
    """Independent reinsertion dynamics driven by a frozen flow."""
    return _simulate_fv(model, policy, flow, config, "meanfield", reinsertion_cap,
                        initial_law=initial_law)


@dataclass
class FVCorrespondence:
    """Per-node comparison of reinsertion dynamics against a killed run."""

    times: np.ndarray
    w1: np.ndarray
    f_log_residual: np.ndarray
    max_w1: float
    max_f_log_residual: float

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "w1": self.w1.tolist(),
            "f_log_residual": self.f_log_residual.tolist(),
            "max_w1": self.max_w1,
            "max_f_log_residual": self.max_f_log_residual,
        }


def fv_correspondence_report(fv: FVTrace, killed: KilledEnsemble) -> FVCorrespondence:
    """W1 of FV marginals against the killed conditional flow, and the
    residual between the reinsertion curve and minus log survival."""
    if not isinstance(fv, FVTrace):
        raise ValueError("first argument must be the FVTrace")
    if not isinstance(killed, KilledEnsemble):
        raise ValueError("second argument must be the KilledEnsemble")
    if fv.times.shape != killed.times.shape or np.any(np.abs(fv.times - killed.times) > _TIME_TOL):
        raise ValueError("the two runs must share their output grid")
    flow = conditional_flow(killed)
    w1 = np.empty(fv.times.shape[0])
    resid = np.empty(fv.times.shape[0])
    for m in range(fv.times.shape[0]):
        marginal = EmpiricalMeasure(fv.snapshots[m])
        if fv.model.dim == 1:
            w1[m] = w1_distance_1d(marginal, flow.nodes[m])
        else:
            w1[m] = sliced_w1(marginal, flow.nodes[m])
        resid[m] = abs(fv.f_curve[m] + np.log(flow.survival[m]))
    return FVCorrespondence(
        times=fv.times.copy(),
        w1=w1,
        f_log_residual=resid,
        max_w1=float(w1.max()),
        max_f_log_residual=float(resid.max()),
    )
