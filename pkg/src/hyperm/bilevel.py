"""Cycle simulation, average-cost gradient, and the projected-gradient outer loop.

A cycle alternates monitoring segments (inner optimal control solves) with
fixed switching segments (pure covariance propagation along the planned
paths, with sensing quality still evaluated along the way in case a path
clips some other target's support). The average cost over a cycle is

    J = [sum_k (M*_k + S_k)] / T(tau),    T(tau) = sum_k (tau_k + Delta_k),

and its gradient w.r.t. the monitoring durations is assembled from the
per-segment sensitivities dM*_k/dtau_k:

    dJ/dtau_k = (dM*_k/dtau_k * T - sum_j (M*_j + S_j)) / T^2.

Two update schedules are supported: settling the covariances to a periodic
steady state before each duration update (variant 1), or updating after
every cycle (variant 2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .dynamics import transit_control
from .environment import Partition
from .errors import SolverError
from .estimation import CovState, propagate
from .monitor import MonitorSolution, SegmentSolver, SensitivityResult
from .sequencer import CyclePlan

log = logging.getLogger(__name__)


@dataclass(eq=False)
class OptimizerConfig:
    variant: int = 1
    alpha0: Optional[float] = None  # None: 0.5 T(tau0) / ||grad J(tau0)||_inf
    eps_ss: float = 1e-4
    eps_tau: float = 1e-3
    max_cycles: int = 2000
    max_settle: int = 200
    tau_margin: float = 1.0  # initial tau_k = delta_k + margin
    n_intervals: int = 40
    sens_h: Optional[float] = None
    sens_mode: str = "dual"  # "dual": shadow-price route; "fd": finite differences

    def __post_init__(self):
        if self.variant not in (1, 2):
            raise ValueError("variant must be 1 or 2")
        for name in ("eps_ss", "eps_tau", "tau_margin"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(eq=False)
class TraceBundle:
    times: np.ndarray
    positions: np.ndarray
    regions: np.ndarray
    controls: np.ndarray
    tr: np.ndarray  # (M, n)


@dataclass(eq=False)
class CycleState:
    tau: np.ndarray
    omega_start: CovState
    omega_end: CovState
    cov_starts: List[CovState]  # per-segment start covariances
    monitors: List[MonitorSolution]
    m_costs: np.ndarray
    s_costs: np.ndarray
    T: float
    J: float
    trace: TraceBundle

    @property
    def total_cost(self) -> float:
        return float(self.m_costs.sum() + self.s_costs.sum())


def cycle_gradient(m_costs, s_costs, sens, tau, deltas) -> np.ndarray:
    """Average-cost gradient w.r.t. monitoring durations."""
    T = float(np.sum(tau) + np.sum(deltas))
    F = float(np.sum(m_costs) + np.sum(s_costs))
    return (np.asarray(sens, dtype=float) * T - F) / T**2


def project_durations(tau: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Componentwise clamp onto the feasible set tau_k >= delta_k."""
    return np.maximum(np.asarray(tau, dtype=float), np.asarray(lower, dtype=float))


class CycleSimulator:
    """Executes cycles of a fixed plan, keeping per-segment warm starts."""

    def __init__(self, plan: CyclePlan, partition: Partition, targets,
                 n_intervals: int = 40):
        self.plan = plan
        self.partition = partition
        self.targets = list(targets)
        self.K = plan.K
        self.solvers = [
            SegmentSolver(
                partition.region(m.region_id), self.targets, m.target_id, n_intervals
            )
            for m in plan.monitors
        ]
        self.deltas = plan.switching_durations() if plan.switches else np.zeros(self.K)
        self._warm = [None] * self.K
        self.cycles_run = 0

    def min_durations(self) -> np.ndarray:
        return np.array([m.min_duration for m in self.plan.monitors])

    def initial_tau(self, margin: float) -> np.ndarray:
        return self.min_durations() + margin

    def run_cycle(self, tau, omega_start: CovState) -> CycleState:
        tau = np.asarray(tau, dtype=float)
        omegas = omega_start.copy()
        t_abs = 0.0
        times, positions, regions, controls = [], [], [], []
        tr_blocks = []
        cov_starts, monitors = [], []
        m_costs = np.zeros(self.K)
        s_costs = np.zeros(self.K)
        for k in range(self.K):
            spec = self.plan.monitors[k]
            cov_starts.append(omegas.copy())
            try:
                sol = self.solvers[k].solve(
                    spec.entry, spec.exit, float(tau[k]), omegas,
                    warm_controls=self._warm[k],
                )
            except SolverError as exc:
                exc.segment = k
                raise
            self._warm[k] = sol.controls
            monitors.append(sol)
            m_costs[k] = sol.cost
            omegas = sol.omega_end
            n_sub = (len(sol.times) - 1) // len(sol.controls)
            ctrl_dense = np.repeat(sol.controls, n_sub, axis=0)
            ctrl_dense = np.vstack([ctrl_dense, ctrl_dense[-1]])
            self._extend(
                times, positions, regions, controls, tr_blocks,
                sol.times + t_abs, sol.positions,
                np.full(len(sol.times), spec.region_id), ctrl_dense, sol.tr_traces,
            )
            t_abs += float(tau[k])
            if self.plan.switches:
                seg = self.plan.switches[k]
                omegas, cost_k, t_abs = self._run_switch(
                    seg, omegas, t_abs, times, positions, regions, controls, tr_blocks
                )
                s_costs[k] = cost_k
        T = float(np.sum(tau) + np.sum(self.deltas))
        F = float(m_costs.sum() + s_costs.sum())
        trace = TraceBundle(
            np.array(times),
            np.array(positions),
            np.array(regions, dtype=int),
            np.array(controls),
            np.hstack(tr_blocks) if tr_blocks else np.zeros((len(self.targets), 0)),
        )
        self.cycles_run += 1
        return CycleState(
            tau=tau.copy(),
            omega_start=omega_start.copy(),
            omega_end=omegas,
            cov_starts=cov_starts,
            monitors=monitors,
            m_costs=m_costs,
            s_costs=s_costs,
            T=T,
            J=F / T,
            trace=trace,
        )

    @staticmethod
    def _extend(times, positions, regions, controls, tr_blocks,
                t_new, p_new, r_new, u_new, tr_new):
        if times:  # drop the duplicated first sample of a continuing block
            t_new, p_new, r_new, u_new = t_new[1:], p_new[1:], r_new[1:], u_new[1:]
            tr_new = tr_new[:, 1:]
        times.extend(t_new.tolist())
        positions.extend(np.asarray(p_new).tolist())
        regions.extend(np.asarray(r_new, dtype=int).tolist())
        controls.extend(np.asarray(u_new).tolist())
        tr_blocks.append(np.asarray(tr_new))

    def _run_switch(self, seg, omegas, t_abs, times, positions, regions, controls, tr_blocks):
        """Propagate covariances over the fixed switching legs."""
        total = 0.0
        h_ref = seg.duration / 200.0 if seg.duration > 0 else 0.0
        for leg in seg.legs:
            if leg.duration <= 0.0:
                continue
            n = max(2, int(np.ceil(leg.duration / h_ref))) if h_ref > 0 else 2
            region = self.partition.region(leg.region_id)
            resident = region.target_id
            u_leg = transit_control(leg.start, leg.end, region.drift, leg.duration)
            vel = (leg.end - leg.start) / leg.duration
            t_loc = np.linspace(0.0, leg.duration, n + 1)
            pos = leg.start[None, :] + t_loc[:, None] * vel[None, :]
            new_oms = []
            tr_block = np.empty((len(self.targets), n + 1))
            for i, tgt in enumerate(self.targets):
                if resident is not None and i == resident:
                    fld = tgt.quality
                    gamma_fn = lambda t: fld.value(leg.start + t * vel)
                else:
                    gamma_fn = None
                prop = propagate(omegas[i], tgt, leg.duration, n, gamma_fn)
                total += prop.cost
                new_oms.append(prop.omega_end)
                tr_block[i] = np.trace(prop.omegas, axis1=1, axis2=2)
            omegas = CovState(new_oms)
            self._extend(
                times, positions, regions, controls, tr_blocks,
                t_loc + t_abs, pos,
                np.full(n + 1, leg.region_id), np.tile(u_leg, (n + 1, 1)), tr_block,
            )
            t_abs += leg.duration
        return omegas, total, t_abs

    def sensitivities(self, state: CycleState, h: Optional[float] = None,
                      mode: str = "fd") -> List[SensitivityResult]:
        out = []
        for k in range(self.K):
            spec = self.plan.monitors[k]
            out.append(
                self.solvers[k].sensitivity(
                    spec.entry, spec.exit, float(state.tau[k]),
                    state.cov_starts[k], state.monitors[k], h, mode
                )
            )
        return out

    def gradient_fd(self, state: CycleState, k: int, h: float = 1e-3) -> float:
        """Finite difference of the decomposed average cost in component k.

        Re-solves only segment k at tau_k +- h with its recorded start
        covariances; all other segment costs stay at their nominal values,
        matching the dependency structure the analytic gradient assumes.
        """
        spec = self.plan.monitors[k]
        T = state.T
        F = state.total_cost
        base = state.m_costs[k]
        plus = self.solvers[k].solve(
            spec.entry, spec.exit, float(state.tau[k]) + h, state.cov_starts[k],
            warm_controls=state.monitors[k].controls,
        )
        j_plus = (F - base + plus.cost) / (T + h)
        if float(state.tau[k]) - h > spec.min_duration + 1e-7:
            minus = self.solvers[k].solve(
                spec.entry, spec.exit, float(state.tau[k]) - h, state.cov_starts[k],
                warm_controls=state.monitors[k].controls,
            )
            j_minus = (F - base + minus.cost) / (T - h)
            return float((j_plus - j_minus) / (2 * h))
        return float((j_plus - state.J) / h)


@dataclass(eq=False)
class OptimizeResult:
    final_state: CycleState
    history: List[dict]
    converged: bool
    cycles_used: int
    updates: int
    alpha0: float


def _history_row(cycle, variant, state: CycleState, grad, flag) -> dict:
    return {
        "cycle": cycle,
        "variant": variant,
        "J": state.J,
        "T": state.T,
        "tau": state.tau.copy(),
        "grad": np.asarray(grad, dtype=float).copy(),
        "steady_state_flag": int(flag),
    }


def _history_line(r: dict) -> str:
    tau = ",".join(repr(float(v)) for v in r["tau"])
    grad = ",".join(repr(float(v)) for v in r["grad"])
    return f"{r['cycle']},{r['variant']},{r['J']!r},{r['T']!r},{tau},{grad},{r['steady_state_flag']}\n"


def _history_header(K: int) -> str:
    taus = ",".join(f"tau_{k+1}" for k in range(K))
    grads = ",".join(f"grad_{k+1}" for k in range(K))
    return f"cycle,variant,J,T,{taus},{grads},steady_state_flag\n"


class HistoryWriter:
    """Appends history rows to a CSV file as they arrive."""

    def __init__(self, path, K: int):
        self._fh = open(path, "w")
        self._fh.write(_history_header(K))
        self._fh.flush()

    def append(self, row: dict):
        self._fh.write(_history_line(row))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_history_csv(path, rows: List[dict], K: int):
    with open(path, "w") as fh:
        fh.write(_history_header(K))
        for r in rows:
            fh.write(_history_line(r))


def optimize(
    plan: CyclePlan,
    partition: Partition,
    targets,
    omegas0: CovState,
    config: OptimizerConfig,
    history_sink: Optional[Callable[[dict], None]] = None,
) -> OptimizeResult:
    """Projected gradient descent on the monitoring durations.

    Step rule alpha_n = alpha0 / sqrt(n); iterates are clamped to the
    per-segment minimum transit times. Variant 1 settles the cycle-start
    covariances to within eps_ss before each update; variant 2 updates
    after every cycle.
    """
    sim = CycleSimulator(plan, partition, targets, config.n_intervals)
    deltas = sim.deltas
    lb = sim.min_durations()
    tau = sim.initial_tau(config.tau_margin)
    omegas = omegas0.copy()
    rows: List[dict] = []
    grad_last = np.zeros(sim.K)
    alpha0 = config.alpha0
    n_upd = 0
    converged = False

    def emit(state, grad, flag):
        row = _history_row(len(rows) + 1, config.variant, state, grad, flag)
        rows.append(row)
        if history_sink is not None:
            history_sink(row)

    def settle(tau, omegas, emit_last, last_flag):
        """Run cycles at fixed tau until start covariances repeat.

        Emits history rows for the settling cycles; the final (steady) cycle
        row is emitted only when emit_last is set, so the caller can attach a
        freshly computed gradient to it instead.
        """
        prev_start = None
        state = None
        steady = False
        for i in range(config.max_settle):
            state = sim.run_cycle(tau, omegas)
            omegas = state.omega_end
            steady = (
                prev_start is not None
                and state.omega_start.frob_distance(prev_start) < config.eps_ss
            )
            if steady or i == config.max_settle - 1:
                break
            emit(state, grad_last, 0)
            prev_start = state.omega_start
        if not steady:
            log.warning("steady state not reached within %d cycles", config.max_settle)
        if emit_last:
            emit(state, grad_last, last_flag if steady else 0)
        return state, omegas, steady

    while sim.cycles_run < config.max_cycles:
        if config.variant == 1:
            state, omegas, steady = settle(tau, omegas, emit_last=False, last_flag=1)
            flag = 1 if steady else 0
        else:
            state = sim.run_cycle(tau, omegas)
            omegas = state.omega_end
            flag = 0
        sens = sim.sensitivities(state, config.sens_h, config.sens_mode)
        grad = cycle_gradient(
            state.m_costs, state.s_costs, [s.value for s in sens], state.tau, deltas
        )
        grad_last = grad
        emit(state, grad, flag)
        if alpha0 is None:
            alpha0 = 0.5 * state.T / max(float(np.max(np.abs(grad))), 1e-12)
        n_upd += 1
        alpha = alpha0 / np.sqrt(n_upd)
        tau_new = project_durations(tau - alpha * grad, lb)
        moved = float(np.max(np.abs(tau_new - tau)))
        tau = tau_new
        if moved < config.eps_tau:
            converged = True
            break
    if alpha0 is None:
        alpha0 = 0.0
    # settle at the final durations so the reported cycle is periodic
    final_state, omegas, _ = settle(
        tau, omegas, emit_last=True, last_flag=1 if config.variant == 1 else 0
    )
    if not converged:
        log.warning("duration optimization stopped on the cycle budget")
    return OptimizeResult(
        final_state=final_state,
        history=rows,
        converged=converged,
        cycles_used=sim.cycles_run,
        updates=n_upd,
        alpha0=float(alpha0),
    )


def simulate_cycles(plan, partition, targets, tau, omegas0: CovState, n_cycles: int,
                    n_intervals: int = 40) -> List[CycleState]:
    """Replay a fixed-duration plan for a number of cycles (no optimization)."""
    sim = CycleSimulator(plan, partition, targets, n_intervals)
    states = []
    omegas = omegas0.copy()
    for _ in range(n_cycles):
        state = sim.run_cycle(np.asarray(tau, dtype=float), omegas)
        omegas = state.omega_end
        states.append(state)
    return states
