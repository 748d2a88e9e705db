"""Local monitoring optimal control inside one target region.

For a fixed duration tau, entry/exit points on the region, and initial
covariances, finds piecewise-constant controls minimizing the integral of
summed covariance traces subject to the unit control bound, the polyhedral
path constraint, and the terminal position equality.

Transcription: N control intervals, exact (linear) agent integration within
intervals, covariances eliminated from the decision vector by forward RK4
integration inside the cost (4 substeps per interval, sensing quality held
constant per substep at the midpoint position). Since the state transition
is affine and exact, interval endpoint states are eliminated as well and the
decision vector is the control sequence alone; terminal and path conditions
become affine constraints on it. Only the resident target enters the solver
objective (all other quality fields vanish inside this region); their
control-independent cost share is added after the solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize as sopt

import jax

jax.config.update("jax_enable_x64", True)
import jax.numpy as jnp  # noqa: E402

from .dynamics import min_transit_time, transit_control  # noqa: E402
from .environment import Region  # noqa: E402
from .errors import InfeasibleError, SolverError  # noqa: E402
from .estimation import (  # noqa: E402
    CovState,
    Target,
    _assert_pd,
    _rk4_cost_step,
    _rk4_cost_step_stages,
)

log = logging.getLogger(__name__)

N_INTERVALS = 40
N_SUBSTEPS = 4
TOL_STAT = 1e-6
TOL_BC = 1e-6
TOL_PATH = 1e-6
TRANSIT_MARGIN = 1e-7  # below delta_lb + margin the feasible set is a singleton

_KERNELS = {}
_TAU_KERNELS = {}


def _make_cost_fn(m: int, kind: str, N: int, nsub: int):
    """Resident trace-integral cost as a traceable function of (u, entry, tau, ...)."""

    def gamma(pos, qc, qs, qr, qring):
        diff = pos - qc
        s2 = diff @ diff
        bump = jnp.maximum(0.0, 1.0 - s2 / qr**2) ** 2
        if kind == "gaussian":
            core = jnp.exp(-s2 / (2.0 * qs**2))
        else:
            s = jnp.sqrt(jnp.maximum(s2, 1e-30))
            core = jnp.exp(-((s - qring) ** 2) / (2.0 * qs**2))
        return bump * core

    def cost(u, entry, tau, omega0, drift, A, Q, S, qc, qs, qr, qring):
        h = tau / N
        hs = h / nsub
        vs = drift[None, :] + u
        steps = jnp.concatenate([jnp.zeros((1, 2)), jnp.cumsum(vs * h, axis=0)[:-1]])
        starts = entry[None, :] + steps

        def rhs(om, g2):
            return A @ om + om @ A.T + Q - g2 * (om @ S @ om)

        def interval(carry, inp):
            om, c = carry
            a0, v = inp

            def sub(carry2, s):
                om, c = carry2
                g0 = gamma(a0 + s * hs * v, qc, qs, qr, qring)
                gm = gamma(a0 + (s + 0.5) * hs * v, qc, qs, qr, qring)
                g1 = gamma(a0 + (s + 1.0) * hs * v, qc, qs, qr, qring)
                k1 = rhs(om, g0 * g0)
                o2 = om + 0.5 * hs * k1
                k2 = rhs(o2, gm * gm)
                o3 = om + 0.5 * hs * k2
                k3 = rhs(o3, gm * gm)
                o4 = om + hs * k3
                k4 = rhs(o4, g1 * g1)
                nxt = om + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                nxt = 0.5 * (nxt + nxt.T)
                c = c + (hs / 6.0) * (
                    jnp.trace(om)
                    + 2.0 * jnp.trace(o2)
                    + 2.0 * jnp.trace(o3)
                    + jnp.trace(o4)
                )
                return (nxt, c), 0.0

            (om, c), _ = jax.lax.scan(sub, (om, c), jnp.arange(nsub, dtype=jnp.float64))
            return (om, c), 0.0

        (_, c), _ = jax.lax.scan(interval, (omega0, 0.0), (starts, vs))
        return c

    return cost


def _kernel(m: int, kind: str, N: int, nsub: int):
    """Jitted value + control gradient of the resident cost."""
    key = (m, kind, N, nsub)
    if key not in _KERNELS:
        _KERNELS[key] = jax.jit(jax.value_and_grad(_make_cost_fn(m, kind, N, nsub)))
    return _KERNELS[key]


def _tau_kernel(m: int, kind: str, N: int, nsub: int):
    """Jitted partial derivative of the resident cost w.r.t. the duration."""
    key = (m, kind, N, nsub)
    if key not in _TAU_KERNELS:
        _TAU_KERNELS[key] = jax.jit(jax.grad(_make_cost_fn(m, kind, N, nsub), argnums=2))
    return _TAU_KERNELS[key]


@dataclass(eq=False)
class MonitorProblem:
    """One monitoring segment: fixed duration, boundary points, start covariances."""

    region: Region
    targets: list
    resident_id: Optional[int]
    entry: np.ndarray
    exit: np.ndarray
    tau: float
    omegas0: CovState
    n_intervals: int = N_INTERVALS


@dataclass(eq=False)
class SegmentSim:
    """Canonical forward simulation of one monitoring segment."""

    times: np.ndarray
    positions: np.ndarray
    tr_traces: np.ndarray  # (M, n_pts) per-target covariance traces
    omega_end: CovState
    cost: float
    per_target_cost: np.ndarray


@dataclass(eq=False)
class MonitorSolution:
    controls: np.ndarray  # (N, 2)
    times: np.ndarray
    positions: np.ndarray
    tr_traces: np.ndarray
    omega_end: CovState
    cost: float  # M*: all targets, canonical simulation value
    resident_cost: float
    status: str
    stat_residual: float
    n_iter: int
    bc_error: float
    path_violation: float
    omega_start_resident: Optional[np.ndarray] = None
    multipliers: Optional[tuple] = None  # (nu, lambda_active, active_mask)


@dataclass(eq=False)
class SensitivityResult:
    value: float
    mode: str  # "central" or "forward"
    h: float


def simulate_monitoring(
    region: Region,
    targets,
    resident_id: Optional[int],
    entry: np.ndarray,
    tau: float,
    controls: np.ndarray,
    omegas0: CovState,
    nsub: int = N_SUBSTEPS,
) -> SegmentSim:
    """Propagate all targets along the piecewise-constant control trajectory.

    Uses the same discretization as the solver kernel, so the returned cost is
    the authoritative segment cost M*.
    """
    N = len(controls)
    h = tau / N
    hs = h / nsub
    vs = region.drift[None, :] + controls
    starts = entry[None, :] + np.vstack([np.zeros(2), np.cumsum(vs * h, axis=0)[:-1]])
    n_pts = N * nsub + 1
    times = np.linspace(0.0, tau, n_pts)
    positions = np.empty((n_pts, 2))
    positions[0] = entry
    idx = 1
    for j in range(N):
        for s in range(nsub):
            positions[idx] = starts[j] + (s + 1) * hs * vs[j]
            idx += 1
    M = len(targets)
    tr = np.empty((M, n_pts))
    per_cost = np.zeros(M)
    omega_end = []
    for i, tgt in enumerate(targets):
        om = omegas0[i].copy()
        tr[i, 0] = np.trace(om)
        fieldq = tgt.quality if i == resident_id else None
        A, Q, S = tgt.A, tgt.Q, tgt.S
        c = 0.0
        idx = 1
        for j in range(N):
            a0, v = starts[j], vs[j]
            for s in range(nsub):
                if fieldq is not None:
                    g0 = fieldq.value(a0 + s * hs * v)
                    gm = fieldq.value(a0 + (s + 0.5) * hs * v)
                    g1 = fieldq.value(a0 + (s + 1) * hs * v)
                    om, dc = _rk4_cost_step_stages(
                        om, A, Q, S, g0 * g0, gm * gm, g1 * g1, hs
                    )
                else:
                    om, dc = _rk4_cost_step(om, A, Q, S, 0.0, hs)
                _assert_pd(om)
                c += dc
                tr[i, idx] = np.trace(om)
                idx += 1
        per_cost[i] = c
        omega_end.append(om)
    return SegmentSim(times, positions, tr, CovState(omega_end), float(per_cost.sum()), per_cost)


class SegmentSolver:
    """Reusable solver for one region/resident pairing.

    Bound to the region geometry and the target set; each solve takes the
    boundary points, the duration, the start covariances, and an optional
    control warm start.
    """

    def __init__(self, region: Region, targets, resident_id: Optional[int],
                 n_intervals: int = N_INTERVALS, nsub: int = N_SUBSTEPS):
        self.region = region
        self.targets = list(targets)
        self.resident_id = resident_id
        self.N = int(n_intervals)
        self.nsub = int(nsub)
        G, b = region.matrix
        self._G, self._b = G, b
        N, p = self.N, len(G)
        # unit-step path jacobian; the per-solve jacobian is h times this
        J = np.zeros(((N - 1) * p, 2 * N))
        for j in range(1, N):
            for l in range(j):
                J[(j - 1) * p : j * p, 2 * l : 2 * l + 2] = -G
        self._J_unit = J
        if resident_id is not None:
            tgt = self.targets[resident_id]
            self._vg = _kernel(tgt.m, tgt.quality.kind, self.N, self.nsub)
            q = tgt.quality
            self._qargs = (
                jnp.array(region.drift), jnp.array(tgt.A), jnp.array(tgt.Q),
                jnp.array(tgt.S), jnp.array(q.center), q.sigma, q.rho, q.ring_radius,
            )

    # -- transcription pieces ------------------------------------------------

    def _path_matrices(self, entry, tau):
        """Affine path constraints b - G a_j >= 0 at interior grid nodes."""
        N, G, b = self.N, self._G, self._b
        h = tau / N
        d = self.region.drift
        j_idx = np.arange(1, N)
        # rows grouped by grid node j: b - G(entry + j h d)
        c0 = (b[None, :] - (entry + j_idx[:, None] * h * d) @ G.T).ravel()
        return h * self._J_unit, c0

    def _via_peak_init(self, entry, exit_, tau) -> Optional[np.ndarray]:
        """Two-phase initialization passing through the quality peak.

        The stretched straight transit sees zero cost gradient whenever it
        misses the compact support, so the solver would stall there; routing
        the initial path through the peak puts the iterate in the informative
        basin. Returns None when the dogleg does not fit into tau.
        """
        if self.resident_id is None:
            return None
        q = self.targets[self.resident_id].quality
        if q.kind == "gaussian":
            peak = q.center
        else:
            mid = 0.5 * (entry + exit_) - q.center
            n = np.linalg.norm(mid)
            peak = q.center + q.ring_radius * (mid / n if n > 1e-12 else np.array([1.0, 0.0]))
        d = self.region.drift
        t1 = min_transit_time(entry, peak, d)
        t2 = min_transit_time(peak, exit_, d)
        if t1 + t2 >= tau or t1 + t2 <= 0:
            return None
        N = self.N
        h = tau / N
        n1 = int(np.clip(round(N * t1 / (t1 + t2)), 1, N - 1))
        u1 = transit_control(entry, peak, d, n1 * h)
        u2 = transit_control(peak, exit_, d, (N - n1) * h)
        if np.linalg.norm(u1) > 1.0 or np.linalg.norm(u2) > 1.0:
            return None
        return np.vstack([np.tile(u1, (n1, 1)), np.tile(u2, (N - n1, 1))])

    def _objective(self, entry, tau, omega_res):
        vg = self._vg
        entry_j = jnp.array(entry)
        om_j = jnp.array(omega_res)

        def fun(x):
            v, g = vg(x.reshape(self.N, 2), entry_j, tau, om_j, *self._qargs)
            return float(v), np.asarray(g).ravel()

        return fun

    def solve(self, entry, exit_, tau, omegas0: CovState,
              warm_controls: Optional[np.ndarray] = None) -> MonitorSolution:
        entry = np.asarray(entry, dtype=float)
        exit_ = np.asarray(exit_, dtype=float)
        d = self.region.drift
        delta_lb = min_transit_time(entry, exit_, d)
        if tau < delta_lb - 1e-9:
            raise InfeasibleError(
                f"duration {tau:.6g} below minimum transit time {delta_lb:.6g}"
            )
        if not self.region.contains(entry, 1e-7) or not self.region.contains(exit_, 1e-7):
            raise InfeasibleError("entry or exit point outside the monitoring region")
        N = self.N
        u_transit = np.tile(transit_control(entry, exit_, d, tau) if tau > 0 else np.zeros(2), (N, 1))
        if tau <= delta_lb + TRANSIT_MARGIN or self.resident_id is None:
            status = "transit" if tau <= delta_lb + TRANSIT_MARGIN else "decoupled"
            return self._finalize(entry, exit_, tau, omegas0, u_transit, status, 0.0, 0)

        h = tau / N
        rhs_eq = exit_ - entry - tau * d
        J_eq = np.tile(h * np.eye(2), (1, N))
        J_path, c_path = self._path_matrices(entry, tau)
        obj = self._objective(entry, tau, omegas0[self.resident_id])

        def eq_f(x):
            return h * x.reshape(N, 2).sum(axis=0) - rhs_eq

        def ineq_f(x):
            u = x.reshape(N, 2)
            return np.concatenate([c_path + J_path @ x, 1.0 - np.einsum("ij,ij->i", u, u)])

        def ineq_j(x):
            u = x.reshape(N, 2)
            Jd = np.zeros((N, 2 * N))
            for j in range(N):
                Jd[j, 2 * j : 2 * j + 2] = -2.0 * u[j]
            return np.vstack([J_path, Jd])

        if warm_controls is not None:
            x0 = np.asarray(warm_controls, dtype=float).ravel().copy()
        else:
            via = self._via_peak_init(entry, exit_, tau)
            x0 = (via if via is not None else u_transit).ravel().copy()
        # keep the warm start strictly inside the control ball
        u0 = x0.reshape(N, 2)
        norms = np.linalg.norm(u0, axis=1)
        scale = np.minimum(1.0, 1.0 / np.maximum(norms, 1e-12))
        x0 = (u0 * scale[:, None]).ravel()

        res = sopt.minimize(
            obj, x0, jac=True, method="SLSQP",
            constraints=[
                {"type": "eq", "fun": eq_f, "jac": lambda x: J_eq},
                {"type": "ineq", "fun": ineq_f, "jac": ineq_j},
            ],
            options={"ftol": 1e-12, "maxiter": 300},
        )
        x, n_iter = res.x, res.nit
        stat, nu, lam, act = self._kkt_fit(obj, x, J_eq, eq_f, ineq_f, ineq_j)
        if stat > TOL_STAT or np.max(np.abs(eq_f(x))) > TOL_BC or np.min(ineq_f(x)) < -TOL_PATH:
            polish = sopt.minimize(
                obj, x, jac=True, method="SLSQP",
                constraints=[
                    {"type": "eq", "fun": eq_f, "jac": lambda x: J_eq},
                    {"type": "ineq", "fun": ineq_f, "jac": ineq_j},
                ],
                options={"ftol": 1e-14, "maxiter": 600},
            )
            stat2, nu2, lam2, act2 = self._kkt_fit(obj, polish.x, J_eq, eq_f, ineq_f, ineq_j)
            if stat2 < stat and np.max(np.abs(eq_f(polish.x))) <= TOL_BC:
                x, stat, n_iter = polish.x, stat2, n_iter + polish.nit
                nu, lam, act = nu2, lam2, act2
        status = "converged" if stat <= TOL_STAT else "max_iter"
        if status != "converged":
            log.info("monitor solve did not reach stationarity: residual %.2e", stat)
        controls = x.reshape(N, 2)
        sol = self._finalize(entry, exit_, tau, omegas0, controls, status, stat, n_iter)
        sol.multipliers = (nu, lam, act)
        if warm_controls is not None and self.resident_id is not None:
            # a stale warm start can strand the iterate where the quality
            # field is identically zero (flat cost landscape); retry from the
            # default initialization and keep the cheaper solution
            fieldq = self.targets[self.resident_id].quality
            if (
                float(np.max(fieldq.values(sol.positions))) < 1e-12
                and self._via_peak_init(entry, exit_, tau) is not None
            ):
                fresh = self.solve(entry, exit_, tau, omegas0, warm_controls=None)
                if fresh.cost < sol.cost - 1e-12:
                    return fresh
        return sol

    def _kkt_fit(self, obj, x, J_eq, eq_f, ineq_f, ineq_j):
        """Multiplier estimate and stationarity residual at a candidate point.

        Bounded least squares on grad + J_eq^T nu - J_act^T lambda = 0 with
        lambda >= 0 on the active inequalities.
        """
        _, grad = obj(x)
        vals = ineq_f(x)
        act = vals < 1e-6
        mats = [J_eq.T]
        lo = [-np.inf, -np.inf]
        if np.any(act):
            mats.append(-ineq_j(x)[act].T)
            lo += [0.0] * int(act.sum())
        A = np.hstack(mats)
        try:
            fit = sopt.lsq_linear(A, -grad, bounds=(np.array(lo), np.full(len(lo), np.inf)))
            resid = float(np.max(np.abs(grad + A @ fit.x)))
            nu = fit.x[:2]
            lam = fit.x[2:]
            return resid, nu, lam, act
        except Exception:  # pragma: no cover - defensive
            return float(np.max(np.abs(grad))), np.zeros(2), np.zeros(0), act

    def _finalize(self, entry, exit_, tau, omegas0, controls, status, stat, n_iter):
        sim = simulate_monitoring(
            self.region, self.targets, self.resident_id, entry, tau, controls, omegas0, self.nsub
        )
        bc = float(np.linalg.norm(sim.positions[-1] - exit_))
        G, b = self.region.matrix
        viol = float(np.max(sim.positions @ G.T - b[None, :]))
        res_cost = float(sim.per_target_cost[self.resident_id]) if self.resident_id is not None else 0.0
        return MonitorSolution(
            controls=np.asarray(controls, dtype=float),
            times=sim.times,
            positions=sim.positions,
            tr_traces=sim.tr_traces,
            omega_end=sim.omega_end,
            cost=sim.cost,
            resident_cost=res_cost,
            status=status,
            stat_residual=float(stat),
            n_iter=int(n_iter),
            bc_error=bc,
            path_violation=max(viol, 0.0),
            omega_start_resident=(
                omegas0[self.resident_id].copy() if self.resident_id is not None else None
            ),
        )

    def sensitivity(self, entry, exit_, tau, omegas0: CovState,
                    solution: MonitorSolution, h: Optional[float] = None,
                    mode: str = "fd") -> SensitivityResult:
        """dM*/dtau of one monitoring segment.

        mode "fd" (default): warm-started central finite differences of
        re-solves, falling back to a forward difference when tau - h would
        violate the minimum-transit-time bound. mode "dual": shadow-price
        route via the fitted multipliers and the envelope theorem; exact for
        the transcribed problem under a stable active set, and much cheaper
        than re-solving. The dual route is validated against the finite
        difference in the test suite.
        """
        entry = np.asarray(entry, dtype=float)
        exit_ = np.asarray(exit_, dtype=float)
        delta_lb = min_transit_time(entry, exit_, self.region.drift)
        if h is None:
            h = max(1e-3, 1e-3 * tau)
        if mode == "dual":
            dual = self._sensitivity_dual(entry, exit_, tau, solution)
            if dual is not None:
                return dual
        warm = solution.controls
        plus = self.solve(entry, exit_, tau + h, omegas0, warm_controls=warm)
        if tau - h > delta_lb + TRANSIT_MARGIN:
            minus = self.solve(entry, exit_, tau - h, omegas0, warm_controls=warm)
            return SensitivityResult((plus.cost - minus.cost) / (2 * h), "central", h)
        return SensitivityResult((plus.cost - solution.cost) / h, "forward", h)

    def _sensitivity_dual(self, entry, exit_, tau,
                          solution: MonitorSolution) -> Optional[SensitivityResult]:
        """Envelope-theorem duration derivative at the solved point.

        dM*/dtau = dC/dtau + nu . d(eq)/dtau - lambda . d(g_act)/dtau plus the
        Leibniz term of the sensing-free targets (their trace at the segment
        end). Unavailable for transit-pinned solves, where the value has a
        kink and only one-sided differences make sense.
        """
        non_res = float(
            sum(
                solution.tr_traces[i, -1]
                for i in range(len(self.targets))
                if i != self.resident_id
            )
        )
        if self.resident_id is None:
            return SensitivityResult(non_res, "leibniz", 0.0)
        if solution.status not in ("converged", "max_iter") or solution.multipliers is None:
            return None
        tgt = self.targets[self.resident_id]
        tk = _tau_kernel(tgt.m, tgt.quality.kind, self.N, self.nsub)
        dc_dtau = float(
            tk(
                jnp.array(solution.controls), jnp.array(entry), tau,
                jnp.array(solution.omega_start_resident), *self._qargs,
            )
        )
        nu, lam, act = solution.multipliers
        x = solution.controls.ravel()
        N = self.N
        d = self.region.drift
        # eq(tau) = (tau/N) sum u - (exit - entry - tau d)
        deq = solution.controls.sum(axis=0) / N + d
        # path rows: b - G(entry + j h d) + h J_unit x, h = tau/N
        G = self._G
        j_idx = np.repeat(np.arange(1, N), len(G))
        dpath = -(j_idx / N) * np.tile(G @ d, N - 1) + (self._J_unit @ x) / N
        dg = np.concatenate([dpath, np.zeros(N)])  # disk rows have no tau term
        val = dc_dtau + float(nu @ deq) - float(lam @ dg[act]) + non_res
        return SensitivityResult(val, "dual", 0.0)


def solve_monitor(problem: MonitorProblem,
                  warm_controls: Optional[np.ndarray] = None) -> MonitorSolution:
    """Functional wrapper around SegmentSolver for one-off solves."""
    solver = SegmentSolver(
        problem.region, problem.targets, problem.resident_id, problem.n_intervals
    )
    return solver.solve(problem.entry, problem.exit, problem.tau, problem.omegas0, warm_controls)


def sensitivity(problem: MonitorProblem, solution: MonitorSolution,
                h: Optional[float] = None, mode: str = "fd") -> SensitivityResult:
    solver = SegmentSolver(
        problem.region, problem.targets, problem.resident_id, problem.n_intervals
    )
    return solver.sensitivity(
        problem.entry, problem.exit, problem.tau, problem.omegas0, solution, h, mode
    )
