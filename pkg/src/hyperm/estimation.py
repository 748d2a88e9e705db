"""Target models, sensing-quality fields, and covariance propagation.

The estimator covariance of each target follows the Riccati ODE

    Omega_dot = A Omega + Omega A^T + Q - gamma(a)^2 Omega H^T R^-1 H Omega,

which reduces to the Lyapunov ODE wherever the sensing quality gamma vanishes.
Propagation uses fixed-step RK4 with the quality sampled at substep midpoints
and held constant within each substep; the running trace integral is
accumulated with the matching RK4 quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import ScenarioError, StepSizeError

QUALITY_KINDS = ("gaussian", "ring")


@dataclass(frozen=True, eq=False)
class QualityField:
    """Compactly supported C1 sensing-quality map gamma: R^2 -> [0, 1].

    gamma(a) = bump(s) * core(s) with s = ||a - center||, where
    bump(s) = max(0, 1 - s^2/rho^2)^2 enforces support radius rho and
    core is exp(-s^2 / (2 sigma^2)) (gaussian) or
    exp(-(s - ring_radius)^2 / (2 sigma^2)) (ring, peak on a circle).
    """

    kind: str
    center: np.ndarray
    sigma: float
    rho: float
    ring_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in QUALITY_KINDS:
            raise ScenarioError(f"unknown quality kind {self.kind!r}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if self.sigma <= 0 or self.rho <= 0:
            raise ScenarioError("quality sigma and rho must be positive")
        if self.kind == "ring" and not 0 < self.ring_radius < self.rho:
            raise ScenarioError("ring radius must lie in (0, rho)")

    def value(self, p) -> float:
        return float(self.values(np.asarray(p, dtype=float)[None, :])[0])

    def values(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over rows of pts."""
        diff = np.asarray(pts, dtype=float) - self.center
        s2 = np.einsum("ij,ij->i", diff, diff)
        bump = np.maximum(0.0, 1.0 - s2 / self.rho**2) ** 2
        if self.kind == "gaussian":
            core = np.exp(-s2 / (2.0 * self.sigma**2))
        else:
            s = np.sqrt(np.maximum(s2, 1e-30))
            core = np.exp(-((s - self.ring_radius) ** 2) / (2.0 * self.sigma**2))
        return bump * core

    def value_and_grad(self, p):
        p = np.asarray(p, dtype=float)
        diff = p - self.center
        s2 = float(diff @ diff)
        if s2 >= self.rho**2:
            return 0.0, np.zeros(2)
        w = 1.0 - s2 / self.rho**2
        bump = w * w
        dbump_ds2 = -2.0 * w / self.rho**2
        if self.kind == "gaussian":
            core = np.exp(-s2 / (2.0 * self.sigma**2))
            dcore_ds2 = -core / (2.0 * self.sigma**2)
            grad = (dbump_ds2 * core + bump * dcore_ds2) * 2.0 * diff
            return float(bump * core), grad
        s = np.sqrt(max(s2, 1e-30))
        core = np.exp(-((s - self.ring_radius) ** 2) / (2.0 * self.sigma**2))
        if s2 < 1e-30:
            return float(bump * core), np.zeros(2)
        dcore_ds = -(s - self.ring_radius) / self.sigma**2 * core
        grad = dbump_ds2 * 2.0 * diff * core + bump * dcore_ds * diff / s
        return float(bump * core), grad


def _check_spd(M: np.ndarray, name: str):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ScenarioError(f"{name} must be square")
    if np.max(np.abs(M - M.T)) > 1e-10:
        raise ScenarioError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise ScenarioError(f"{name} must be positive definite")


@dataclass(frozen=True, eq=False)
class Target:
    """Stochastic LTI target with a noisy position-dependent measurement model."""

    id: int
    position: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    quality: QualityField

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        m = A.shape[0]
        if A.shape != (m, m) or Q.shape != (m, m):
            raise ScenarioError(f"target {self.id}: A and Q must be {m}x{m}")
        if H.shape[1] != m:
            raise ScenarioError(f"target {self.id}: H must have {m} columns")
        if R.shape != (H.shape[0], H.shape[0]):
            raise ScenarioError(f"target {self.id}: R must be {H.shape[0]}x{H.shape[0]}")
        _check_spd(Q, f"target {self.id}: Q")
        _check_spd(R, f"target {self.id}: R")
        obs = np.vstack([H @ np.linalg.matrix_power(A, k) for k in range(m)])
        if np.linalg.matrix_rank(obs, tol=1e-10) < m:
            raise ScenarioError(f"target {self.id}: (A, H) is not observable")
        for name, val in (("A", A), ("Q", Q), ("H", H), ("R", R)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "S", H.T @ np.linalg.solve(R, H))

    @property
    def m(self) -> int:
        return self.A.shape[0]


class CovState:
    """Per-target symmetric positive-definite covariance matrices."""

    def __init__(self, omegas: Sequence[np.ndarray]):
        self.omegas = tuple(np.asarray(o, dtype=float).copy() for o in omegas)

    def __getitem__(self, i) -> np.ndarray:
        return self.omegas[i]

    def __len__(self):
        return len(self.omegas)

    def copy(self) -> "CovState":
        return CovState(self.omegas)

    def trace_sum(self) -> float:
        return float(sum(np.trace(o) for o in self.omegas))

    def traces(self) -> np.ndarray:
        return np.array([np.trace(o) for o in self.omegas])

    def frob_distance(self, other: "CovState") -> float:
        return max(
            float(np.linalg.norm(a - b)) for a, b in zip(self.omegas, other.omegas)
        )

    def replace(self, i: int, omega: np.ndarray) -> "CovState":
        new = list(self.omegas)
        new[i] = omega
        return CovState(new)


def _riccati_rhs(om, A, Q, S, g2):
    return A @ om + om @ A.T + Q - g2 * (om @ S @ om)


def _rk4_cost_step_stages(om, A, Q, S, g2_start, g2_mid, g2_end, h):
    """One RK4 step with the sensing quality sampled at the stage times.

    Stage quality values (start, midpoint, end) keep the step fourth-order
    consistent with the smooth coupled agent/covariance dynamics.
    """
    if om.shape[0] == 1:  # scalar fast path, same arithmetic
        o = om[0, 0]
        a2, q, s = 2.0 * A[0, 0], Q[0, 0], S[0, 0]
        k1 = a2 * o + q - g2_start * s * o * o
        o2 = o + 0.5 * h * k1
        k2 = a2 * o2 + q - g2_mid * s * o2 * o2
        o3 = o + 0.5 * h * k2
        k3 = a2 * o3 + q - g2_mid * s * o3 * o3
        o4 = o + h * k3
        k4 = a2 * o4 + q - g2_end * s * o4 * o4
        nxt = o + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        dc = (h / 6.0) * (o + 2.0 * o2 + 2.0 * o3 + o4)
        return np.array([[nxt]]), float(dc)
    k1 = _riccati_rhs(om, A, Q, S, g2_start)
    o2 = om + 0.5 * h * k1
    k2 = _riccati_rhs(o2, A, Q, S, g2_mid)
    o3 = om + 0.5 * h * k2
    k3 = _riccati_rhs(o3, A, Q, S, g2_mid)
    o4 = om + h * k3
    k4 = _riccati_rhs(o4, A, Q, S, g2_end)
    nxt = om + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    nxt = 0.5 * (nxt + nxt.T)
    dc = (h / 6.0) * (np.trace(om) + 2.0 * np.trace(o2) + 2.0 * np.trace(o3) + np.trace(o4))
    return nxt, float(dc)


def _rk4_cost_step(om, A, Q, S, g2, h):
    """One RK4 step of the covariance ODE with constant sensing quality."""
    return _rk4_cost_step_stages(om, A, Q, S, g2, g2, g2, h)


def _assert_pd(om: np.ndarray):
    if om.shape[0] == 1:
        if om[0, 0] <= 0:
            raise StepSizeError("covariance lost positive definiteness; reduce the step size")
        return
    try:
        np.linalg.cholesky(om)
    except np.linalg.LinAlgError:
        raise StepSizeError("covariance lost positive definiteness; reduce the step size")


def riccati_step(omega: np.ndarray, target: Target, gamma: float, h: float) -> np.ndarray:
    """One RK4 step of the covariance ODE with constant sensing quality."""
    if h <= 0:
        raise ValueError("step size must be positive")
    nxt, _ = _rk4_cost_step(np.asarray(omega, dtype=float), target.A, target.Q, target.S, gamma * gamma, h)
    _assert_pd(nxt)
    return nxt


@dataclass(eq=False)
class Propagation:
    omega_end: np.ndarray
    cost: float
    times: np.ndarray
    omegas: np.ndarray  # (n_steps+1, m, m)


def propagate(
    omega: np.ndarray,
    target: Target,
    duration: float,
    n_steps: int,
    gamma_fn: Optional[Callable[[float], float]] = None,
) -> Propagation:
    """Propagate one target over [0, duration] in n_steps RK4 steps.

    gamma_fn maps local time to sensing quality and is sampled at the RK4
    stage times of each step; None means no sensing (Lyapunov flow).
    """
    om = np.asarray(omega, dtype=float).copy()
    m = om.shape[0]
    if duration == 0.0 or n_steps == 0:
        return Propagation(om, 0.0, np.array([0.0]), om[None])
    h = duration / n_steps
    hist = np.empty((n_steps + 1, m, m))
    hist[0] = om
    cost = 0.0
    A, Q, S = target.A, target.Q, target.S
    for k in range(n_steps):
        if gamma_fn is not None:
            g0 = gamma_fn(k * h)
            gm = gamma_fn((k + 0.5) * h)
            g1 = gamma_fn((k + 1) * h)
            om, dc = _rk4_cost_step_stages(om, A, Q, S, g0 * g0, gm * gm, g1 * g1, h)
        else:
            om, dc = _rk4_cost_step(om, A, Q, S, 0.0, h)
        _assert_pd(om)
        cost += dc
        hist[k + 1] = om
    return Propagation(om, cost, np.linspace(0.0, duration, n_steps + 1), hist)


def accumulate_cost(times: np.ndarray, trace_values: np.ndarray) -> float:
    """Composite-Simpson estimate of the integral of summed covariance traces."""
    times = np.asarray(times, dtype=float)
    trace_values = np.asarray(trace_values, dtype=float)
    if len(times) < 2:
        return 0.0
    return float(simpson(trace_values, x=times))


def write_covariance_csv(path, times, per_target_traces):
    """Long-format covariance trace dump: t,target,tr_omega."""
    with open(path, "w") as fh:
        fh.write("t,target,tr_omega\n")
        for i, tr in enumerate(per_target_traces):
            for t, v in zip(times, tr):
                fh.write(f"{float(t)!r},{i},{float(v)!r}\n")
