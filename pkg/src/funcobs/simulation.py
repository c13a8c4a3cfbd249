"""
Behavior-consistent simulation of the reduced plant together with the observer.

The plant is integrated in reduced coordinates.  The algebraic rows
``0 = A21 x_k + B21 u`` are differentiated once and stacked under the
differential rows, so that

    G x_k' = [A11 x_k + B11 u; -B21 u'],   G = [E11; A21].

When ``G`` is not injective, the unconstrained directions are driven by a
user-supplied free signal ``v`` through ``(I - G^+ G) v``.  Integration is
fixed-step classical RK4.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numkit
from .errors import DimensionMismatch, InconsistentDynamics, Infeasible
from .model import VectorSignal
from .reduction import FunctionalSplit, ReducedSystem

CONSTRAINT_TOL = 1e-6


@dataclass(frozen=True)
class SimulationConfig:
    t_end: float
    dt: float = 1e-3
    x_k0: Optional[np.ndarray] = None
    w0: Optional[np.ndarray] = None
    u: Optional[VectorSignal] = None
    free_mode: Optional[VectorSignal] = None
    project_ic: bool = True

    def __post_init__(self):
        if not (self.t_end > 0 and self.dt > 0):
            raise ValueError("t_end and dt must be positive")
        if not self.dt < self.t_end:
            raise ValueError("dt must be smaller than t_end")


@dataclass(eq=False)
class SimulationResult:
    times: np.ndarray
    x_k: np.ndarray
    w: np.ndarray
    z: np.ndarray
    zhat: np.ndarray
    e: np.ndarray
    constraint_residual: np.ndarray
    converged: bool
    max_matched_error: float = float("nan")
    x_k0: np.ndarray = field(default=None)
    flagged: bool = False

    @property
    def final_error(self) -> float:
        return float(np.linalg.norm(self.e[-1]))

    @property
    def max_constraint_residual(self) -> float:
        return float(np.max(self.constraint_residual)) if self.constraint_residual.size else 0.0


def project_initial_condition(red: ReducedSystem, x_k0, u0) -> np.ndarray:
    """Closest point to ``x_k0`` on ``{x : A21 x + B21 u0 = 0}``."""
    x0 = np.asarray(x_k0, dtype=float).reshape(red.n_k)
    if red.m2 == 0:
        return x0.copy()
    u0 = np.asarray(u0, dtype=float).reshape(red.l)
    viol = red.A21 @ x0 + red.B21 @ u0
    x_hat = x0 - numkit.pinv(red.A21) @ viol
    left = red.A21 @ x_hat + red.B21 @ u0
    scale = 1.0 + np.linalg.norm(red.B21 @ u0) + np.linalg.norm(x0)
    if np.linalg.norm(left) > 1e-10 * scale:
        raise Infeasible(f"algebraic constraint unsatisfiable at t=0 (residual {np.linalg.norm(left):.3e})")
    return x_hat


class _PlantField:
    """Right-hand side of the index-reduced reduced plant.

    ``x' = F x + Gu u + Gd u' + P_free v`` with the range condition
    ``W (rhs) = 0`` monitored through the left null space ``W`` of ``G``.
    """

    def __init__(self, red: ReducedSystem, u: VectorSignal, v: Optional[VectorSignal]):
        if v is not None and v.dimension != red.n_k:
            raise DimensionMismatch(f"free-mode signal has {v.dimension} channels, need n_k={red.n_k}")
        self.red, self.u, self.v = red, u, v
        m1 = red.m1
        G = np.vstack([red.E11, red.A21])
        Gp = numkit.pinv(G)
        self.F = Gp[:, :m1] @ red.A11
        self.Gu = Gp[:, :m1] @ red.B11
        self.Gd = -Gp[:, m1:] @ red.B21
        free = np.eye(red.n_k) - Gp @ G
        self.free = free if (v is not None and np.linalg.norm(free) > 1e-12) else None
        # left null space of G: rows w with w G = 0
        Ul, s, _ = np.linalg.svd(G, full_matrices=True) if G.size else (np.eye(G.shape[0]), np.zeros(0), None)
        rk = numkit.rank_tol(G).rank
        W = Ul[:, rk:].T
        self.Wx = W[:, :m1] @ red.A11
        self.Wu = W[:, :m1] @ red.B11
        self.Wd = -W[:, m1:] @ red.B21
        self.scale = 1.0 + np.linalg.norm(G)

    def forcing(self, t) -> np.ndarray:
        g = self.u(t) @ self.Gu.T + self.u.derivative(t) @ self.Gd.T
        if self.free is not None:
            g = g + self.v(t) @ self.free.T
        return g

    def range_miss(self, t, x) -> np.ndarray:
        """Component of the stacked right-hand side outside ``range(G)``."""
        if not self.Wx.shape[0]:
            return np.zeros(np.shape(t))
        miss = x @ self.Wx.T + self.u(t) @ self.Wu.T + self.u.derivative(t) @ self.Wd.T
        return np.linalg.norm(np.atleast_2d(miss), axis=-1)

    def check(self, t, x) -> None:
        miss = np.max(self.range_miss(t, x), initial=0.0)
        size = 1.0 + np.max(np.abs(x), initial=0.0)
        if miss > 1e-8 * self.scale * size:
            raise InconsistentDynamics(
                f"stacked right-hand side leaves range of [E11; A21] by {miss:.3e}; "
                "hidden higher-index constraints are not supported"
            )

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        self.check(t, x)
        return self.F @ x + self.forcing(t)


def _rk4(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def step_plant(red: ReducedSystem, x_k, t: float, u: VectorSignal, v: Optional[VectorSignal], dt: float) -> np.ndarray:
    """One RK4 step of the reduced plant."""
    return _rk4(_PlantField(red, u, v), t, np.asarray(x_k, dtype=float), dt)


def _check_dims(red: ReducedSystem, obs) -> None:
    l, p, r = red.l, red.p, red.r
    if obs.N.shape != (obs.q, obs.q) or obs.H.shape != (obs.q, l + p):
        raise DimensionMismatch(f"observer (q={obs.q}, H {obs.H.shape}) incompatible with l={l}, p={p}")
    if obs.R.shape != (r, obs.q) or obs.M.shape != (r, l + p):
        raise DimensionMismatch(f"observer R {obs.R.shape}, M {obs.M.shape} incompatible with r={r}, l+p={l + p}")


def matched_w0(red: ReducedSystem, obs, x_k0) -> np.ndarray:
    """Observer start making the internal error vanish: ``w(0) = T E11 x_k(0)``."""
    T = obs.certificates.T
    return T @ red.E11 @ np.asarray(x_k0, dtype=float)


def simulate(red: ReducedSystem, split: FunctionalSplit, obs, cfg: SimulationConfig) -> SimulationResult:
    """Co-integrate plant and observer on a fixed grid."""
    _check_dims(red, obs)
    n_k, q = red.n_k, obs.q
    u = cfg.u or VectorSignal.zeros(red.l)
    if u.dimension != red.l:
        raise DimensionMismatch(f"input has {u.dimension} channels, system has l={red.l}")

    x0 = np.zeros(n_k) if cfg.x_k0 is None else np.asarray(cfg.x_k0, dtype=float).reshape(n_k)
    if cfg.project_ic:
        x0 = project_initial_condition(red, x0, u(0.0))
    w0 = np.zeros(q) if cfg.w0 is None else np.asarray(cfg.w0, dtype=float).reshape(q)

    plant = _PlantField(red, u, cfg.free_mode)
    Ck = red.Ck
    Hu, Hy = obs.H[:, : red.l], obs.H[:, red.l :]
    # joint linear time-varying system s' = A s + g(t), s = [x_k; w]
    A = np.block([[plant.F, np.zeros((n_k, q))], [Hy @ Ck, obs.N]])

    plant.check(0.0, x0)  # fail fast on an inconsistent start

    steps = int(round(cfg.t_end / cfg.dt))
    h = cfg.dt
    times = np.arange(steps + 1) * h
    half = np.arange(2 * steps + 1) * (h / 2)
    g = np.hstack([plant.forcing(half), u(half) @ Hu.T]).reshape(len(half), n_k + q)

    states = np.empty((steps + 1, n_k + q))
    states[0] = np.concatenate([x0, w0])
    At = A.T
    s = states[0]
    for i in range(steps):
        g0, g1, g2 = g[2 * i], g[2 * i + 1], g[2 * i + 2]
        k1 = s @ At + g0
        k2 = (s + h / 2 * k1) @ At + g1
        k3 = (s + h / 2 * k2) @ At + g1
        k4 = (s + h * k3) @ At + g2
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        states[i + 1] = s
    plant.check(times, states[:, :n_k])

    xs, ws = states[:, :n_k], states[:, n_k:]
    us = u(times).reshape(len(times), red.l)
    ys = xs @ Ck.T
    z = xs @ red.K11.T
    zhat = ws @ obs.R.T + np.hstack([us, ys]) @ obs.M.T
    e = zhat - z
    cres = np.linalg.norm(xs @ red.A21.T + us @ red.B21.T, axis=1) if red.m2 else np.zeros(len(times))

    err = np.linalg.norm(e, axis=1)
    tail = times >= 0.9 * times[-1]
    converged = bool(np.all(err[tail] <= 1e-4 * (1.0 + err[0])))
    return SimulationResult(
        times=times,
        x_k=xs,
        w=ws,
        z=z,
        zhat=zhat,
        e=e,
        constraint_residual=cres,
        converged=converged,
        x_k0=x0,
        flagged=bool(np.max(cres, initial=0.0) > CONSTRAINT_TOL),
    )


def matched_config(red: ReducedSystem, obs, cfg: SimulationConfig) -> SimulationConfig:
    """Copy of ``cfg`` whose observer start gives ``e1(0) = 0``."""
    u = cfg.u or VectorSignal.zeros(red.l)
    x0 = np.zeros(red.n_k) if cfg.x_k0 is None else np.asarray(cfg.x_k0, dtype=float)
    if cfg.project_ic:
        x0 = project_initial_condition(red, x0, u(0.0))
    return SimulationConfig(
        t_end=cfg.t_end,
        dt=cfg.dt,
        x_k0=x0,
        w0=matched_w0(red, obs, x0),
        u=u,
        free_mode=cfg.free_mode,
        project_ic=False,
    )


def check_matched_initialization(red: ReducedSystem, split: FunctionalSplit, obs, cfg: SimulationConfig) -> float:
    """``max_t ||e(t)||`` for a run started with zero internal error."""
    res = simulate(red, split, obs, matched_config(red, obs, cfg))
    return float(np.max(np.linalg.norm(res.e, axis=1)))
