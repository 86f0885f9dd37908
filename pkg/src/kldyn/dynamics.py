"""Damped second-order gradient dynamics and first-order quasi-gradient flows.

The second-order system ``u'' + gamma u' + grad G(u) = 0`` is integrated in
phase space ``U = (u, v)`` as ``U' = -F(U)`` with
``F(u, v) = (-v, gamma v + grad G(u))``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import integrator
from .errors import ContractError, InputError, IntegrationError
from .potential import PotentialSpec

log = logging.getLogger(__name__)

CONVERGED = "Converged"
ESCAPED = "Escaped"
UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class PhaseState:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if u.shape != v.shape or u.ndim != 1:
            raise InputError(f"u and v must share one dimension, got {u.shape} and {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def dimension(self) -> int:
        return self.u.size

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])


@dataclass(frozen=True)
class DynamicsConfig:
    gamma: float = 1.0
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    t_max: float = 1e4
    conv_tol_v: float = 1e-8
    conv_tol_g: float = 1e-8
    conv_window: float = 1.0
    R_escape: float = 1e6

    def __post_init__(self):
        checks = {
            "gamma": self.gamma > 0,
            "abs_tol": self.abs_tol > 0,
            "rel_tol": self.rel_tol > 0,
            "t_max": self.t_max > 0,
            "conv_tol_v": self.conv_tol_v > 0,
            "conv_tol_g": self.conv_tol_g > 0,
            "conv_window": self.conv_window > 0,
            "R_escape": self.R_escape > 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise InputError(f"invalid DynamicsConfig.{key} = {getattr(self, key)!r}")


@dataclass(frozen=True)
class Classification:
    kind: str
    limit: Optional[np.ndarray] = None
    time: float = math.nan

    def to_dict(self):
        return {"kind": self.kind,
                "limit": None if self.limit is None else self.limit.tolist(),
                "time": self.time}


@dataclass
class Trajectory:
    """Time-stamped phase-space states with energies and gradient norms.

    ``derivs`` stores ``dU/dt`` at every output time so the trajectory can be
    re-interpolated (cubic Hermite) after the fact.
    """

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    energies: np.ndarray
    grad_norms: np.ndarray
    classification: Classification
    derivs: np.ndarray = field(repr=False)
    gamma: float = math.nan
    order: int = 2
    config: Optional[DynamicsConfig] = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.u.shape[1]

    @property
    def states(self):
        return [PhaseState(a, b) for a, b in zip(self.u, self.v)]

    def phase(self) -> np.ndarray:
        return np.hstack([self.u, self.v])

    def interpolate(self, t):
        """Hermite-interpolated ``(u, v)`` at times ``t`` inside the horizon."""
        sol = integrator.Solution(self.times, self._y(), self.derivs, False, 0, 0, 0)
        y = sol(np.asarray(t, dtype=float))
        n = self.dimension
        return y[..., :n], y[..., n:2 * n]

    def _y(self):
        return np.hstack([self.u, self.v]) if self.order == 2 else self.u

    def to_csv(self, path):
        """Write ``t,u_1..u_N,v_1..v_N,E_total,grad_norm`` with 17 significant digits."""
        n = self.dimension
        header = ["t"] + [f"u_{i + 1}" for i in range(n)] + [f"v_{i + 1}" for i in range(n)] \
            + ["E_total", "grad_norm"]
        data = np.column_stack([self.times, self.u, self.v, self.energies, self.grad_norms])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in data:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def total_energy(spec: PotentialSpec, u, v) -> float:
    return float(spec.value(u)) + 0.5 * float(np.dot(v, v))


def second_order_field(spec: PotentialSpec, gamma: float, state: PhaseState) -> PhaseState:
    """Right-hand side ``(v, -gamma v - grad G(u))`` of ``U' = -F(U)``."""
    if state.dimension != spec.dimension:
        raise InputError(f"state dimension {state.dimension} != potential dimension {spec.dimension}")
    return PhaseState(state.v.copy(), -gamma * state.v - np.asarray(spec.gradient(state.u)))


class _Classifier:
    """Tracks the trailing-window convergence test and the escape test."""

    n_probe = 3

    def __init__(self, cfg: DynamicsConfig, dim: int, velocity: Callable, grad: Callable):
        self.cfg = cfg
        self.dim = dim
        self.velocity = velocity
        self.grad = grad
        self.since: Optional[float] = None
        self.result: Optional[Classification] = None

    def _ok(self, y) -> bool:
        u = y[:self.dim]
        return (np.linalg.norm(self.velocity(y)) <= self.cfg.conv_tol_v
                and np.linalg.norm(self.grad(u)) <= self.cfg.conv_tol_g)

    def start(self, y):
        if self._ok(y):
            self.since = 0.0

    def __call__(self, tp, yp, fp, tn, yn, fn) -> bool:
        if not np.all(np.isfinite(yn)) or np.linalg.norm(yn[:self.dim]) >= self.cfg.R_escape:
            self.result = Classification(ESCAPED, None, float(tn))
            return True
        probes = [integrator.hermite(tp + (tn - tp) * k / (self.n_probe + 1), tp, tn, yp, yn, fp, fn)
                  for k in range(1, self.n_probe + 1)]
        if all(self._ok(y) for y in probes) and self._ok(yn):
            if self.since is None:
                self.since = tp if self._ok(yp) else tn
            if tn - self.since >= self.cfg.conv_window:
                self.result = Classification(CONVERGED, yn[:self.dim].copy(), float(tn))
                return True
        else:
            self.since = None
        return False


def _trajectory_from(sol, spec_value, grad, cfg, classification, order, gamma, dim, velocity):
    y = sol.y
    u = y[:, :dim]
    v = y[:, dim:2 * dim] if order == 2 else np.array([velocity(row) for row in y])
    if order == 2:
        energies = np.array([spec_value(a) + 0.5 * float(b @ b) for a, b in zip(u, v)])
    else:
        energies = np.array([spec_value(a) for a in u])
    grad_norms = np.array([float(np.linalg.norm(grad(a))) for a in u])
    return Trajectory(sol.t, u, v, energies, grad_norms, classification, sol.f, gamma, order, cfg)


def integrate(spec: PotentialSpec, cfg: DynamicsConfig, initial: PhaseState,
              t_eval=None) -> Trajectory:
    """Integrate the damped system from ``initial`` and classify the outcome.

    Integration stops at the first classification event (convergence held
    over ``cfg.conv_window``, or ``||u|| >= cfg.R_escape``) or at ``cfg.t_max``
    (Undetermined).

    Raises
    ------
    IntegrationError
        On step-size underflow; ``partial`` is a :class:`Trajectory`.
    """
    if initial.dimension != spec.dimension:
        raise InputError(f"initial state dimension {initial.dimension} != {spec.dimension}")
    y0 = initial.stacked()
    if not np.all(np.isfinite(y0)):
        raise InputError("initial state must be finite")
    n, gamma = spec.dimension, cfg.gamma

    def rhs(t, y):
        u, v = y[:n], y[n:]
        return np.concatenate([v, -gamma * v - spec.gradient(u)])

    clf = _Classifier(cfg, n, lambda y: y[n:], spec.gradient)
    return _run(rhs, y0, cfg, clf, t_eval, spec.value, spec.gradient, 2, gamma, n,
                lambda y: y[n:])


def integrate_quasi_gradient(field_fn: Callable, energy: Callable, energy_grad: Callable,
                             cfg: DynamicsConfig, u0, t_eval=None) -> Trajectory:
    """Integrate a first-order system ``u' = -F(u)``.

    ``energy``/``energy_grad`` are the Lyapunov function and its gradient;
    the trajectory's ``v`` column holds the velocity ``-F(u)``.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    n = u0.size

    def rhs(t, y):
        return -np.asarray(field_fn(y), dtype=float)

    def velocity(y):
        return -np.asarray(field_fn(y), dtype=float)

    clf = _Classifier(cfg, n, velocity, energy_grad)
    return _run(rhs, u0, cfg, clf, t_eval, energy, energy_grad, 1, math.nan, n, velocity)


def integrate_gradient_flow(spec: PotentialSpec, cfg: DynamicsConfig, u0, t_eval=None) -> Trajectory:
    """Gradient flow ``u' = -grad G(u)`` (the model quasi-gradient system)."""
    return integrate_quasi_gradient(spec.gradient, spec.value, spec.gradient, cfg, u0, t_eval)


def _run(rhs, y0, cfg, clf, t_eval, value, grad, order, gamma, n, velocity):
    clf.start(y0)
    try:
        sol = integrator.solve(rhs, y0, cfg.t_max, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                               t_eval=t_eval, on_step=clf)
    except IntegrationError as exc:
        partial = _trajectory_from(exc.partial, value, grad, cfg, Classification(UNDETERMINED),
                                   order, gamma, n, velocity)
        raise IntegrationError(str(exc), partial) from None
    classification = clf.result or Classification(UNDETERMINED, None, float(sol.t[-1]))
    log.debug("integration finished: %s after %d steps (%d rejected)",
              classification.kind, sol.n_steps, sol.n_rejected)
    return _trajectory_from(sol, value, grad, cfg, classification, order, gamma, n, velocity)


def classify_asymptotics(traj: Trajectory, cfg: DynamicsConfig) -> Classification:
    """Re-run the classification rules on an existing trajectory."""
    n = traj.dimension
    if np.any(np.linalg.norm(traj.u, axis=1) >= cfg.R_escape) or not np.all(np.isfinite(traj.u)):
        i = int(np.argmax(~np.isfinite(traj.u).all(axis=1) |
                          (np.linalg.norm(traj.u, axis=1) >= cfg.R_escape)))
        return Classification(ESCAPED, None, float(traj.times[i]))
    ok = (np.linalg.norm(traj.v, axis=1) <= cfg.conv_tol_v) & (traj.grad_norms <= cfg.conv_tol_g)
    since = None
    for i, flag in enumerate(ok):
        if flag:
            since = traj.times[i] if since is None else since
            if traj.times[i] - since >= cfg.conv_window:
                return Classification(CONVERGED, traj.u[i].copy(), float(traj.times[i]))
        else:
            since = None
    return Classification(UNDETERMINED, None, float(traj.times[-1]))


# ---------------------------------------------------------------- post-processing


def _refined(traj: Trajectory, refine: int):
    """Times and (u, v) on every output interval split into ``refine`` pieces."""
    t = traj.times
    if refine <= 1 or t.size < 2:
        return t, traj.u, traj.v
    frac = np.arange(refine) / refine
    tt = np.concatenate([(t[:-1, None] + np.diff(t)[:, None] * frac[None, :]).ravel(), t[-1:]])
    u, v = traj.interpolate(tt)
    return tt, u, v


def velocity_l1(traj: Trajectory, T_tail: float = 0.0, refine: int = 8):
    """Trapezoidal ``int_0^T ||v|| dt`` and ``int_{T_tail}^T ||v|| dt`` over the horizon."""
    if traj.classification.kind != CONVERGED:
        raise ContractError(f"velocity_l1 needs a Converged trajectory, got {traj.classification.kind}")
    tt, _, v = _refined(traj, refine)
    speed = np.linalg.norm(v, axis=1)
    pieces = 0.5 * (speed[1:] + speed[:-1]) * np.diff(tt)
    total = float(pieces.sum())
    tail = float(pieces[tt[1:] > T_tail].sum() - _partial_piece(tt, speed, T_tail))
    return total, max(tail, 0.0)


def _partial_piece(tt, speed, T):
    # part of the interval containing T that lies before T
    i = np.searchsorted(tt, T, side="right") - 1
    if i < 0 or i >= tt.size - 1 or T == tt[i]:
        return 0.0
    w = (T - tt[i]) / (tt[i + 1] - tt[i])
    s_T = speed[i] + w * (speed[i + 1] - speed[i])
    return 0.5 * (speed[i] + s_T) * (T - tt[i])


def l1_cauchy(traj: Trajectory, doublings: int = 3, refine: int = 8):
    """Partial totals of ``int ||v||`` over horizons ``T/2^k`` and the last relative change."""
    T = float(traj.times[-1])
    tt, _, v = _refined(traj, refine)
    speed = np.linalg.norm(v, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(tt))])
    horizons = [T / 2 ** k for k in range(doublings, -1, -1)]
    totals = [float(np.interp(h, tt, cum)) for h in horizons]
    last = totals[-1]
    rel_change = abs(totals[-1] - totals[-2]) / last if last > 0 else 0.0
    return {"horizons": horizons, "totals": totals, "rel_change": rel_change}


def energy_dissipation_report(traj: Trajectory, spec: PotentialSpec, cfg: Optional[DynamicsConfig] = None,
                              refine: int = 16, active_frac: float = 1e-2) -> dict:
    """Check ``E_T`` is non-increasing and that ``-dE_T/dt`` matches ``gamma ||v||^2``.

    Monotonicity is tested on the output samples with slack
    ``10 * (abs_tol + rel_tol * |E|)``.  The rate is compared on every output
    interval split into ``refine`` pieces: the finite difference ``-dE/dt``
    against ``gamma ||v||^2`` at the piece midpoint, on pieces whose
    dissipation is at least ``active_frac`` of the peak.
    """
    cfg = cfg or traj.config
    if traj.order != 2:
        raise ContractError("energy dissipation applies to second-order trajectories")
    E = traj.energies
    slack = 10 * (cfg.abs_tol + cfg.rel_tol * np.abs(E[:-1]))
    increase = np.diff(E) - slack
    monotone = bool(np.all(increase <= 0))

    tt, u, v = _refined(traj, refine)
    En = np.array([total_energy(spec, a, b) for a, b in zip(u, v)])
    dt = np.diff(tt)
    rate_fd = -np.diff(En) / dt
    _, vm = traj.interpolate(0.5 * (tt[1:] + tt[:-1]))
    rate_mid = cfg.gamma * np.sum(vm * vm, axis=1)
    active = rate_mid >= active_frac * rate_mid.max() if rate_mid.size else np.zeros(0, bool)
    # drop pieces where the energy change is lost in rounding
    active &= np.abs(np.diff(En)) > 1e3 * np.finfo(float).eps * np.maximum(1.0, np.abs(En[:-1]))
    rel = np.abs(rate_fd[active] - rate_mid[active]) / rate_mid[active]
    max_rel = float(rel.max()) if rel.size else 0.0
    return {
        "monotone": monotone,
        "max_increase": float(np.max(np.diff(E))) if E.size > 1 else 0.0,
        "rate_max_rel_err": max_rel,
        "rate_pieces": int(active.sum()),
        "passed": monotone and max_rel <= 0.05,
    }
