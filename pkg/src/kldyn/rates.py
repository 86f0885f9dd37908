"""Convergence-rate envelopes for converged trajectories.

Three envelopes are checked against an integrated trajectory:

* distance vs. energy (``automaj``):
  ``|U(t) - U_inf| <= phi(E_lam(U(t)) - E_lam(U_inf)) / alpha``;
* worst-case distance (``majgrad1``): ``|u(t) - u_inf| <= d * gamma(c t + t0)``;
* worst-case energy (``majval``): ``E_lam(U(t)) - E_lam(U_inf) <= c * psi(gamma(...))``;

where ``gamma`` solves ``gamma' + psi'(gamma) = 0``.  Rate constants are
fitted from the trajectory and dominance is verified afterwards.  Empirical
power or exponential laws are fitted to the distance decay.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import dynamics
from .deformation import (AngleCertificate, DeformedEnergy, as_potential, certify_quasigradient,
                          lambda_star)
from .desingularize import (Desingularizer, check_sqrt_lower_bound, estimate_lojasiewicz,
                            kl_products, worst_case_curve)
from .dynamics import CONVERGED, DynamicsConfig, PhaseState, Trajectory
from .errors import (ContractError, DomainError, InputError, InsufficientDataError,
                     RoundingFloorError)
from .potential import PotentialSpec, hessian_bound

log = logging.getLogger(__name__)

SNAP_RADIUS = 0.1
ENTRY_FRACTION = 1e-2
REL_SLACK = 1e-6
AMBIGUOUS_MARGIN = 0.10
ROUNDING_FLOOR = 1e2 * np.finfo(float).eps


@dataclass
class EnvelopeVerdict:
    passed: bool
    max_violation: float
    t_start: float
    checked: int
    degenerate: int = 0


@dataclass
class WorstCaseFit:
    c_time: float
    d: float
    t0: float
    passed: bool
    max_violation: float
    t_start: float
    gamma0: float = math.nan


@dataclass
class EnergyFit:
    c: float
    passed: bool
    max_violation: float
    t_start: float
    c_time: float = math.nan


@dataclass
class DecayLaw:
    law: str
    param: float
    residual_power: float
    residual_exponential: float
    power_exponent: float
    exponential_rate: float
    window: tuple


# ---------------------------------------------------------------- helpers


def _require_converged(traj: Trajectory):
    if traj.classification.kind != CONVERGED:
        raise ContractError(f"needs a Converged trajectory, got {traj.classification.kind}")


def distances(traj: Trajectory, u_inf) -> np.ndarray:
    return np.linalg.norm(traj.u - np.asarray(u_inf, dtype=float), axis=1)


def default_t_start(traj: Trajectory, u_inf, fraction: float = ENTRY_FRACTION) -> float:
    """Time from which the trajectory stays in ``B(u_inf, fraction * |u(0) - u_inf|)``.

    Oscillating trajectories cross the small ball before settling in it, so
    the first entry alone is not used.
    """
    d = distances(traj, u_inf)
    if d[0] == 0:
        return float(traj.times[0])
    outside = np.flatnonzero(d > fraction * d[0])
    if outside.size == 0:
        return float(traj.times[0])
    i = outside[-1] + 1
    return float(traj.times[min(i, traj.times.size - 1)])


def sqrt_probe_grid(desing: Desingularizer, n: int = 41) -> np.ndarray:
    """Small-``s`` grid inside the desingularizer's domain."""
    if desing.kind == "power":
        return np.geomspace(1e-12, min(1e-2, 0.5 * desing.domain_radius), n)
    return np.geomspace(desing.s_grid[0] * (1 + 1e-9), desing.s_grid[-1] * (1 - 1e-9), n)


def _abs_slack(traj: Trajectory) -> float:
    # positions are only known to the integrator's absolute tolerance
    return 10.0 * traj.config.abs_tol if traj.config is not None else 0.0


def _tail(traj: Trajectory, t_start: float) -> np.ndarray:
    return traj.times >= t_start


# ---------------------------------------------------------------- envelopes


def check_distance_envelope(traj: Trajectory, u_inf, desing: Desingularizer, alpha: float,
                            energy: DeformedEnergy, t_start: Optional[float] = None) -> EnvelopeVerdict:
    """Phase-space distance against ``phi(energy gap) / alpha`` for ``t >= t_start``.

    Points with a non-positive energy gap are counted as degenerate and
    skipped; a sample passes when the distance is at most the envelope plus
    ``1e-9``.
    """
    _require_converged(traj)
    if not alpha > 0:
        raise InputError("alpha must be positive")
    u_inf = np.asarray(u_inf, dtype=float)
    t_start = float(traj.times[0]) if t_start is None else float(t_start)
    e_inf = energy.value(u_inf, np.zeros_like(u_inf))
    worst, checked, degenerate = -math.inf, 0, 0
    for t, u, v in zip(traj.times, traj.u, traj.v):
        if t < t_start:
            continue
        lhs = math.sqrt(float(np.sum((u - u_inf) ** 2) + v @ v))
        gap = energy.value(u, v) - e_inf
        if gap <= 0:
            if lhs > 1e-9:
                degenerate += 1
            continue
        checked += 1
        worst = max(worst, lhs - (float(desing.phi(gap)) / alpha + 1e-9))
    if checked == 0:
        worst = 0.0
    return EnvelopeVerdict(bool(worst <= 0), float(worst), t_start, checked, degenerate)


def _curve_from(desing: Desingularizer, gamma0: float, tau: np.ndarray) -> np.ndarray:
    return np.asarray(worst_case_curve(desing, gamma0, np.sort(tau))(tau), dtype=float)


def check_worstcase_envelope(traj: Trajectory, u_inf, desing: Desingularizer,
                             t_start: Optional[float] = None, c_bar: float = 1.0,
                             k_range=(-16, 8), prefix: float = 0.25) -> WorstCaseFit:
    """Fit ``|u(t) - u_inf| <= d * gamma(c (t - t_start))`` and verify dominance.

    The worst-case curve starts at the distance at ``t_start``, so in the
    form ``d * gamma(c t + t0)`` the offset is ``t0 = -c * t_start``.  ``c`` runs over
    ``c_bar * 2^k``; for each ``c`` the factor ``d`` is the largest ratio over
    the first ``prefix`` of the checked span.  Among the ``c`` whose envelope
    dominates every later sample (relative slack ``1e-6`` plus ten times the
    integrator's absolute tolerance) the one closest to the trajectory's upper
    envelope in the worst log ratio is returned; otherwise the least-violating
    fit, marked as failed.
    """
    _require_converged(traj)
    if not check_sqrt_lower_bound(desing, sqrt_probe_grid(desing))[1]:
        raise ContractError("desingularizer fails the sqrt(s) lower bound")
    t_start = float(traj.times[0]) if t_start is None else float(t_start)
    mask = _tail(traj, t_start)
    t, dist = traj.times[mask], distances(traj, u_inf)[mask]
    if t.size < 2:
        raise InsufficientDataError("fewer than two samples after t_start")
    d0 = float(dist[0])
    if d0 == 0.0:
        ok = bool(np.all(dist == 0))
        return WorstCaseFit(c_bar, 0.0, 0.0, ok, float(dist.max()), t_start, 0.0)
    if d0 >= desing.phi_max:
        raise DomainError("initial distance outside the desingularizer range")
    span = t - t_start
    window = span <= prefix * span[-1]
    window[:2] = True
    sup = _sup_envelope(dist)
    passing, failing = [], []
    for k in range(k_range[1], k_range[0] - 1, -1):
        c = c_bar * 2.0 ** k
        env = _curve_from(desing, d0, c * span)
        with np.errstate(all="ignore"):
            ratio = np.where(env > 0, dist / env, np.inf)
        d = float(np.max(ratio[window]))
        if not np.isfinite(d):
            continue
        violation = float(np.max(dist - d * env * (1 + REL_SLACK) - _abs_slack(traj)))
        fit = WorstCaseFit(c, d, -c * t_start, violation <= 0, violation, t_start, d0)
        with np.errstate(all="ignore"):
            looseness = float(np.max(np.log(d * env[sup > 0] / sup[sup > 0]))) if np.any(sup > 0) else 0.0
        (passing if fit.passed else failing).append((looseness, fit))
    if passing:
        # the envelope that hugs the trajectory most uniformly
        return min(passing, key=lambda item: item[0])[1]
    return min(failing, key=lambda item: item[1].max_violation)[1]


def check_energy_envelope(traj: Trajectory, u_inf, desing: Desingularizer, energy: DeformedEnergy,
                          c_time: float, t_start: Optional[float] = None,
                          prefix: float = 0.25, halvings: int = 16) -> EnergyFit:
    """Fit ``E_lam(U(t)) - E_lam(U_inf) <= c * psi(gamma(c_time (t - t_start)))``.

    ``gamma`` starts at the distance at ``t_start``; ``c`` is the largest ratio
    over the first ``prefix`` of the span and dominance is then verified on
    every later sample.  If the envelope fails at ``c_time`` the time scale is
    halved (slower decay) up to ``halvings`` times.
    """
    _require_converged(traj)
    u_inf = np.asarray(u_inf, dtype=float)
    t_start = float(traj.times[0]) if t_start is None else float(t_start)
    mask = _tail(traj, t_start)
    t = traj.times[mask]
    e_inf = energy.value(u_inf, np.zeros_like(u_inf))
    gap = np.array([energy.value(u, v) for u, v in zip(traj.u[mask], traj.v[mask])]) - e_inf
    d0 = float(distances(traj, u_inf)[mask][0])
    if d0 == 0.0:
        return EnergyFit(0.0, bool(np.all(gap <= 0)), float(gap.max()), t_start, c_time)
    span = t - t_start
    window = span <= prefix * span[-1]
    window[:2] = True
    floor = 1e-14 * (1 + abs(e_inf))
    fit = None
    for j in range(halvings + 1):
        ct = c_time * 0.5 ** j
        target = np.asarray(desing.psi(_curve_from(desing, d0, ct * span)), dtype=float)
        with np.errstate(all="ignore"):
            ratio = np.where(target > 0, gap / target, np.inf)
        c = max(float(np.max(ratio[window])), np.finfo(float).tiny)
        violation = float(np.max(gap - c * target * (1 + REL_SLACK) - floor))
        fit = EnergyFit(c, violation <= 0, violation, t_start, ct)
        if fit.passed:
            break
    return fit


# ---------------------------------------------------------------- decay laws


def _sup_envelope(d):
    # running maximum from the right
    return np.maximum.accumulate(d[::-1])[::-1]


def _log_weights(t):
    # trapezoid weights in log t, so dense late sampling does not dominate
    x = np.log(t)
    w = np.zeros_like(x)
    w[1:] += 0.5 * np.diff(x)
    w[:-1] += 0.5 * np.diff(x)
    return w


def _wlstsq(x, y, w):
    A = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    resid = float(np.sqrt(np.sum(w * (y - A @ coef) ** 2) / np.sum(w)))
    return coef, resid


def fit_decay_samples(t, dist, window) -> DecayLaw:
    """Power vs. exponential fit of a distance signal sampled at times ``t``.

    The fit uses the upper envelope ``sup_{s >= t} dist(s)``, which removes the
    zeros of oscillating decays, with least-squares weights uniform in
    ``log t``.
    """
    t = np.asarray(t, dtype=float)
    dist = np.asarray(dist, dtype=float)
    t_lo, t_hi = map(float, window)
    if not 0 < t_lo < t_hi:
        raise InputError("window must satisfy 0 < t_lo < t_hi")
    if t_lo < t[0] or t_hi > t[-1] * (1 + 1e-12):
        raise InputError(f"window {window} outside the trajectory horizon [{t[0]}, {t[-1]}]")
    inside = (t >= t_lo) & (t <= t_hi)
    if inside.sum() < 3:
        raise InsufficientDataError("fewer than three samples in the window")
    tw, dw = t[inside], dist[inside]
    if np.min(dw) < ROUNDING_FLOOR:
        raise RoundingFloorError(
            f"distance {np.min(dw):.3g} below the rounding floor; narrow the window")
    y = np.log(_sup_envelope(dw))
    w = _log_weights(tw)
    (_, slope_p), res_p = _wlstsq(np.log(tw), y, w)
    (_, slope_e), res_e = _wlstsq(tw, y, w)
    p, rho = -slope_p, -slope_e
    if abs(res_p - res_e) <= AMBIGUOUS_MARGIN * max(res_p, res_e) and max(res_p, res_e) > 1e-12:
        law, param = "Ambiguous", math.nan
    elif res_p < res_e:
        law, param = "Power", p
    else:
        law, param = "Exponential", rho
    return DecayLaw(law, float(param), res_p, res_e, float(p), float(rho), (t_lo, t_hi))


def fit_decay(traj: Trajectory, u_inf, window) -> DecayLaw:
    """Fit ``log|u - u_inf|`` by ``a - p log t`` and by ``a - rho t`` over ``window``.

    Returns the law with the smaller RMS residual, or ``Ambiguous`` when the
    residuals are within 10% of each other.
    """
    return fit_decay_samples(traj.times, distances(traj, u_inf), window)


def _auto_window(traj: Trajectory, u_inf, t_start: float):
    d = distances(traj, u_inf)
    above = np.flatnonzero(d >= 1e3 * ROUNDING_FLOOR)
    t_hi = float(traj.times[above[-1]]) if above.size else float(traj.times[-1])
    t_lo = max(t_start, float(traj.times[1]))
    if t_hi <= t_lo:
        t_lo = float(traj.times[1])
    return t_lo, t_hi


# ---------------------------------------------------------------- desingularizers


def estimate_desingularizer(traj: Trajectory, spec: PotentialSpec, u_inf, window=None):
    """Power-type desingularizer fitted on trajectory samples and scaled to satisfy KL there.

    Returns ``(desing, theta_hat_raw)``; the exponent used is clipped to
    ``(0, 1/2]``.
    """
    g0 = spec.value(u_inf)
    pairs = np.column_stack([np.abs([spec.value(u) - g0 for u in traj.u]), traj.grad_norms])
    kwargs = {} if window is None else {"window": window}
    theta_raw, c_hat, _ = estimate_lojasiewicz(pairs, **kwargs)
    theta = float(np.clip(theta_raw, 0.01, 0.5))
    if theta != theta_raw:
        c_hat = math.nan
    base = Desingularizer.power(1.0 if not np.isfinite(c_hat) or c_hat <= 0 else c_hat, theta)
    return calibrate(spec, u_inf, base, traj.u), theta_raw


def calibrate(spec: PotentialSpec, ubar, desing: Desingularizer, points) -> Desingularizer:
    """Scale ``desing`` up until the KL products at ``points`` are at least 1."""
    prods = kl_products(spec, np.asarray(ubar, dtype=float), desing, points)
    prods = prods[np.isfinite(prods) & (prods > 0)]
    if prods.size == 0:
        return desing
    margin = float(prods.min())
    return desing if margin >= 1 else desing.scaled(1.0 / margin * (1 + 1e-9))


def energy_desingularizer(de: DeformedEnergy, u_inf, desing: Desingularizer, traj: Trajectory,
                          t_start: float) -> Desingularizer:
    """Desingularizer of ``E_lam`` near ``(u_inf, 0)`` calibrated on the trajectory tail."""
    mask = _tail(traj, t_start)
    pts = np.hstack([traj.u[mask], traj.v[mask]])
    center = np.concatenate([u_inf, np.zeros_like(u_inf)])
    return calibrate(as_potential(de), center, desing, pts)


# ---------------------------------------------------------------- pipeline


@dataclass
class RateReport:
    potential: str
    gamma: float
    classification: str
    limit_point: Optional[list] = None
    desingularizer: Optional[str] = None
    desingularizer_source: Optional[str] = None
    theta_hat: float = math.nan
    lambda_used: float = math.nan
    alpha_used: float = math.nan
    certificate: Optional[dict] = None
    sqrt_lower_bound: Optional[dict] = None
    t_start: float = math.nan
    envelope_automaj: Optional[dict] = None
    envelope_majval: Optional[dict] = None
    envelope_majgrad1: Optional[dict] = None
    empirical_law: Optional[dict] = None
    velocity_l1: Optional[dict] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(to_jsonable(self.to_dict()), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def summary_row(self) -> dict:
        def verdict(env):
            return "" if env is None else ("pass" if env["passed"] else "fail")
        law = self.empirical_law or {}
        return {
            "potential": self.potential,
            "gamma": self.gamma,
            "classification": self.classification,
            "theta_hat": self.theta_hat,
            "law": law.get("law", ""),
            "param": law.get("param", math.nan),
            "envelope_automaj": verdict(self.envelope_automaj),
            "envelope_majgrad1": verdict(self.envelope_majgrad1),
        }


def to_jsonable(x):
    """Convert numpy containers and scalars to plain JSON data; non-finite floats become null."""
    if isinstance(x, dict):
        return {k: to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def end_to_end(spec: PotentialSpec, cfg: DynamicsConfig, initial: PhaseState,
               desing: Optional[Desingularizer] = None, seed: Optional[int] = None,
               budget: int = 4000, t_start: Optional[float] = None, fit_window=None,
               exponent_window=None, traj: Optional[Trajectory] = None):
    """Integrate, classify and, for converged runs, check every rate estimate.

    Returns ``(report, trajectory)``.  Without ``desing`` the exponent is
    estimated from the trajectory (the catalog's known desingularizer is not
    used).
    """
    traj = traj if traj is not None else dynamics.integrate(spec, cfg, initial)
    kind = traj.classification.kind
    report = RateReport(spec.name, cfg.gamma, kind)
    if kind != CONVERGED:
        report.notes.append("no rate analysis: trajectory did not converge")
        return report, traj

    u_inf = np.asarray(traj.classification.limit, dtype=float)
    if spec.known_critical_point is not None and \
            np.linalg.norm(u_inf - spec.known_critical_point) <= SNAP_RADIUS:
        u_inf = np.asarray(spec.known_critical_point, dtype=float)
    report.limit_point = u_inf.tolist()

    if desing is None:
        desing, theta_raw = estimate_desingularizer(traj, spec, u_inf, exponent_window)
        report.desingularizer_source = "estimated"
        report.theta_hat = theta_raw
    else:
        desing = calibrate(spec, u_inf, desing, traj.u)
        report.desingularizer_source = "given"
        report.theta_hat = desing.theta if desing.kind == "power" else math.nan
    report.desingularizer = desing.describe()
    beta, ok = check_sqrt_lower_bound(desing, sqrt_probe_grid(desing))
    report.sqrt_lower_bound = {"beta": beta, "passed": ok}

    t_start = default_t_start(traj, u_inf) if t_start is None else float(t_start)
    report.t_start = t_start
    if t_start >= traj.times[-1]:
        t_start = float(traj.times[0])
        report.t_start = t_start
        report.notes.append("trajectory never entered the t_start ball; checking from t=0")
    report.notes.append(f"t_start = time from which u stays in B(u_inf, {ENTRY_FRACTION:g} * initial distance)")

    # certificate on the ball containing every computed (u, v)
    if spec.has_hessian:
        R = float(max(np.max(np.linalg.norm(traj.u, axis=1)),
                      np.max(np.linalg.norm(traj.v, axis=1)), 1e-12)) * (1 + 1e-9)
        M = hessian_bound(spec, R, seed=seed)[0]
        lam = lambda_star(cfg.gamma, M)
        de = DeformedEnergy(spec, cfg.gamma, lam)
        cert: AngleCertificate = certify_quasigradient(de, R, budget, seed, M)
        report.certificate = cert.to_dict()
        report.lambda_used = lam
        report.alpha_used = cert.alpha_certified
        desing_e = energy_desingularizer(de, u_inf, desing, traj, t_start)
        v = check_distance_envelope(traj, u_inf, desing_e, cert.alpha_certified, de, t_start)
        report.envelope_automaj = {**asdict(v), "desingularizer": desing_e.describe()}
    else:
        de = DeformedEnergy(spec, cfg.gamma, 0.0)
        report.notes.append("Hessian unavailable: no certificate, distance envelope skipped")

    try:
        wc = check_worstcase_envelope(traj, u_inf, desing, t_start)
        report.envelope_majgrad1 = asdict(wc)
        ev = check_energy_envelope(traj, u_inf, desing, de, wc.c_time, t_start)
        report.envelope_majval = asdict(ev)
    except (ContractError, DomainError, InsufficientDataError) as exc:
        report.notes.append(f"worst-case envelope not checked: {exc}")

    window = fit_window or _auto_window(traj, u_inf, t_start)
    try:
        report.empirical_law = asdict(fit_decay(traj, u_inf, window))
    except (RoundingFloorError, InsufficientDataError, InputError) as exc:
        report.notes.append(f"decay fit skipped: {exc}")

    total, _ = dynamics.velocity_l1(traj, 0.0)
    cauchy = dynamics.l1_cauchy(traj)
    T = traj.times[-1]
    tails = [dynamics.velocity_l1(traj, x)[1] for x in np.linspace(0, T, 9)]
    report.velocity_l1 = {"total": total, "cauchy_rel_change": cauchy["rel_change"],
                          "cauchy": cauchy["rel_change"] < 0.01,
                          "tail_monotone": bool(np.all(np.diff(tails) <= 1e-15))}
    return report, traj
