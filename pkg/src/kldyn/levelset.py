"""Minimal gradient norm on level sets.

For ``r > 0`` the profile ``psi(r) = min { |grad G(u)|^2 / 2 : G(u) - G(ubar) = r }``
is bounded by ``lambda_bar * r`` for C^2 potentials, which in turn forces any
desingularizing function to satisfy ``phi'(s) >= const / sqrt(s)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import CapabilityError, InputError, InsufficientDataError, LevelNotReachedError
from .potential import CRITICAL_TOL, PotentialSpec
from .sampling import sphere_directions

log = logging.getLogger(__name__)

MAX_DIMENSION = 8
MAX_ITER = 10_000
STEP_TOL = 1e-10


@dataclass(frozen=True)
class LevelPoint:
    u: np.ndarray
    psi: float
    multiplier: float
    converged: bool
    iterations: int
    multiplier_available: bool = True


def _hess_vec(spec: PotentialSpec, u, w, fd: bool):
    if spec.hessian is not None and not fd:
        return spec.hessian(u) @ w
    nw = np.linalg.norm(w)
    if nw == 0:
        return np.zeros_like(w)
    h = 1e-6 * (1 + np.linalg.norm(u)) / nw
    return (spec.gradient(u + h * w) - spec.gradient(u - h * w)) / (2 * h)


class _Level:
    """Helper bound to one potential, base point and level."""

    def __init__(self, spec: PotentialSpec, ubar, r):
        self.spec, self.ubar, self.r = spec, ubar, r
        self.g0 = float(spec.value(ubar))
        # relative, so tiny levels are resolved as well as large ones
        self.ctol = 1e-12 * r

    def excess(self, u) -> float:
        return float(self.spec.value(u)) - self.g0 - self.r

    def objective(self, u) -> float:
        g = self.spec.gradient(u)
        return 0.5 * float(g @ g)

    def on_ray(self, d, t_max) -> Optional[np.ndarray]:
        """First ``t > 0`` with ``G(ubar + t d) - G(ubar) = r``, scanning outwards."""
        f = lambda t: self.excess(self.ubar + t * d)
        ts = np.geomspace(t_max * 1e-14, t_max, 14 * 8 + 1)
        prev = 0.0
        for t in ts:
            if f(t) >= 0:
                if f(prev) == 0 and prev > 0:
                    return self.ubar + prev * d
                t_star = brentq(f, prev, t, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
                return self.ubar + t_star * d
            prev = t
        return None

    def restore(self, u):
        """Newton steps along ``grad G`` back onto the level set."""
        for _ in range(5):
            e = self.excess(u)
            if abs(e) <= self.ctol:
                break
            g = self.spec.gradient(u)
            gg = float(g @ g)
            if gg == 0:
                break
            u = u - (e / gg) * g
        return u


def minimize_on_level(spec: PotentialSpec, ubar, r: float, starts: int = 16,
                      r_ball: Optional[float] = None, seed: Optional[int] = None,
                      fd_multiplier: bool = False) -> LevelPoint:
    """Multi-start minimization of ``|grad G|^2 / 2`` on ``[G - G(ubar) = r]``.

    Each start finds a level point on a ray from ``ubar`` (deterministic
    directions, the coordinate axes first) and runs projected gradient descent
    with backtracking and Newton restoration.  The multiplier is the Rayleigh
    quotient ``<H g, g> / |g|^2`` at the best minimizer, NaN without a Hessian
    unless ``fd_multiplier`` asks for a finite-difference estimate.

    Parameters
    ----------
    r_ball : float, optional
        Rays are scanned out to this distance from ``ubar`` (default 10).
    """
    ubar = np.atleast_1d(np.asarray(ubar, dtype=float))
    n = spec.dimension
    if n > MAX_DIMENSION:
        raise CapabilityError(f"level-set search supports N <= {MAX_DIMENSION}, got {n}")
    if ubar.size != n:
        raise InputError("ubar dimension does not match the potential")
    if not r > 0:
        raise InputError("r must be positive")
    if np.linalg.norm(spec.gradient(ubar)) > CRITICAL_TOL:
        raise InputError("ubar is not a critical point")
    lvl = _Level(spec, ubar, r)
    reach = 10.0 if r_ball is None else float(r_ball)
    fd = spec.hessian is None

    best: Optional[LevelPoint] = None
    for d in sphere_directions(starts, n, seed):
        u0 = lvl.on_ray(d, reach)
        if u0 is None:
            continue
        cand = _descend(lvl, u0, fd)
        if best is None or cand.psi < best.psi:
            best = cand
    if best is None:
        raise LevelNotReachedError(f"level r={r} not reached within distance {reach} of ubar")

    g = spec.gradient(best.u)
    gg = float(g @ g)
    if spec.hessian is None and not fd_multiplier:
        mult, avail = math.nan, False
    else:
        mult = float(_hess_vec(spec, best.u, g, fd) @ g) / gg if gg > 0 else math.nan
        avail = True
    return LevelPoint(best.u, best.psi, mult, best.converged, best.iterations, avail)


def _descend(lvl: _Level, u, fd: bool) -> LevelPoint:
    spec = lvl.spec
    f = lvl.objective(u)
    step = None
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        g = spec.gradient(u)
        gg = float(g @ g)
        if gg == 0:
            converged = True
            break
        grad_f = _hess_vec(spec, u, g, fd)
        p = grad_f - (float(grad_f @ g) / gg) * g
        pn = float(np.linalg.norm(p))
        scale = float(np.linalg.norm(u - lvl.ubar))
        if pn <= 1e-14 * max(float(np.linalg.norm(grad_f)), 1e-300):
            converged = True
            break
        if step is None:
            step = 0.1 * scale / pn
        accepted = False
        for _ in range(60):
            trial = lvl.restore(u - step * p)
            f_trial = lvl.objective(trial)
            if f_trial < f and abs(lvl.excess(trial)) <= 4 * lvl.ctol:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True        # no descent left at working precision
            break
        moved = float(np.linalg.norm(trial - u))
        u, f = trial, f_trial
        step *= 2.0
        if moved <= STEP_TOL * max(scale, 1e-300):
            converged = True
            break
    return LevelPoint(u, f, math.nan, converged, it)


@dataclass
class LevelSetProfile:
    r_grid: np.ndarray
    psi_values: np.ndarray
    minimizers: list
    multipliers: np.ndarray
    converged: np.ndarray
    lambda_bar: float
    ratio_max: float
    bounded: bool
    start_ball: float
    failures: list = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        return self.psi_values / self.r_grid

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.psi_values)

    @property
    def verdict(self) -> str:
        return "bounded" if self.bounded else "unbounded"

    def to_csv(self, path):
        """Columns ``r,psi,ratio,multiplier,converged`` and a verdict footer."""
        with open(path, "w") as fh:
            fh.write("r,psi,ratio,multiplier,converged\n")
            for r, p, q, m, c in zip(self.r_grid, self.psi_values, self.ratios,
                                     self.multipliers, self.converged):
                fh.write(f"{r:.17g},{p:.17g},{q:.17g},{m:.17g},{str(bool(c)).lower()}\n")
            fh.write(f"# verdict: {self.verdict}\n")
            fh.write(f"# ratio_max: {self.ratio_max:.17g}\n")
            fh.write(f"# lambda_bar: {self.lambda_bar:.17g}\n")
            fh.write(f"# starts restricted to distance {self.start_ball:.17g} of ubar\n")


def psi_profile(spec: PotentialSpec, ubar, r_decades=(1e-2, 1e-8), points_per_decade: int = 2,
                starts: int = 16, r_ball: Optional[float] = None, seed: Optional[int] = None,
                fd_multiplier: bool = False) -> LevelSetProfile:
    """``psi(r)`` on a decreasing geometric grid from ``r_hi`` down to ``r_lo``.

    The verdict is ``bounded`` when ``psi/r`` at ``r_lo`` is at most twice its
    value at ``r_hi`` (first and last valid points).
    """
    r_hi, r_lo = map(float, r_decades)
    if not r_hi > r_lo > 0:
        raise InputError("need r_hi > r_lo > 0")
    if points_per_decade < 1:
        raise InputError("points_per_decade must be positive")
    n = int(round(math.log10(r_hi / r_lo) * points_per_decade)) + 1
    r_grid = np.geomspace(r_hi, r_lo, max(n, 2))
    psi = np.full(r_grid.size, np.nan)
    mult = np.full(r_grid.size, np.nan)
    conv = np.zeros(r_grid.size, bool)
    mins, fails = [], []
    for i, r in enumerate(r_grid):
        try:
            pt = minimize_on_level(spec, ubar, r, starts, r_ball, seed, fd_multiplier)
        except LevelNotReachedError as exc:
            log.info("level %.3g skipped: %s", r, exc)
            mins.append(None)
            fails.append(float(r))
            continue
        psi[i], mult[i], conv[i] = pt.psi, pt.multiplier, pt.converged
        mins.append(pt.u)
    ok = np.isfinite(psi)
    ratio = psi / r_grid
    if ok.sum() >= 2:
        first, last = np.flatnonzero(ok)[[0, -1]]
        bounded = bool(ratio[last] <= 2 * ratio[first])
    else:
        bounded = False
    return LevelSetProfile(
        r_grid=r_grid, psi_values=psi, minimizers=mins, multipliers=mult, converged=conv,
        lambda_bar=float(np.nanmax(mult)) if np.any(np.isfinite(mult)) else math.nan,
        ratio_max=float(np.nanmax(ratio)) if ok.any() else math.nan,
        bounded=bounded, start_ball=10.0 if r_ball is None else float(r_ball), failures=fails,
    )


def implied_desingularizer_bound(profile: LevelSetProfile):
    """Pointwise lower bound ``phi'(r) >= 1 / sqrt(2 psi(r))`` from a profile.

    Returns ``(r, bound)`` over the valid profile points.
    """
    ok = profile.valid & (profile.psi_values > 0)
    if ok.sum() < 2:
        raise InsufficientDataError("profile needs at least two valid points")
    r = profile.r_grid[ok]
    return r, 1.0 / np.sqrt(2.0 * profile.psi_values[ok])
