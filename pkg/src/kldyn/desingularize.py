"""Desingularizing functions and the one-dimensional worst-case dynamics.

A desingularizing function ``phi`` reparameterises values near a critical
point so that ``phi'(|G(u) - G(ubar)|) * ||grad G(u)|| >= 1``.  Two kinds are
supported: power type ``phi(s) = c * s**theta`` and tabulated data.

Tabulated functions are interpolated by a monotone (PCHIP) cubic in
``(log s, log phi)`` coordinates, which keeps ``phi`` increasing, keeps
``phi'`` positive and reproduces power laws exactly.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import integrator
from .errors import (CapabilityError, DegenerateSampleError, DomainError, InputError,
                     InsufficientDataError)
from .sampling import axis_extremes, ball_points, radial_ladder

CRITICAL_TOL = 1e-10
DEFAULT_FIT_WINDOW = (1e-8, 1e-2)


@dataclass(frozen=True)
class Desingularizer:
    """Power-type or tabulated desingularizing function.

    Use :meth:`power` or :meth:`table` rather than the constructor.
    """

    kind: str
    c: float = 1.0
    theta: float = 0.5
    domain_radius: float = math.inf
    s_grid: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    phi_values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    # ------------------------------------------------------------ builders
    @classmethod
    def power(cls, c: float = 1.0, theta: float = 0.5, domain_radius: float = math.inf):
        if not c > 0:
            raise InputError(f"power desingularizer needs c > 0, got {c}")
        if not 0 < theta <= 1:
            raise InputError(f"power desingularizer needs theta in (0, 1], got {theta}")
        return cls("power", float(c), float(theta), float(domain_radius))

    @classmethod
    def table(cls, s_grid, phi_values):
        s = np.asarray(s_grid, dtype=float)
        p = np.asarray(phi_values, dtype=float)
        if s.ndim != 1 or s.shape != p.shape or s.size < 4:
            raise InputError("table needs two 1-D arrays of equal length >= 4")
        if np.any(s <= 0) or np.any(np.diff(s) <= 0):
            raise InputError("table s_grid must be positive and strictly increasing")
        if np.any(p <= 0) or np.any(np.diff(p) <= 0):
            raise InputError("table phi values must be positive and strictly increasing")
        obj = cls("table", math.nan, math.nan, float(s[-1]), s, p)
        interp = PchipInterpolator(np.log(s), np.log(p), extrapolate=False)
        object.__setattr__(obj, "_logphi", interp)
        object.__setattr__(obj, "_dlogphi", interp.derivative())
        object.__setattr__(obj, "_mu_nodes", _mu_nodes(obj))
        return obj

    @classmethod
    def from_csv(cls, path):
        """Read a two-column ``s,phi`` CSV file (header optional)."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header line
        arr = np.array(rows)
        return cls.table(arr[:, 0], arr[:, 1])

    @classmethod
    def parse(cls, text: str, base_dir=None):
        """Parse ``power(c=1.0, theta=0.5)`` or ``table(file=phi.csv)``."""
        m = re.fullmatch(r"\s*(\w+)\s*\((.*)\)\s*", text)
        if not m:
            raise InputError(f"cannot parse desingularizer {text!r}")
        name, body = m.group(1), m.group(2)
        kwargs = {}
        for part in filter(None, (p.strip() for p in body.split(","))):
            key, _, val = part.partition("=")
            kwargs[key.strip()] = val.strip().strip("'\"")
        if name == "power":
            return cls.power(float(kwargs.get("c", 1.0)), float(kwargs.get("theta", 0.5)),
                             float(kwargs.get("r0", math.inf)))
        if name == "table":
            path = Path(kwargs["file"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return cls.from_csv(path)
        raise InputError(f"unknown desingularizer kind {name!r}")

    def describe(self) -> str:
        if self.kind == "power":
            return f"power(c={self.c!r}, theta={self.theta!r})"
        return f"table(n={self.s_grid.size}, s=[{self.s_grid[0]:.3g}, {self.s_grid[-1]:.3g}])"

    def scaled(self, factor: float) -> "Desingularizer":
        """``factor * phi`` (still desingularizing when ``factor >= 1``)."""
        if self.kind == "power":
            return Desingularizer.power(self.c * factor, self.theta, self.domain_radius)
        return Desingularizer.table(self.s_grid, self.phi_values * factor)

    # ------------------------------------------------------------ domains
    @property
    def s_min(self) -> float:
        return 0.0 if self.kind == "power" else float(self.s_grid[0])

    @property
    def phi_max(self) -> float:
        """Upper end ``a`` of the domain of ``psi``."""
        if self.kind == "power":
            return self.c * self.domain_radius ** self.theta
        return float(self.phi_values[-1])

    def _check_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            bad = np.any(s <= 0.0) or np.any(s >= self.domain_radius)
        else:
            bad = np.any(s < self.s_grid[0]) or np.any(s > self.s_grid[-1])
        if bad or np.any(np.isnan(s)):
            raise DomainError(f"s outside the domain ({self.s_min}, {self.domain_radius})")
        return s

    def _check_y(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "power":
            bad = np.any(y <= 0.0) or np.any(y >= self.phi_max)
        else:
            bad = np.any(y < self.phi_values[0]) or np.any(y > self.phi_values[-1])
        if bad or np.any(np.isnan(y)):
            raise DomainError(f"value outside the domain of psi (0, {self.phi_max})")
        return y

    # ------------------------------------------------------------ calculus
    def phi(self, s):
        s = self._check_s(s)
        if self.kind == "power":
            return self.c * s ** self.theta
        return np.exp(self._logphi(np.log(s)))

    def phi_prime(self, s):
        s = self._check_s(s)
        if self.kind == "power":
            return self.c * self.theta * s ** (self.theta - 1)
        ls = np.log(s)
        return np.exp(self._logphi(ls)) / s * self._dlogphi(ls)

    def psi(self, y):
        """Inverse function ``phi^{-1}``."""
        y = self._check_y(y)
        if self.kind == "power":
            return (y / self.c) ** (1 / self.theta)
        return _vectorize(self._psi_table, y)

    def psi_prime(self, y):
        y = self._check_y(y)
        if self.kind == "power":
            return (1 / (self.theta * self.c ** (1 / self.theta))) * y ** (1 / self.theta - 1)
        return 1.0 / self.phi_prime(self.psi(y))

    def mu(self, s):
        """Antiderivative of ``phi'(s)**2`` (increasing in ``s``)."""
        s = self._check_s(s)
        if self.kind == "power":
            c, th = self.c, self.theta
            if th == 0.5:
                return c * c / 4 * np.log(s)
            return c * c * th * th * s ** (2 * th - 1) / (2 * th - 1)
        return _vectorize(self._mu_table, s)

    # ------------------------------------------------------------ table helpers
    def _psi_table(self, y):
        ly = math.log(y)
        lo, hi = math.log(self.s_grid[0]), math.log(self.s_grid[-1])
        root = brentq(lambda x: float(self._logphi(x)) - ly, lo, hi, xtol=1e-15, rtol=1e-15,
                      maxiter=200)
        return math.exp(root)

    def _mu_table(self, s):
        nodes = self._mu_nodes
        i = int(np.clip(np.searchsorted(self.s_grid, s) - 1, 0, self.s_grid.size - 2))
        return nodes[i] + _gauss_phi2(self, self.s_grid[i], s)


def _vectorize(fn, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return float(fn(float(x)))
    return np.array([fn(float(v)) for v in x.ravel()]).reshape(x.shape)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _gauss_phi2(d: Desingularizer, a: float, b: float) -> float:
    # Gauss-Legendre in log s (integrand phi'^2 * s is smooth there)
    if b == a:
        return 0.0
    la, lb = math.log(a), math.log(b)
    x = 0.5 * (lb - la) * _GL_X + 0.5 * (lb + la)
    s = np.exp(x)
    vals = np.exp(2 * d._logphi(x)) / s * d._dlogphi(x) ** 2
    return float(0.5 * (lb - la) * np.dot(_GL_W, vals))


def _mu_nodes(d: Desingularizer) -> np.ndarray:
    s = d.s_grid
    pieces = [_gauss_phi2(d, s[i], s[i + 1]) for i in range(s.size - 1)]
    return np.concatenate([[0.0], np.cumsum(pieces)])


# ---------------------------------------------------------------- worst case


@dataclass
class WorstCaseCurve:
    """Samples of the solution of ``g' + psi'(g) = 0, g(0) = gamma0``."""

    desingularizer: Desingularizer
    gamma0: float
    closed_form: Optional[str]
    t: np.ndarray
    gamma: np.ndarray

    def __call__(self, t):
        """Evaluate the curve at arbitrary ``t >= 0`` (closed form when available)."""
        if self.closed_form is not None:
            return _closed_form(self.desingularizer, self.gamma0, np.asarray(t, dtype=float))
        return self._dense(t)


def _closed_form(d: Desingularizer, g0: float, t):
    th, c = d.theta, d.c
    if th == 0.5:
        # psi'(s) = 2 s / c^2
        return g0 * np.exp(-2.0 * t / (c * c))
    e = (2 * th - 1) / th
    rate = (1 - 2 * th) / (th * th) * c ** (-1 / th)
    return (g0 ** e + rate * t) ** (1 / e)


def worst_case_curve(desing: Desingularizer, gamma0: float, t_grid,
                     rtol: float = 1e-11, atol: float = 1e-14) -> WorstCaseCurve:
    """Solve the one-dimensional worst-case gradient dynamics.

    Power-type desingularizers use the closed form; tabulated ones are
    integrated with the adaptive Runge-Kutta solver.  ``theta > 1/2`` is
    rejected because the worst-case curve then reaches zero in finite time.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise InputError("t_grid must be non-negative and non-decreasing")
    if not 0 < gamma0 < desing.phi_max:
        raise InputError(f"gamma0={gamma0} outside (0, {desing.phi_max})")
    if desing.kind == "power":
        if desing.theta > 0.5:
            raise CapabilityError("theta > 1/2 gives finite-time extinction, not supported")
        tag = "PowerHalf" if desing.theta == 0.5 else "PowerSubHalf"
        return WorstCaseCurve(desing, gamma0, tag, t_grid, _closed_form(desing, gamma0, t_grid))

    s_probe = np.geomspace(desing.s_grid[0] * (1 + 1e-9), desing.s_grid[-1] * (1 - 1e-9), 64)
    _, ok = check_sqrt_lower_bound(desing, s_probe)
    if not ok:
        raise CapabilityError("tabulated phi fails the sqrt(s) lower bound; curve may die out")
    y_floor = float(desing.phi_values[0])

    def rhs(t, y):
        return np.array([-float(desing.psi_prime(max(y[0], y_floor * (1 + 1e-12))))])

    def below_floor(tp, yp, fp, tn, yn, fn):
        return yn[0] <= y_floor

    t_end = float(t_grid[-1]) if t_grid.size else 0.0
    if t_end == 0.0:
        return WorstCaseCurve(desing, gamma0, None, t_grid, np.full(t_grid.shape, gamma0))
    sol = integrator.solve(rhs, [gamma0], t_end, rtol=rtol, atol=atol, t_eval=t_grid,
                           on_step=below_floor)
    if sol.stopped:
        raise DomainError(f"curve left the tabulated range before t={t_end}")
    curve = WorstCaseCurve(desing, gamma0, None, t_grid, sol(t_grid)[:, 0])
    object.__setattr__(curve, "_dense", lambda t: sol(t)[..., 0])
    return curve


# ---------------------------------------------------------------- checks


def check_sqrt_lower_bound(desing: Desingularizer, s_grid, beta_tol: float = 1e-9):
    """Check ``phi'(s) >= beta / sqrt(s)`` on a grid.

    Returns ``(beta_best, passed)`` with ``beta_best = min phi'(s) sqrt(s)``.
    For power type the verdict is the analytic one (``theta <= 1/2``).
    """
    s = np.asarray(s_grid, dtype=float)
    beta = float(np.min(desing.phi_prime(s) * np.sqrt(s)))
    if desing.kind == "power":
        return beta, desing.theta <= 0.5
    return beta, beta >= beta_tol


def estimate_lojasiewicz(pairs, window=DEFAULT_FIT_WINDOW, min_pairs: int = 10):
    """Fit ``log n = (1 - theta) log g + b`` over in-window pairs ``(g, n)``.

    Parameters
    ----------
    pairs : array_like, shape (m, 2)
        Samples of ``(|G(u) - G(u_inf)|, ||grad G(u)||)``.
    window : (float, float)
        Range of ``g`` used in the fit.

    Returns
    -------
    theta_hat, c_hat, residual
        Exponent, the constant making ``c theta g^(theta-1) n = 1`` on the
        fitted line, and the RMS residual of the fit in log space.
    """
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    g, n = arr[:, 0], arr[:, 1]
    lo, hi = window
    keep = (g >= lo) & (g <= hi) & (n > 0) & np.isfinite(g) & np.isfinite(n)
    if keep.sum() < min_pairs:
        raise InsufficientDataError(f"{int(keep.sum())} pairs in window {window}, need {min_pairs}")
    x, y = np.log(g[keep]), np.log(n[keep])
    (slope, intercept), *_ = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]), y, rcond=None)
    theta = 1.0 - slope
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    c_hat = 1.0 / (theta * math.exp(intercept)) if theta > 0 else math.nan
    return float(theta), float(c_hat), resid


def kl_products(spec, ubar, desing: "Desingularizer", pts) -> np.ndarray:
    """``phi'(|G(u) - G(ubar)|) * |grad G(u)|`` at the points where it is defined."""
    g0 = spec.value(ubar)
    out = []
    for u in pts:
        g = abs(spec.value(u) - g0)
        if g == 0.0 or g >= desing.domain_radius or g <= desing.s_min:
            continue
        out.append(float(desing.phi_prime(g)) * float(np.linalg.norm(spec.gradient(u))))
    return np.array(out)


def check_kl_inequality(spec, ubar, desing: Desingularizer, eta: float, budget: int = 4096,
                        seed: int | None = None, tol: float = 1e-6):
    """Sampled check of ``phi'(|G(u) - G(ubar)|) * ||grad G(u)|| >= 1`` on ``B(ubar, eta)``.

    Returns ``(margin, passed)`` where ``margin`` is the smallest product.
    """
    ubar = np.asarray(ubar, dtype=float)
    if np.linalg.norm(spec.gradient(ubar)) > CRITICAL_TOL:
        raise InputError("ubar is not a critical point")
    if not eta > 0:
        raise InputError("eta must be positive")
    dim = ubar.size
    pts = np.vstack([
        ball_points(budget, dim, eta * (1 - 1e-12), ubar, seed),
        axis_extremes(dim, eta * (1 - 1e-12), ubar)[1:],
        radial_ladder(dim, eta * (1 - 1e-12), ubar, seed=seed),
    ])
    prods = kl_products(spec, ubar, desing, pts)
    if prods.size == 0:
        raise DegenerateSampleError("G is constant on every sample: trivial critical point")
    margin = float(prods.min())
    return margin, margin >= 1.0 - tol
