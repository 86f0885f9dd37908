"""Potentials ``G`` on R^N with gradient and Hessian, and a small catalog.

Catalog names (usable from config files): ``quadratic``, ``saddle``,
``power``, ``radial``, ``convex_growth``, ``nonsmooth_32``,
``neg_quadratic`` and ``flat_exp``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .desingularize import Desingularizer
from .errors import CapabilityError, InputError
from .sampling import axis_extremes, ball_points, radial_ladder

CRITICAL_TOL = 1e-10


@dataclass(frozen=True)
class PotentialSpec:
    """Immutable description of a potential.

    ``hessian`` is None for potentials that are only C^1; operations needing
    second derivatives reject such specs with :class:`CapabilityError`.
    """

    dimension: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    known_critical_point: Optional[np.ndarray] = None
    known_desingularizer: Optional[Desingularizer] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def has_hessian(self) -> bool:
        return self.hessian is not None

    def require_hessian(self):
        if self.hessian is None:
            raise CapabilityError(f"potential {self.name!r} has no Hessian (C^1 only)")


@dataclass(frozen=True)
class PotentialCatalogEntry:
    name: str
    spec: PotentialSpec
    family_params: dict


def _point(spec: PotentialSpec, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (spec.dimension,):
        raise InputError(f"expected a point of dimension {spec.dimension}, got shape {u.shape}")
    return u


def evaluate(spec: PotentialSpec, u):
    """Return ``(G(u), grad G(u), hess G(u))``; the Hessian is None when unavailable."""
    u = _point(spec, u)
    hess = np.asarray(spec.hessian(u), dtype=float) if spec.hessian is not None else None
    return float(spec.value(u)), np.asarray(spec.gradient(u), dtype=float), hess


# ---------------------------------------------------------------- catalog builders


def quadratic(A) -> PotentialSpec:
    """``G(u) = 1/2 <A u, u>`` for a symmetric matrix ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=0, rtol=0):
        raise InputError("quadratic potential needs a square symmetric matrix")
    eig = np.linalg.eigvalsh(A)
    nonzero = np.abs(eig[np.abs(eig) > 1e-14])
    desing = None
    if nonzero.size:
        # ||A u||^2 >= |lambda_min| * |<A u, u>| so phi(s) = sqrt(2 s / |lambda_min|) works
        desing = Desingularizer.power(math.sqrt(2.0 / nonzero.min()), 0.5)
    return PotentialSpec(
        dimension=A.shape[0],
        value=lambda u: 0.5 * float(u @ A @ u),
        gradient=lambda u: A @ u,
        hessian=lambda u: A.copy(),
        known_critical_point=np.zeros(A.shape[0]),
        known_desingularizer=desing,
        name="quadratic",
        params={"A": A.tolist()},
    )


def saddle() -> PotentialSpec:
    """``G(u1, u2) = u1^2 - u2^2``."""
    H = np.diag([2.0, -2.0])
    return PotentialSpec(
        dimension=2,
        value=lambda u: float(u[0] ** 2 - u[1] ** 2),
        gradient=lambda u: np.array([2 * u[0], -2 * u[1]]),
        hessian=lambda u: H.copy(),
        known_critical_point=np.zeros(2),
        known_desingularizer=Desingularizer.power(1.0, 0.5),
        name="saddle",
        params={},
    )


def neg_quadratic(N: int = 1) -> PotentialSpec:
    """``G(u) = -1/2 ||u||^2`` (every non-rest trajectory escapes)."""
    spec = quadratic(-np.eye(int(N)))
    return replace(spec, name="neg_quadratic", params={"N": int(N)})


def _radial_power(N: int, k: float, scale: float = 1.0, center=None):
    """Value/gradient/Hessian of ``scale * ||u - center||^k`` for ``k >= 2``."""
    center = np.zeros(N) if center is None else np.asarray(center, dtype=float)
    eye = np.eye(N)

    def value(u):
        return scale * float(np.linalg.norm(u - center)) ** k

    def gradient(u):
        w = u - center
        r = np.linalg.norm(w)
        if r == 0.0:
            return np.zeros(N)
        return scale * k * r ** (k - 2) * w

    def hessian(u):
        w = u - center
        r = np.linalg.norm(w)
        if r == 0.0:
            return scale * 2.0 * eye if k == 2 else np.zeros((N, N))
        return scale * k * (r ** (k - 2) * eye + (k - 2) * r ** (k - 4) * np.outer(w, w))

    return value, gradient, hessian, center


def power(p: float = 2, N: int = 1) -> PotentialSpec:
    """``G(u) = ||u||^(2p)``, Lojasiewicz exponent ``1/(2p)``."""
    p = float(p)
    if p < 1:
        raise InputError("power potential needs p >= 1 to be C^2")
    value, gradient, hessian, center = _radial_power(int(N), 2 * p)
    return PotentialSpec(int(N), value, gradient, hessian, center,
                         Desingularizer.power(1.0, 1 / (2 * p)), "power", {"p": p, "N": int(N)})


def convex_growth(r: float = 4.0, C: float = 1.0, N: int = 1) -> PotentialSpec:
    """``G(u) = C ||u||^r`` with ``r >= 2``: convex with growth of order ``r``.

    Desingularized by ``phi(s) = (s / C)^(1/r)``.
    """
    r, C = float(r), float(C)
    if r < 2 or C <= 0:
        raise InputError("convex_growth needs r >= 2 (C^2) and C > 0")
    value, gradient, hessian, center = _radial_power(int(N), r, C)
    return PotentialSpec(int(N), value, gradient, hessian, center,
                         Desingularizer.power(C ** (-1 / r), 1 / r), "convex_growth",
                         {"r": r, "C": C, "N": int(N)})


def radial(c: float = 1.0, theta: float = 1 / 3, N: int = 2, center=None) -> PotentialSpec:
    """``E(u) = psi(||u - center||)`` where ``psi`` inverts ``phi(s) = c s^theta``.

    Gradient flow of this potential moves radially and its distance to the
    centre follows the worst-case curve of ``phi`` exactly.
    """
    if not 0 < theta <= 0.5:
        raise InputError("radial potentials need theta in (0, 1/2]")
    k = 1.0 / theta
    value, gradient, hessian, center = _radial_power(int(N), k, c ** (-k), center)
    return PotentialSpec(int(N), value, gradient, hessian, center,
                         Desingularizer.power(c, theta), "radial",
                         {"c": float(c), "theta": float(theta), "N": int(N),
                          "center": center.tolist()})


def nonsmooth_32() -> PotentialSpec:
    """``G(u) = |u|^(3/2)`` in 1D: C^1 but not C^2, so no Hessian."""
    return PotentialSpec(
        dimension=1,
        value=lambda u: float(abs(u[0]) ** 1.5),
        gradient=lambda u: np.array([1.5 * np.sign(u[0]) * abs(u[0]) ** 0.5]),
        hessian=None,
        known_critical_point=np.zeros(1),
        known_desingularizer=Desingularizer.power(1.0, 2 / 3),
        name="nonsmooth_32",
        params={},
    )


def flat_exp() -> PotentialSpec:
    """``G(u) = exp(-1/u^2)`` extended by 0 at the origin (1D, flat critical point)."""

    def value(u):
        x = u[0]
        return 0.0 if x == 0 else math.exp(-1.0 / (x * x))

    def gradient(u):
        x = u[0]
        return np.array([0.0 if x == 0 else 2.0 * x ** -3 * math.exp(-1.0 / (x * x))])

    def hessian(u):
        x = u[0]
        if x == 0:
            return np.zeros((1, 1))
        return np.array([[(4.0 * x ** -6 - 6.0 * x ** -4) * math.exp(-1.0 / (x * x))]])

    return PotentialSpec(1, value, gradient, hessian, np.zeros(1), None, "flat_exp", {})


CATALOG = {
    "quadratic": quadratic,
    "saddle": saddle,
    "power": power,
    "radial": radial,
    "convex_growth": convex_growth,
    "nonsmooth_32": nonsmooth_32,
    "neg_quadratic": neg_quadratic,
    "flat_exp": flat_exp,
}

DEFAULT_PARAMS = {
    "quadratic": {"A": [[1.0, 0.0], [0.0, 1.0]]},
    "power": {"p": 2, "N": 1},
    "radial": {"c": 1.0, "theta": 1 / 3, "N": 2},
    "convex_growth": {"r": 4.0, "C": 1.0, "N": 1},
    "neg_quadratic": {"N": 1},
}


def catalog_entry(name: str, **params) -> PotentialCatalogEntry:
    """Build a catalog potential by name; missing parameters take defaults."""
    if name not in CATALOG:
        raise InputError(f"unknown potential {name!r}; known: {sorted(CATALOG)}")
    merged = {**DEFAULT_PARAMS.get(name, {}), **params}
    try:
        spec = CATALOG[name](**merged)
    except TypeError as exc:
        raise InputError(f"bad parameters for potential {name!r}: {exc}") from None
    return PotentialCatalogEntry(name, spec, merged)


def from_name(name: str, **params) -> PotentialSpec:
    return catalog_entry(name, **params).spec


# ---------------------------------------------------------------- derivative checks


def _fd_gradient(f, u, h):
    g = np.empty(u.size)
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


def _fd_jacobian(grad, u, h):
    J = np.empty((u.size, u.size))
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = h
        J[:, i] = (grad(u + e) - grad(u - e)) / (2 * h)
    return J


def _rel_err(analytic, numeric):
    # relative to the finite-difference reference so a x2 sabotage reads as 1.0
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    ref = np.linalg.norm(np.ravel(numeric))
    if diff == 0.0:
        return 0.0
    return float(diff / max(ref, 1e-8))


def check_derivatives(spec: PotentialSpec, samples, tol: float = 1e-5) -> dict:
    """Compare analytic derivatives with central finite differences.

    The step at ``u`` is ``1e-5 * (1 + ||u||)``.  Non-finite values are
    flagged in the report instead of raising.
    """
    samples = [np.atleast_1d(np.asarray(s, dtype=float)) for s in samples]
    if not samples:
        raise InputError("need at least one sample")
    if not tol > 0:
        raise InputError("tol must be positive")
    rows = []
    for u in samples:
        u = _point(spec, u)
        h = 1e-5 * (1 + np.linalg.norm(u))
        row = {"point": u.tolist(), "grad_rel_err": math.nan, "hess_rel_err": math.nan,
               "finite": True, "passed": False}
        try:
            g = np.asarray(spec.gradient(u), dtype=float)
            g_fd = _fd_gradient(spec.value, u, h)
            row["grad_rel_err"] = _rel_err(g, g_fd)
            errs = [row["grad_rel_err"]]
            if spec.hessian is not None:
                H = np.asarray(spec.hessian(u), dtype=float)
                row["hess_rel_err"] = _rel_err(H, _fd_jacobian(spec.gradient, u, h))
                errs.append(row["hess_rel_err"])
            if not all(np.isfinite(errs)) or not np.isfinite(spec.value(u)):
                row["finite"] = False
            else:
                row["passed"] = max(errs) <= tol
        except (FloatingPointError, OverflowError, ZeroDivisionError, ValueError):
            row["finite"] = False
        rows.append(row)
    max_err = max((max(r["grad_rel_err"], 0 if math.isnan(r["hess_rel_err"]) else r["hess_rel_err"])
                   for r in rows if r["finite"]), default=math.nan)
    return {"samples": rows, "max_rel_err": max_err, "passed": all(r["passed"] for r in rows)}


# ---------------------------------------------------------------- sampled bounds


def hessian_bound(spec: PotentialSpec, R: float, budget: int = 2048, center=None,
                  seed: int | None = None):
    """Sampled estimate of ``max ||hess G(u)||_2`` over the closed ball ``B(center, R)``.

    Evaluates ``budget`` low-discrepancy points plus the centre and the
    axis-extreme points; the result is a lower bound of the true maximum.
    Returns ``(M, n_evaluated)``.
    """
    if budget <= 0:
        raise InputError("budget must be a positive integer")
    if not R > 0:
        raise InputError("R must be positive")
    spec.require_hessian()
    pts = np.vstack([axis_extremes(spec.dimension, R, center),
                     ball_points(budget, spec.dimension, R, center, seed)])
    M = max(float(np.linalg.norm(spec.hessian(u), 2)) for u in pts)
    return M, len(pts)


def check_value_gradient_bound(spec: PotentialSpec, ubar, eps: float, budget: int = 2048,
                               threshold: float = 1e-6, seed: int | None = None,
                               polish: int = 8):
    """Smallest sampled ``|G(u) - G(ubar)| / ||grad G(u)||^2`` on ``B(ubar, eps)``.

    Space-filling samples are complemented by rays shrinking towards ``ubar``
    and a local polish of the ``polish`` best candidates, so that ratios
    degenerating only near ``ubar`` or along curves are detected.
    Returns ``(c_best, passed)`` with ``passed = c_best >= threshold``.
    """
    ubar = _point(spec, ubar)
    if np.linalg.norm(spec.gradient(ubar)) > CRITICAL_TOL:
        raise InputError("ubar is not a critical point of the potential")
    if not eps > 0:
        raise InputError("eps must be positive")
    g0 = spec.value(ubar)
    r_in = eps * (1 - 1e-9)

    def ratio(u):
        gn = float(np.linalg.norm(spec.gradient(u)))
        if gn == 0.0 or not np.isfinite(gn):
            return math.inf
        return abs(spec.value(u) - g0) / (gn * gn)

    pts = np.vstack([ball_points(budget, spec.dimension, r_in, ubar, seed),
                     radial_ladder(spec.dimension, r_in, ubar, seed=seed)])
    vals = np.array([ratio(u) for u in pts])
    best = float(np.min(vals))

    def inside(x):
        d = x - ubar
        n = np.linalg.norm(d)
        return x if n <= r_in else ubar + d * (r_in / n)

    for i in np.argsort(vals)[:polish]:
        res = minimize(lambda x: ratio(inside(x)), pts[i], method="Nelder-Mead",
                       options={"xatol": 1e-14, "fatol": 1e-16, "maxiter": 400 * spec.dimension})
        best = min(best, float(res.fun))
    passed = bool(np.isfinite(best) and best >= threshold)
    return best, passed
