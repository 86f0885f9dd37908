"""Deformed energies and quasi-gradient angle certificates for damped systems.

For ``lambda >= 0`` the deformed energy is
``E_lam(u, v) = G(u) + |v|^2 / 2 + lam <grad G(u), v>``; ``lam = 0`` is the
total energy.  For small positive ``lam`` its gradient makes a uniformly
acute angle with the phase-space field ``F(u, v) = (-v, gamma v + grad G(u))``
on bounded sets, which is certified here both algebraically and by sampling.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dynamics import PhaseState
from .errors import CapabilityError, InputError
from .potential import PotentialSpec, hessian_bound
from .sampling import phase_ball_points

EPS0 = 1e-12
REST_TOL = 1e-10


@dataclass(frozen=True)
class DeformedEnergy:
    spec: PotentialSpec
    gamma: float
    lam: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError(f"gamma must be positive, got {self.gamma}")
        if not self.lam >= 0:
            raise InputError(f"lambda must be non-negative, got {self.lam}")
        if self.lam > 0:
            self.spec.require_hessian()

    def value(self, u, v) -> float:
        g = self.spec.gradient(u)
        return float(self.spec.value(u)) + 0.5 * float(v @ v) + self.lam * float(g @ v)

    def gradient(self, u, v) -> np.ndarray:
        g = np.asarray(self.spec.gradient(u), dtype=float)
        gu = g if self.lam == 0 else g + self.lam * (self.spec.hessian(u) @ v)
        return np.concatenate([gu, v + self.lam * g])

    def field(self, u, v) -> np.ndarray:
        """``F(u, v) = (-v, gamma v + grad G(u))``."""
        return np.concatenate([-v, self.gamma * v + self.spec.gradient(u)])


def energy_value_and_gradient(de: DeformedEnergy, state: PhaseState):
    """Value and phase-space gradient of the deformed energy at ``state``."""
    if state.dimension != de.spec.dimension:
        raise InputError("state dimension does not match the potential")
    if de.lam > 0 and not de.spec.has_hessian:
        raise CapabilityError("lambda > 0 needs the Hessian of G")
    return de.value(state.u, state.v), de.gradient(state.u, state.v)


def as_potential(de: DeformedEnergy) -> PotentialSpec:
    """The deformed energy as a potential on the 2N-dimensional phase space."""
    n = de.spec.dimension
    ubar = de.spec.known_critical_point
    return PotentialSpec(
        dimension=2 * n,
        value=lambda x: de.value(x[:n], x[n:]),
        gradient=lambda x: de.gradient(x[:n], x[n:]),
        known_critical_point=None if ubar is None else np.concatenate([ubar, np.zeros(n)]),
        name=f"deformed_{de.spec.name}",
        params={"gamma": de.gamma, "lambda": de.lam},
    )


# ---------------------------------------------------------------- admissibility constants


def lambda_zero(gamma: float, M: float) -> float:
    """``gamma / (2 (M + gamma^2/2 + eps0))``: half the largest admissible lambda."""
    if not gamma > 0 or not M >= 0:
        raise InputError("need gamma > 0 and M >= 0")
    return gamma / (2.0 * (M + 0.5 * gamma * gamma + EPS0))


def lambda_one(M: float) -> float:
    """``min{1/4, 1/(2(M^2 + 1))}``, below which ``|grad E_lam|^2 >= (|v|^2 + |grad G|^2)/2``."""
    return min(0.25, 1.0 / (2.0 * (M * M + 1.0)))


def lambda_star(gamma: float, M: float) -> float:
    """Midpoint choice ``min{lambda_0, lambda_1} / 2``."""
    return 0.5 * min(lambda_zero(gamma, M), lambda_one(M))


def alpha_quadratic_bound(gamma: float, M: float, lam: float) -> float:
    """``min{gamma - (M + gamma^2/2) lam, lam/2}`` for ``0 < lam < lambda_0``."""
    if not 0 < lam < lambda_zero(gamma, M):
        raise InputError(f"lambda={lam} outside (0, {lambda_zero(gamma, M)})")
    return min(gamma - (M + 0.5 * gamma * gamma) * lam, 0.5 * lam)


def norm_product_constant(gamma: float, M: float, lam: float) -> float:
    """``C`` with ``|grad E_lam| |F| <= C (|v|^2 + |grad G|^2)`` on the ball."""
    return max((3.0 + 2.0 * lam * lam * M * M + 2.0 * gamma * gamma) / 2.0, 2.0 + lam * lam)


def k1_constant(M: float, lam: float) -> float:
    """``|grad E_lam|^2 <= k1 (|v|^2 + |grad G|^2)``."""
    return 2.0 + 2.0 * lam * lam * max(1.0, M * M)


def k2_constant(gamma: float) -> float:
    """``|F|^2 >= k2 (|v|^2 + |grad G|^2)``."""
    return min(0.5, 1.0 / (1.0 + 2.0 * gamma * gamma))


# ---------------------------------------------------------------- sampling


@dataclass
class AngleSamples:
    """Per-sample quantities on the phase-space ball."""

    u: np.ndarray
    v: np.ndarray
    inner: np.ndarray          # <grad E_lam, F>
    grad_norm: np.ndarray      # |grad E_lam|
    field_norm: np.ndarray     # |F|
    v_sq: np.ndarray
    g_sq: np.ndarray           # |grad G(u)|^2

    @property
    def cosine(self) -> np.ndarray:
        active = (self.grad_norm > REST_TOL) & (self.field_norm > REST_TOL)
        out = np.full(self.inner.shape, np.nan)
        out[active] = self.inner[active] / (self.grad_norm[active] * self.field_norm[active])
        return out

    @property
    def rest_equivalent(self) -> bool:
        return bool(np.all((self.grad_norm <= REST_TOL) == (self.field_norm <= REST_TOL)))


def phase_samples(dim: int, R: float, budget: int, seed: Optional[int] = None):
    """``budget`` phase-space points on ``B(0,R) x B(0,R)``.

    A tenth of them have ``v = 0`` and a tenth ``u = 0`` (the places where the
    total energy degenerates), and the origin is always included.
    """
    if budget < 10:
        raise InputError("budget must be at least 10")
    n_edge = budget // 10
    n_bulk = budget - 2 * n_edge - 1
    u, v = phase_ball_points(n_bulk + 2 * n_edge, dim, R, seed=seed)
    u_b, v_b = u[:n_bulk], v[:n_bulk]
    u0 = u[n_bulk:n_bulk + n_edge]
    v0 = v[n_bulk + n_edge:]
    zeros = np.zeros((n_edge, dim))
    U = np.vstack([u_b, u0, zeros, np.zeros((1, dim))])
    V = np.vstack([v_b, zeros, v0, np.zeros((1, dim))])
    return U, V


def sample_angle(de: DeformedEnergy, R: float, budget: int, seed: Optional[int] = None) -> AngleSamples:
    """Evaluate ``<grad E_lam, F>``, ``|grad E_lam|`` and ``|F|`` on phase-space samples."""
    U, V = phase_samples(de.spec.dimension, R, budget, seed)
    m = len(U)
    inner, gn, fn, v2, g2 = (np.empty(m) for _ in range(5))
    for i, (u, v) in enumerate(zip(U, V)):
        grad = de.gradient(u, v)
        F = de.field(u, v)
        g = de.spec.gradient(u)
        inner[i] = grad @ F
        gn[i] = np.linalg.norm(grad)
        fn[i] = np.linalg.norm(F)
        v2[i] = v @ v
        g2[i] = g @ g
    return AngleSamples(U, V, inner, gn, fn, v2, g2)


@dataclass(frozen=True)
class AngleCertificate:
    R: float
    lam: float
    gamma: float
    M: float
    C: float
    alpha0: float
    alpha_certified: float
    alpha_sampled: float
    sample_count: int
    rest_point_equivalence_checked: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["lambda_zero"] = lambda_zero(self.gamma, self.M)
        d["lambda_one"] = lambda_one(self.M)
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def certify_quasigradient(de: DeformedEnergy, R: float, budget: int = 10_000,
                          seed: Optional[int] = None, M: Optional[float] = None,
                          allow_zero: bool = False) -> AngleCertificate:
    """Certify the angle condition for ``E_lam`` and ``F`` on ``B(0,R) x B(0,R)``.

    ``alpha_certified = alpha_0 / C`` is the algebraic bound and
    ``alpha_sampled`` the smallest sampled cosine.  With ``allow_zero`` the
    degenerate ``lam = 0`` case is sampled and reported with
    ``alpha_certified = 0`` instead of being rejected.
    """
    if not R > 0:
        raise InputError("R must be positive")
    if M is None:
        M = hessian_bound(de.spec, R, seed=seed)[0]
    if de.lam == 0 and allow_zero:
        alpha0 = 0.0
    else:
        alpha0 = alpha_quadratic_bound(de.gamma, M, de.lam)
    C = norm_product_constant(de.gamma, M, de.lam)
    samples = sample_angle(de, R, budget, seed)
    cos = samples.cosine
    alpha_sampled = float(np.nanmin(cos)) if np.any(np.isfinite(cos)) else math.nan
    return AngleCertificate(
        R=float(R), lam=float(de.lam), gamma=float(de.gamma), M=float(M), C=C, alpha0=alpha0,
        alpha_certified=alpha0 / C, alpha_sampled=alpha_sampled,
        sample_count=len(samples.u), rest_point_equivalence_checked=samples.rest_equivalent,
    )


@dataclass(frozen=True)
class AsfastBound:
    b_sampled: float
    b_algebraic: float
    k1: float
    k2: float

    @property
    def b(self) -> float:
        return max(self.b_sampled, self.b_algebraic)


def asfast_bound(de: DeformedEnergy, R: float, budget: int = 10_000, seed: Optional[int] = None,
                 M: Optional[float] = None) -> AsfastBound:
    """Bound ``b`` with ``|grad E_lam| <= b |F|`` on the phase-space ball."""
    if M is None:
        M = hessian_bound(de.spec, R, seed=seed)[0] if de.spec.has_hessian else 0.0
    if de.lam > 0:
        alpha_quadratic_bound(de.gamma, M, de.lam)
    s = sample_angle(de, R, budget, seed)
    keep = s.field_norm > 1e-12
    b_sampled = float(np.max(s.grad_norm[keep] / s.field_norm[keep])) if keep.any() else 0.0
    k1, k2 = k1_constant(M, de.lam), k2_constant(de.gamma)
    return AsfastBound(b_sampled, math.sqrt(k1 / k2), k1, k2)
