"""Explicit Dormand-Prince 5(4) integrator with PI step-size control.

The fifth-order solution is propagated (local extrapolation); the embedded
fourth-order solution only drives the error estimate.  Dense output between
accepted steps is cubic Hermite on the stored states and derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import IntegrationError

# Butcher tableau (Dormand & Prince 1980)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
# PI controller exponents for an order-4 error estimate
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5


def hermite(t, t0, t1, y0, y1, f0, f1):
    """Cubic Hermite interpolant on ``[t0, t1]`` evaluated at ``t``."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


@dataclass
class Solution:
    """Raw integrator output: accepted (and dense) nodes with derivatives."""

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    stopped: bool
    n_steps: int
    n_rejected: int
    n_fev: int

    def __call__(self, t):
        """Hermite interpolation at scalar or array ``t`` inside the horizon."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        idx = np.clip(np.searchsorted(self.t, tt, side="right") - 1, 0, len(self.t) - 2)
        out = np.empty((tt.size, self.y.shape[1]))
        for j, (tj, i) in enumerate(zip(tt, idx)):
            if tj == self.t[i]:
                out[j] = self.y[i]
            else:
                out[j] = hermite(tj, self.t[i], self.t[i + 1], self.y[i], self.y[i + 1],
                                 self.f[i], self.f[i + 1])
        return out[0] if scalar else out


def _error_norm(err, y, y_new, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(fun, t0, y0, f0, atol, rtol, t_span):
    scale = atol + np.abs(y0) * rtol
    with np.errstate(over="ignore", invalid="ignore"):
        return _initial_step_scaled(fun, t0, y0, f0, scale, t_span)


def _initial_step_scaled(fun, t0, y0, f0, scale, t_span):
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    h = min(100 * h0, h1, t_span)
    # tolerances near the underflow range make the scaled norms overflow
    return h if np.isfinite(h) and h > 0 else min(1e-6, t_span)


def solve(fun: Callable[[float, np.ndarray], np.ndarray], y0, t_max: float,
          rtol: float = 1e-9, atol: float = 1e-9, t_eval=None,
          on_step: Optional[Callable] = None, max_steps: int = 2_000_000,
          underflow: float = 1e-14) -> Solution:
    """Integrate ``y' = fun(t, y)`` from ``t = 0`` to ``t_max``.

    Parameters
    ----------
    fun : callable
        Right-hand side, ``fun(t, y) -> dy/dt``.
    y0 : array_like
        Initial state.
    t_max : float
        Final time.
    rtol, atol : float
        Relative and absolute tolerances of the local error test.
    t_eval : array_like, optional
        Extra output times, filled in by Hermite interpolation.
    on_step : callable, optional
        ``on_step(t_prev, y_prev, f_prev, t, y, f) -> bool`` called after each
        accepted step; a truthy return stops the integration.
    underflow : float
        Integration fails when the step drops below ``underflow * t_max``.

    Raises
    ------
    IntegrationError
        On step-size underflow; ``partial`` carries the solution so far.
    """
    y = np.array(y0, dtype=float)
    t = 0.0
    f = np.asarray(fun(t, y), dtype=float)
    n_fev = 1
    ts, ys, fs = [t], [y.copy()], [f.copy()]
    pending = np.sort(np.unique(np.asarray(t_eval, dtype=float))) if t_eval is not None else np.empty(0)
    pending = pending[(pending > 0.0) & (pending <= t_max)]
    p_idx = 0

    h = _initial_step(fun, t, y, f, atol, rtol, t_max)
    n_fev += 1
    h_min = underflow * t_max
    err_prev = 1e-4
    n_steps = n_rejected = 0
    stopped = False
    k = np.empty((7, y.size))

    def partial():
        return Solution(np.array(ts), np.array(ys), np.array(fs), True, n_steps, n_rejected, n_fev)

    while t < t_max:
        if n_steps >= max_steps:
            raise IntegrationError(f"step budget {max_steps} exhausted at t={t:.6g}", partial())
        h = min(h, t_max - t)
        rejected = False
        while True:
            if h < h_min and t + h < t_max:
                raise IntegrationError(f"step size underflow (h={h:.3e}) at t={t:.6g}", partial())
            k[0] = f
            for s in range(1, 7):
                dy = np.dot(_A[s], k[:s]) if s else 0.0
                k[s] = fun(t + _C[s] * h, y + h * dy)
            n_fev += 6
            y_new = y + h * np.dot(_B5, k)
            err = h * np.dot(_E, k)
            en = _error_norm(err, y, y_new, atol, rtol)
            if not np.isfinite(en):
                h *= MIN_FACTOR
                rejected = True
                n_rejected += 1
                continue
            if en <= 1.0:
                break
            h *= max(MIN_FACTOR, SAFETY * en ** (-1 / 5))
            rejected = True
            n_rejected += 1

        t_new = t + h
        f_new = k[6].copy()
        # dense outputs strictly inside the step
        while p_idx < len(pending) and pending[p_idx] < t_new:
            te = pending[p_idx]
            if te > t:
                ye = hermite(te, t, t_new, y, y_new, f, f_new)
                ts.append(te)
                ys.append(ye)
                fs.append(np.asarray(fun(te, ye), dtype=float))
                n_fev += 1
            p_idx += 1
        if p_idx < len(pending) and pending[p_idx] == t_new:
            p_idx += 1
        t_prev, y_prev, f_prev = t, y, f
        t, y, f = t_new, y_new, f_new
        ts.append(t)
        ys.append(y.copy())
        fs.append(f.copy())
        n_steps += 1

        if on_step is not None and on_step(t_prev, y_prev, f_prev, t, y, f):
            stopped = True
            break

        en = max(en, 1e-10)
        if rejected:
            factor = min(1.0, SAFETY * en ** (-_ALPHA) * err_prev ** _BETA)
        else:
            factor = SAFETY * en ** (-_ALPHA) * err_prev ** _BETA
        h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))
        err_prev = en

    return Solution(np.array(ts), np.array(ys), np.array(fs), stopped, n_steps, n_rejected, n_fev)
