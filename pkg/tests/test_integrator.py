import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kldyn import integrator
from kldyn.errors import IntegrationError


def linear_rhs(t, y):
    return np.array([y[1], -3 * y[1] - 2 * y[0]])


def test_linear_oracle():
    t = np.linspace(0, 10, 201)
    sol = integrator.solve(linear_rhs, [1.0, 0.0], 10.0, rtol=1e-12, atol=1e-12, t_eval=t)
    u = sol(t)[:, 0]
    exact = 2 * np.exp(-t) - np.exp(-2 * t)
    assert np.max(np.abs(u - exact) / np.abs(exact)) < 1e-6


def test_matches_scipy_on_nonlinear():
    def pend(t, y):
        return np.array([y[1], -0.2 * y[1] - np.sin(y[0])])

    t = np.linspace(0, 20, 41)
    ours = integrator.solve(pend, [2.0, 0.0], 20.0, rtol=1e-10, atol=1e-12, t_eval=t)(t)
    ref = solve_ivp(pend, (0, 20), [2.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14,
                    t_eval=t).y.T
    assert np.max(np.abs(ours - ref)) < 1e-7


def test_grid_contains_eval_points_and_endpoints():
    t_eval = [0.5, 1.25, 3.0]
    sol = integrator.solve(linear_rhs, [1.0, 0.0], 3.0, t_eval=t_eval)
    assert sol.t[0] == 0.0 and sol.t[-1] == 3.0
    for t in t_eval:
        assert np.any(sol.t == t)
    assert np.all(np.diff(sol.t) > 0)


def test_hermite_reproduces_cubic():
    f = lambda t: t ** 3 - 2 * t
    df = lambda t: 3 * t ** 2 - 2
    for t in np.linspace(0.3, 1.7, 9):
        y = integrator.hermite(t, 0.3, 1.7, np.array([f(0.3)]), np.array([f(1.7)]),
                               np.array([df(0.3)]), np.array([df(1.7)]))
        assert y[0] == pytest.approx(f(t), abs=1e-13)


def test_on_step_stops_integration():
    sol = integrator.solve(linear_rhs, [1.0, 0.0], 100.0,
                           on_step=lambda tp, yp, fp, tn, yn, fn: tn > 2.0)
    assert sol.stopped
    assert 2.0 < sol.t[-1] < 100.0


def test_underflow_carries_partial():
    # blow-up at t = 1 forces the step size to collapse
    with pytest.raises(IntegrationError) as info:
        integrator.solve(lambda t, y: y ** 2, [1.0], 2.0)
    part = info.value.partial
    assert part is not None and 0.9 < part.t[-1] < 1.0


def test_tolerance_below_float_range_fails_fast_instead_of_looping():
    rhs = lambda t, y: np.array([y[1], -y[1] - y[0]])
    with pytest.raises(IntegrationError, match="underflow") as exc:
        integrator.solve(rhs, [1.0, 0.5], 1e4, rtol=1e-300, atol=1e-300)
    assert exc.value.partial is not None
