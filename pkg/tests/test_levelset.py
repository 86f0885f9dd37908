import math

import numpy as np
import pytest

from kldyn import levelset as L
from kldyn import potential as P
from kldyn.errors import CapabilityError, InputError, InsufficientDataError, LevelNotReachedError


def test_one_dimensional_quadratic():
    pt = L.minimize_on_level(P.quadratic(np.eye(1)), [0.0], 0.02)
    assert abs(pt.u[0]) == pytest.approx(0.2)
    assert pt.psi == pytest.approx(0.02)
    assert pt.multiplier == pytest.approx(1.0)


def test_saddle_minimizer():
    pt = L.minimize_on_level(P.saddle(), [0.0, 0.0], 0.01)
    np.testing.assert_allclose(np.abs(pt.u), [0.1, 0.0], atol=1e-8)
    assert pt.psi == pytest.approx(0.02, rel=1e-9)
    assert pt.multiplier == pytest.approx(2.0)


def test_nonsmooth_level_without_hessian():
    pt = L.minimize_on_level(P.nonsmooth_32(), [0.0], 1e-6)
    assert pt.psi == pytest.approx(1.125e-4, rel=1e-9)
    assert pt.psi / 1e-6 == pytest.approx(112.5, rel=1e-9)
    assert math.isnan(pt.multiplier) and not pt.multiplier_available
    fd = L.minimize_on_level(P.nonsmooth_32(), [0.0], 1e-6, fd_multiplier=True)
    # G'' = (3/4) |u|^(-1/2) with |u| = 1e-4
    assert fd.multiplier == pytest.approx(75.0, rel=1e-3)


def test_errors():
    with pytest.raises(InputError):
        L.minimize_on_level(P.quadratic(np.eye(1)), [0.0], -1.0)
    with pytest.raises(InputError):
        L.minimize_on_level(P.quadratic(np.eye(1)), [0.5], 0.1)
    with pytest.raises(LevelNotReachedError):
        L.minimize_on_level(P.neg_quadratic(2), [0.0, 0.0], 0.1)
    with pytest.raises(CapabilityError):
        L.minimize_on_level(P.quadratic(np.eye(9)), np.zeros(9), 0.1)


def test_quadratic_profile_ratio_is_smallest_eigenvalue():
    spec = P.quadratic(np.diag([1.0, 3.0]))
    prof = L.psi_profile(spec, [0.0, 0.0], (1e-2, 1e-8))
    np.testing.assert_allclose(prof.ratios, 1.0, rtol=1e-6)
    assert prof.bounded and np.all(prof.multipliers <= 3 + 1e-6)
    assert np.all(np.diff(prof.r_grid) < 0)


def test_nonsmooth_profile_unbounded():
    prof = L.psi_profile(P.nonsmooth_32(), [0.0], (1e-2, 1e-6), points_per_decade=1)
    # ratio = 1.125 r^(-1/3): 10^(4/3) growth over four decades
    assert prof.ratios[-1] / prof.ratios[0] == pytest.approx(10 ** (4 / 3), rel=1e-9)
    assert not prof.bounded and prof.verdict == "unbounded"


def test_quartic_profile():
    prof = L.psi_profile(P.power(p=2, N=2), [0.0, 0.0], (1e-2, 1e-6))
    np.testing.assert_allclose(prof.psi_values, 8 * prof.r_grid ** 1.5, rtol=1e-8)
    assert prof.bounded


def test_profile_invariants():
    spec = P.quadratic(np.array([[2.0, 0.7], [0.7, 1.0]]))
    prof = L.psi_profile(spec, [0.0, 0.0], (1e-1, 1e-5))
    M = np.linalg.eigvalsh(spec.hessian(np.zeros(2))).max()
    for r, u, psi, lam in zip(prof.r_grid, prof.minimizers, prof.psi_values, prof.multipliers):
        assert abs(spec.value(u) - r) <= 1e-9 * (1 + r)
        g = spec.gradient(u)
        assert psi == pytest.approx(0.5 * g @ g, rel=1e-14)
        Hg = spec.hessian(u) @ g
        assert np.linalg.norm(Hg - lam * g) <= 1e-5 * (1 + np.linalg.norm(Hg))
        assert lam <= M + 1e-6
    assert np.all(np.diff(prof.psi_values) < 0)


def grid_level_min(A, r, half_width, n=1201):
    # closed-form values and gradients of 1/2 <A u, u> on a dense grid
    x = np.linspace(-half_width, half_width, n)
    X, Y = np.meshgrid(x, x)
    pts = np.stack([X.ravel(), Y.ravel()], 1)
    grads = pts @ A
    vals = 0.5 * np.sum(grads * pts, axis=1)
    band = np.abs(vals - r) <= 1e-4 * r
    return 0.5 * np.min(np.sum(grads[band] ** 2, axis=1))


@pytest.mark.parametrize("A,r,hw", [
    (np.diag([2.0, -2.0]), 0.01, 0.2),
    (np.diag([1.0, 3.0]), 0.02, 0.25),
    (np.array([[2.0, 0.7], [0.7, 1.0]]), 0.05, 0.4),
])
def test_agrees_with_dense_grid(A, r, hw):
    oracle = grid_level_min(A, r, hw)
    pt = L.minimize_on_level(P.quadratic(A), [0.0, 0.0], r)
    assert pt.psi == pytest.approx(oracle, rel=0.05)
    assert pt.psi <= oracle * (1 + 1e-6)


def test_implied_bound():
    prof = L.psi_profile(P.quadratic(np.eye(2)), [0.0, 0.0], (1e-2, 1e-6))
    r, bound = L.implied_desingularizer_bound(prof)
    np.testing.assert_allclose(bound, 1 / np.sqrt(2 * r), rtol=1e-8)
    phi_prime = 1 / (2 * np.sqrt(r))
    assert np.all(bound >= phi_prime / 2) and np.all(bound <= 2 * phi_prime)


def test_implied_bound_nonsmooth_is_weaker():
    prof = L.psi_profile(P.nonsmooth_32(), [0.0], (1e-2, 1e-8))
    r, bound = L.implied_desingularizer_bound(prof)
    slope = np.polyfit(np.log(r), np.log(bound), 1)[0]
    assert slope == pytest.approx(-1 / 3, abs=1e-6)


def test_implied_bound_needs_two_points():
    prof = L.psi_profile(P.quadratic(np.eye(1)), [0.0], (1e-2, 1e-3))
    prof.psi_values[1:] = np.nan
    with pytest.raises(InsufficientDataError):
        L.implied_desingularizer_bound(prof)


def test_profile_csv(tmp_path):
    prof = L.psi_profile(P.saddle(), [0.0, 0.0], (1e-2, 1e-4))
    path = tmp_path / "psi.csv"
    prof.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,psi,ratio,multiplier,converged"
    assert "# verdict: bounded" in lines
    ratios = [float(l.split(",")[2]) for l in lines[1:] if not l.startswith("#")]
    assert ratios == pytest.approx([2.0] * len(ratios), rel=1e-6)
