import json
import math

import numpy as np
import pytest

from kldyn import dynamics as D
from kldyn import potential as P
from kldyn import rates as R
from kldyn.deformation import DeformedEnergy, certify_quasigradient, lambda_star
from kldyn.desingularize import Desingularizer
from kldyn.errors import ContractError, InputError, RoundingFloorError


@pytest.fixture(scope="module")
def radial_flow():
    spec = P.radial(c=1.0, theta=1 / 3, N=2)
    cfg = D.DynamicsConfig(t_max=1e5, conv_tol_v=1e-9, conv_tol_g=1e-6)
    return D.integrate_gradient_flow(spec, cfg, [0.6, 0.8], t_eval=np.geomspace(1e-3, 1e3, 61))


@pytest.fixture(scope="module")
def overdamped():
    # G = u^2: exact u(t) = 2 e^-t - e^-2t
    spec = P.quadratic([[2.0]])
    tr = D.integrate(spec, D.DynamicsConfig(gamma=3.0), D.PhaseState([1.0], [0.0]))
    return spec, tr


def test_worstcase_envelope_radial_is_exact(radial_flow):
    fit = R.check_worstcase_envelope(radial_flow, [0.0, 0.0], Desingularizer.power(1.0, 1 / 3), 0.0)
    assert fit.passed
    assert fit.c_time == 1.0 and fit.t0 == 0.0
    assert fit.d == pytest.approx(1.0, abs=1e-6)


def test_worstcase_envelope_requires_convergence():
    tr = D.integrate(P.quadratic(np.eye(1)), D.DynamicsConfig(t_max=1.0), D.PhaseState([1.0], [0.0]))
    with pytest.raises(ContractError):
        R.check_worstcase_envelope(tr, [0.0], Desingularizer.power(1.0, 0.5))


def test_worstcase_envelope_rejects_large_exponent(overdamped):
    _, tr = overdamped
    with pytest.raises(ContractError):
        R.check_worstcase_envelope(tr, [0.0], Desingularizer.power(1.0, 0.7))


def test_envelope_monotone_in_d(overdamped):
    _, tr = overdamped
    desing = Desingularizer.power(1.0, 0.5)
    fit = R.check_worstcase_envelope(tr, [0.0], desing, 2.0)
    assert fit.passed
    t = tr.times[tr.times >= 2.0]
    dist = np.abs(tr.u[tr.times >= 2.0, 0])
    curve = R._curve_from(desing, fit.gamma0, fit.c_time * (t - 2.0))
    for factor in [1.0, 1.5, 10.0]:
        assert np.all(dist <= factor * fit.d * curve * (1 + R.REL_SLACK))


def distance_setup(spec, tr, gamma):
    u_inf = np.zeros(spec.dimension)
    R_ball = max(np.abs(tr.u).max(), np.abs(tr.v).max()) * (1 + 1e-9)
    M = P.hessian_bound(spec, R_ball)[0]
    de = DeformedEnergy(spec, gamma, lambda_star(gamma, M))
    cert = certify_quasigradient(de, R_ball, 2000, M=M)
    base = spec.known_desingularizer
    desing_e = R.energy_desingularizer(de, u_inf, base, tr, 0.0)
    return u_inf, de, cert, desing_e


def test_distance_envelope_and_sabotage():
    spec = P.quadratic(np.eye(1))
    tr = D.integrate(spec, D.DynamicsConfig(gamma=3.0), D.PhaseState([1.0], [0.0]))
    u_inf, de, cert, desing_e = distance_setup(spec, tr, 3.0)
    for alpha in [cert.alpha_certified, cert.alpha_sampled]:
        ok = R.check_distance_envelope(tr, u_inf, desing_e, alpha, de, 0.0)
        assert ok.passed and ok.max_violation < 0 and ok.checked > 10
    bad = R.check_distance_envelope(tr, u_inf, desing_e, 100 * cert.alpha_sampled, de, 0.0)
    assert not bad.passed and bad.max_violation > 0.1
    # the algebraic alpha is conservative by more than a factor 20 here
    assert cert.alpha_sampled > 20 * cert.alpha_certified


def test_distance_envelope_at_rest_point():
    spec = P.quadratic(np.eye(2))
    tr = D.integrate(spec, D.DynamicsConfig(), D.PhaseState([0.0, 0.0], [0.0, 0.0]))
    de = DeformedEnergy(spec, 1.0, 0.1)
    v = R.check_distance_envelope(tr, [0.0, 0.0], Desingularizer.power(1.0, 0.5), 0.01, de)
    assert v.passed and v.checked == 0


def test_energy_envelope(overdamped):
    spec, tr = overdamped
    de = DeformedEnergy(spec, 3.0, 0.05)
    desing = Desingularizer.power(1.0, 0.5)
    wc = R.check_worstcase_envelope(tr, [0.0], desing, 2.0)
    fit = R.check_energy_envelope(tr, [0.0], desing, de, wc.c_time, 2.0)
    assert fit.passed and fit.c > 0


def test_fit_decay_overdamped_rate(overdamped):
    _, tr = overdamped
    law = R.fit_decay(tr, [0.0], (5.0, 20.0))
    assert law.law == "Exponential"
    assert law.param == pytest.approx(1.0, rel=0.05)


def test_fit_decay_half_quadratic_rate():
    # G = u^2 / 2 with gamma = 3: slowest root (3 - sqrt 5) / 2
    tr = D.integrate(P.quadratic([[1.0]]), D.DynamicsConfig(gamma=3.0), D.PhaseState([1.0], [0.0]))
    law = R.fit_decay(tr, [0.0], (5.0, 30.0))
    assert law.law == "Exponential"
    assert law.param == pytest.approx((3 - math.sqrt(5)) / 2, rel=0.05)


def test_fit_decay_synthetic_power():
    t = np.geomspace(1, 1e3, 300)
    law = R.fit_decay_samples(t, 1 / t, (1.0, 1e3))
    assert law.law == "Power" and law.param == pytest.approx(1.0, abs=1e-12)
    assert law.residual_power <= 1e-12


def test_fit_decay_synthetic_exponential():
    t = np.linspace(1, 30, 300)
    law = R.fit_decay_samples(t, np.exp(-0.7 * t), (1.0, 30.0))
    assert law.law == "Exponential" and law.param == pytest.approx(0.7, rel=1e-9)


def test_fit_decay_ambiguous_when_noise_dominates():
    # on a short window both models fit the trend; the wiggle sets both residuals
    t = np.linspace(10, 10.5, 400)
    wiggle = 1 + 0.2 * np.where(np.sin(2 * np.pi * 7 * t) > 0, 1.0, -1.0) * np.exp(-0 * t)
    law = R.fit_decay_samples(t, wiggle / t, (10.0, 10.5))
    assert law.law == "Ambiguous"


def test_fit_decay_errors(overdamped):
    _, tr = overdamped
    with pytest.raises(InputError):
        R.fit_decay(tr, [0.0], (1.0, 1e6))
    t = np.linspace(1, 10, 50)
    with pytest.raises(RoundingFloorError):
        R.fit_decay_samples(t, np.full(50, 1e-15), (1.0, 10.0))


def test_default_t_start_stays_inside():
    t = np.linspace(0, 10, 11)
    d = np.array([1.0, 0.5, 0.001, 0.2, 0.05, 0.009, 0.008, 0.005, 0.004, 0.003, 0.002])
    tr = D.Trajectory(t, d[:, None], np.zeros((11, 1)), d, d, D.Classification(D.CONVERGED, np.zeros(1)),
                      np.zeros((11, 2)))
    assert R.default_t_start(tr, [0.0]) == 5.0


def test_end_to_end_quadratic():
    spec = P.quadratic(np.eye(2))
    rep, tr = R.end_to_end(spec, D.DynamicsConfig(gamma=1.0), D.PhaseState([1.0, 1.0], [0, 0]))
    assert rep.classification == "Converged"
    assert rep.limit_point == [0.0, 0.0]
    assert rep.envelope_automaj["passed"] and rep.envelope_majgrad1["passed"]
    assert rep.envelope_majval["passed"]
    assert rep.empirical_law["law"] == "Exponential"
    assert rep.theta_hat == pytest.approx(0.5, abs=0.02)
    assert rep.velocity_l1["cauchy"] and rep.velocity_l1["tail_monotone"]
    data = json.loads(rep.to_json())
    assert data["classification"] == "Converged"
    row = rep.summary_row()
    assert row["envelope_automaj"] == "pass" and row["law"] == "Exponential"


def test_end_to_end_escape():
    rep, _ = R.end_to_end(P.neg_quadratic(2), D.DynamicsConfig(gamma=1.0),
                          D.PhaseState([1.0, 0.0], [0.0, 0.0]))
    assert rep.classification == "Escaped"
    assert rep.envelope_automaj is None and rep.envelope_majgrad1 is None
    assert rep.summary_row()["envelope_automaj"] == ""
