"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or ``python tests/test_acceptance.py``).
"""
import functools
import sys
import time

import numpy as np
import pytest

from kldyn import cli
from kldyn import dynamics as D
from kldyn import levelset as L
from kldyn import potential as P
from kldyn import rates as R
from kldyn.deformation import (DeformedEnergy, alpha_quadratic_bound, certify_quasigradient,
                               lambda_zero, norm_product_constant)
from kldyn.desingularize import Desingularizer, check_sqrt_lower_bound, worst_case_curve
from kldyn.sampling import DEFAULT_SEED, make_rng

_terminal = None


@pytest.fixture(autouse=True)
def _grab_terminal(request):
    global _terminal
    _terminal = request.config.pluginmanager.get_plugin("terminalreporter")


def _emit(line):
    if _terminal is not None:
        _terminal.write_line(line)
    else:
        print(line)


def criterion(number, title):
    """Wrap a test so that it prints ``PASS``/``FAIL`` for its criterion."""
    def wrap(fn):
        @functools.wraps(fn)
        def test(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                _emit(f"\nFAIL criterion {number:>2}: {title}")
                raise
            _emit(f"\nPASS criterion {number:>2}: {title}")
        return test
    return wrap


# ---------------------------------------------------------------- shared runs


@pytest.fixture(scope="module")
def quartic_run():
    spec = P.power(p=2, N=2)
    cfg = D.DynamicsConfig(gamma=1.0, t_max=1e5, conv_tol_v=1e-7, conv_tol_g=1e-7)
    report, traj = R.end_to_end(spec, cfg, D.PhaseState([0.6, 0.8], [0.0, 0.0]),
                                fit_window=(1e2, 1e4))
    return spec, report, traj


@pytest.fixture(scope="module")
def quadratic_run():
    spec = P.quadratic(np.eye(2))
    cfg = D.DynamicsConfig(gamma=1.0)
    report, traj = R.end_to_end(spec, cfg, D.PhaseState([0.6, 0.8], [0.0, 0.0]))
    return spec, report, traj


@pytest.fixture(scope="module")
def diag13_profile():
    return L.psi_profile(P.quadratic(np.diag([1.0, 3.0])), [0.0, 0.0])


# ---------------------------------------------------------------- criteria


@criterion(1, "integrator matches 2e^-t - e^-2t to 1e-6 relative on [0, 10] in < 1 s")
def test_c01_integrator_oracle():
    spec = P.quadratic([[2.0]])                 # G = u^2, so grad G = 2u
    cfg = D.DynamicsConfig(gamma=3.0, t_max=10.0, abs_tol=1e-12, rel_tol=1e-12)
    t = np.linspace(0.0, 10.0, 201)
    start = time.perf_counter()
    traj = D.integrate(spec, cfg, D.PhaseState([1.0], [0.0]), t_eval=t)
    elapsed = time.perf_counter() - start
    u, _ = traj.interpolate(t)
    exact = 2 * np.exp(-t) - np.exp(-2 * t)
    assert np.max(np.abs(u[:, 0] - exact) / np.abs(exact)) <= 1e-6
    assert elapsed < 1.0


@criterion(2, "E_T non-increasing within 10x tolerance and -dE/dt = gamma |v|^2 to 5%, "
              "whole catalog x 5 initial conditions")
def test_c02_energy_dissipation():
    rng = make_rng(DEFAULT_SEED)
    for name in sorted(P.CATALOG):
        spec = P.from_name(name)
        cfg = D.DynamicsConfig(gamma=1.0, t_max=10.0, abs_tol=1e-12, rel_tol=1e-12)
        for _ in range(5):
            u0 = rng.uniform(-1.0, 1.0, spec.dimension)
            v0 = rng.uniform(-0.5, 0.5, spec.dimension)
            traj = D.integrate(spec, cfg, D.PhaseState(u0, v0))
            rep = D.energy_dissipation_report(traj, spec, cfg)
            assert rep["monotone"], (name, u0, v0, rep)
            assert rep["rate_max_rel_err"] <= 0.05, (name, u0, v0, rep)
            assert rep["rate_pieces"] > 0


@criterion(3, "quadratic certificate: M = 1, lambda0 = 1/3, alpha0(1/6) = 1/12, "
              "sampled cosine >= alpha0/C > 0, degenerate at lambda = 0")
def test_c03_quasigradient_certificate():
    spec = P.quadratic(np.eye(2))
    cert = certify_quasigradient(DeformedEnergy(spec, 1.0, 1 / 6), R=1.0, budget=10_000)
    assert cert.M == pytest.approx(1.0, abs=1e-12)
    assert lambda_zero(1.0, cert.M) == pytest.approx(1 / 3, abs=1e-9)
    assert cert.alpha0 == pytest.approx(1 / 12, rel=1e-12)
    assert alpha_quadratic_bound(1.0, 1.0, 1 / 6) == pytest.approx(1 / 12, rel=1e-12)
    assert cert.C == pytest.approx(norm_product_constant(1.0, 1.0, 1 / 6))
    assert cert.sample_count == 10_000
    assert cert.alpha_certified > 0
    assert cert.alpha_sampled >= cert.alpha_certified
    assert cert.rest_point_equivalence_checked
    degenerate = certify_quasigradient(DeformedEnergy(spec, 1.0, 0.0), R=1.0, budget=10_000,
                                       allow_zero=True)
    assert degenerate.alpha_sampled <= 1e-6


@criterion(4, "worst-case curves: 1/(1+3t) and e^-2t to 1e-9; tabulated phi to 1e-5")
def test_c04_worst_case_closed_forms():
    t = np.linspace(0.0, 5.0, 101)
    third = worst_case_curve(Desingularizer.power(1.0, 1 / 3), 1.0, t)
    half = worst_case_curve(Desingularizer.power(1.0, 0.5), 1.0, t)
    exact3, exact2 = 1 / (1 + 3 * t), np.exp(-2 * t)
    assert np.max(np.abs(third.gamma / exact3 - 1)) <= 1e-9
    assert np.max(np.abs(half.gamma / exact2 - 1)) <= 1e-9
    s = np.geomspace(1e-12, 8.0, 400)
    for theta, exact in ((1 / 3, exact3), (0.5, exact2)):
        tab = worst_case_curve(Desingularizer.table(s, s ** theta), 1.0, t)
        assert tab.closed_form is None
        assert np.max(np.abs(tab.gamma / exact - 1)) <= 1e-5


@criterion(5, "radial gradient flow distance equals gamma(t) to 1e-4 over 3 decades")
def test_c05_radial_exactness():
    spec = P.radial(c=1.0, theta=1 / 3, N=2)
    t = np.geomspace(1.0, 1e3, 61)
    cfg = D.DynamicsConfig(t_max=2e3)
    u0 = np.array([0.6, 0.8])                   # distance gamma0 = 1 from the minimizer
    traj = D.integrate_gradient_flow(spec, cfg, u0, t_eval=t)
    u, _ = traj.interpolate(t)
    dist = np.linalg.norm(u, axis=1)
    gamma = worst_case_curve(Desingularizer.power(1.0, 1 / 3), 1.0, t).gamma
    assert np.max(np.abs(dist / gamma - 1)) <= 1e-4


@criterion(6, "envelopes hold for |u|^4 and |u|^2/2; quartic decays as t^-0.5 (15%), "
              "quadratic exponentially")
def test_c06_envelope_dominance(quartic_run, quadratic_run):
    for _, report, _ in (quartic_run, quadratic_run):
        assert report.classification == D.CONVERGED
        assert report.envelope_majgrad1["passed"], report.envelope_majgrad1
        assert report.envelope_automaj["passed"], report.envelope_automaj
        assert report.envelope_automaj["checked"] > 0
    _, quartic, traj = quartic_run
    law = R.fit_decay(traj, [0.0, 0.0], (1e2, 1e4))
    assert law.law == "Power"
    assert law.param == pytest.approx(0.5, rel=0.15)
    assert quartic.empirical_law["law"] == "Power"
    assert quadratic_run[1].empirical_law["law"] == "Exponential"


@criterion(7, "theta_hat = 1/(2p) within 0.05 for |u|^(2p), p = 1, 2, 3")
def test_c07_exponent_recovery():
    cfg = D.DynamicsConfig(gamma=1.0, t_max=1e4)
    for p in (1, 2, 3):
        spec = P.power(p=p, N=2)
        traj = D.integrate(spec, cfg, D.PhaseState([0.6, -0.8], [0.0, 0.0]))
        # the fit only uses samples with 1e-8 <= |G - G(0)| <= 1e-2, i.e. the tail
        _, theta_hat = R.estimate_desingularizer(traj, spec, [0.0, 0.0], window=(1e-8, 1e-2))
        assert abs(theta_hat - 1 / (2 * p)) <= 0.05, (p, theta_hat)


@criterion(8, "psi(r)/r: diag(1,3) ~ 1 with multipliers <= 3, saddle ~ 2, "
              "|u|^(3/2) grows 10x per 1000x and is unbounded")
def test_c08_level_set_profiles(diag13_profile):
    prof = diag13_profile
    assert 0.95 <= prof.ratio_max <= 1.05
    assert np.all(prof.multipliers <= 3 + 1e-6)
    assert prof.bounded
    saddle = L.psi_profile(P.saddle(), [0.0, 0.0])
    assert np.all(np.abs(saddle.ratios / 2 - 1) <= 0.05)
    ns = L.psi_profile(P.nonsmooth_32(), [0.0], (1e-2, 1e-8), points_per_decade=1)
    ratios = ns.ratios
    # r shrinks 1000x every three grid points; the exact growth is 1000^(1/3) = 10
    growth = ratios[3:] / ratios[:-3]
    assert np.all(growth >= 10 * (1 - 1e-12)), growth
    assert ratios[-1] / ratios[0] >= 10
    assert not ns.bounded and ns.verdict == "unbounded"


@criterion(9, "sqrt(s) lower bound: theta 1/3, 1/2 pass, 2/3 fails; "
              "quadratic profile bound within factor 2 of 1/(2 sqrt s)")
def test_c09_sqrt_lower_bound(diag13_profile):
    s = np.geomspace(1e-12, 1.0, 61)
    assert check_sqrt_lower_bound(Desingularizer.power(1.0, 1 / 3), s)[1]
    assert check_sqrt_lower_bound(Desingularizer.power(1.0, 0.5), s)[1]
    assert not check_sqrt_lower_bound(Desingularizer.power(1.0, 2 / 3), s)[1]
    r, bound = L.implied_desingularizer_bound(diag13_profile)
    phi_prime = Desingularizer.power(1.0, 0.5).phi_prime(r)
    assert np.all(bound >= phi_prime / 2)
    assert np.all(bound <= 2 * phi_prime)


@criterion(10, "Converged / Escaped classification and Cauchy velocity L1 sums (< 1%)")
def test_c10_asymptotic_alternative(quartic_run, quadratic_run):
    cfg = D.DynamicsConfig(gamma=1.0)
    conv = D.integrate(P.quadratic(np.eye(2)), cfg, D.PhaseState([1.0, -0.5], [0.2, 0.0]))
    esc = D.integrate(P.neg_quadratic(N=2), cfg, D.PhaseState([0.1, 0.0], [0.0, 0.0]))
    saddle = D.integrate(P.saddle(), cfg, D.PhaseState([0.0, 0.5], [0.0, 0.0]))
    assert conv.classification.kind == D.CONVERGED
    assert esc.classification.kind == D.ESCAPED
    assert saddle.classification.kind == D.ESCAPED
    for traj in (conv, quartic_run[2], quadratic_run[2]):
        assert traj.classification.kind == D.CONVERGED
        assert D.l1_cauchy(traj)["rel_change"] < 0.01


CONFIGS = {
    "quadratic": """seed = 7
gamma = 1.0
[potential]
name = "quadratic"
params = { A = [[1.0, 0.0], [0.0, 1.0]] }
[initial]
u0 = [0.6, 0.8]
[analysis]
certify = true
levelset = true
rates = true
""",
    "saddle": """[potential]
name = "saddle"
[initial]
u0 = [0.0, 0.5]
[analysis]
certify = true
levelset = true
""",
    "nonsmooth": """[potential]
name = "nonsmooth_32"
[initial]
u0 = [0.5]
[integrator]
t_max = 10.0
[analysis]
levelset = true
rates = true
""",
}


@criterion(11, "identical config and seed give bit-identical artifacts")
def test_c11_determinism(tmp_path):
    for name, text in CONFIGS.items():
        (tmp_path / f"{name}.toml").write_text(text)
    pattern = str(tmp_path / "*.toml")
    for run in ("a", "b"):
        assert cli.main(["simulate", "--batch", pattern, "--out", str(tmp_path / run),
                         "--quiet", "--workers", "2"]) == 0
        assert cli.main(["report", "--out", str(tmp_path / run), "--quiet"]) == 0
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                     if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                     if p.is_file())
    assert files_a == files_b
    assert len(files_a) >= 10
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
