import warnings

import numpy as np
import pytest

from bchd_orbit import jets
from bchd_orbit.analysis import (
    BoxRegion,
    LyapunovError,
    attractivity_probe,
    contraction_check,
    divergence,
    dulac_scan,
    lyapunov_residual,
    max_beta,
    solve_lyapunov,
)
from bchd_orbit.flow import SwitchingSchedule, simulate_periods
from bchd_orbit.lie import VectorField
from bchd_orbit.models import ControlAffineSystem, harmonic_oscillator, synthetic_linear
from bchd_orbit.solve import bchd_field, solve_shooting

from conftest import central_jacobian

REFERENCE_M = np.array([[32.1045, 1.3812, 4.1283], [1.3812, 0.5365, 0.1375], [4.1283, 0.1375, 0.6974]])


def decay_system(m=1):
    return synthetic_linear(-np.eye(2), np.ones((2, m)), control_box=[[-1.0, 1.0]] * m)


# -- regions


def test_box_region():
    r = BoxRegion([0, 0], [1, 2], (3, 5))
    pts = r.points()
    assert pts.shape == (2, 15) and r.size == 15
    assert np.allclose(pts[:, 0], [0, 0]) and np.allclose(pts[:, -1], [1, 2])
    a = BoxRegion.around([2.0, -4.0], [0.5, 0.25], 4)
    assert np.allclose(a.lower, [1.0, -5.0]) and np.allclose(a.upper, [3.0, -3.0])
    b = BoxRegion.around([2.0, -4.0], 0.5, 4, relative=False)
    assert np.allclose(b.upper, [2.5, -3.5])
    with pytest.raises(ValueError):
        BoxRegion([0, 0], [0, 1], 3)
    with pytest.raises(ValueError):
        BoxRegion([0, 0], [1, 1], 1)


# -- divergence


def test_divergence_linear_and_constant():
    A = np.array([[1.0, 2.0], [3.0, -5.0]])
    assert divergence(VectorField.linear(A), [0.3, 0.1]) == pytest.approx(-4.0)
    assert divergence(VectorField.constant_field([1.0, 2.0]), [0.3, 0.1]) == 0.0


def test_divergence_of_series_field(cstr2):
    F4 = bchd_field(cstr2, cstr2.symmetric_bang_bang(1.0), 4)
    d = divergence(F4, [0.0, 0.0])
    assert d < 0
    assert d == pytest.approx(np.trace(central_jacobian(F4, [0.0, 0.0])), abs=1e-5)


def test_dulac_expanding_field():
    rep = dulac_scan(VectorField.linear(np.eye(2)), BoxRegion([-1, -1], [1, 1], 11))
    assert rep.sign_uniform and rep.rho_sign == 1 and rep.certified
    assert rep.min_abs_divergence == pytest.approx(2.0)


def test_dulac_zero_divergence_is_inconclusive():
    rep = dulac_scan(harmonic_oscillator(), BoxRegion([-1, -1], [1, 1], 11))
    assert rep.sign_uniform and rep.inconclusive and not rep.certified
    assert rep.min_abs_divergence == 0.0


def test_dulac_mixed_sign():
    F = VectorField(2, lambda x: [x[0] * x[0], x[1] * 0.0])
    rep = dulac_scan(F, BoxRegion([-1, -1], [1, 1], 10))
    assert not rep.sign_uniform and not rep.certified


def test_dulac_isolated_domain_failures_are_excluded():
    # 0 * log(0) poisons exactly one grid point
    def f(x):
        r2 = (x[0] - 0.0) ** 2 + (x[1] - 0.0) ** 2
        return [-x[0] + 0.0 * jets.log(r2), -x[1]]

    rep = dulac_scan(VectorField(2, f), BoxRegion([-1, -1], [1, 1], 51))
    assert rep.domain_failures == 1 and rep.sign_uniform and rep.rho_sign == -1


def test_dulac_many_domain_failures_break_uniformity(cstr2):
    rep = dulac_scan(cstr2.f0, BoxRegion([-1.0, -0.5], [0.5, 0.5], 20))
    assert rep.domain_failures == 20 and not rep.sign_uniform


def test_dulac_warns_off_the_plane():
    F = VectorField.linear(-np.eye(3))
    with pytest.warns(UserWarning):
        dulac_scan(F, BoxRegion([-1, -1, -1], [1, 1, 1], 3))


def test_dulac_threads_are_deterministic(cstr2):
    F = bchd_field(cstr2, cstr2.symmetric_bang_bang(1.0), 3)
    region = BoxRegion([-0.9, -0.9], [0.9, 0.9], 80)
    a = dulac_scan(F, region)
    b = dulac_scan(F, region, threads=4)
    assert np.array_equal(a.values, b.values)


def test_dulac_report_outputs():
    rep = dulac_scan(VectorField.linear(-np.eye(2)), BoxRegion([-1, -1], [1, 1], 3))
    assert "certified=true" in rep.to_text()
    lines = rep.samples_csv().splitlines()
    assert lines[0] == "x1,x2,divergence" and len(lines) == 10


# -- Lyapunov


def test_lyapunov_scalar_balance():
    assert np.allclose(solve_lyapunov(-np.eye(3)), 0.5 * np.eye(3), atol=1e-15)


def test_lyapunov_random_stable():
    rng = np.random.default_rng(11)
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        A -= (np.linalg.eigvals(A).real.max() + 0.5) * np.eye(3)
        Q = rng.normal(size=(3, 3))
        Q = Q @ Q.T + np.eye(3)
        M = solve_lyapunov(A, Q)
        assert lyapunov_residual(M, A, Q) <= 1e-10 * np.linalg.norm(Q)
        assert np.array_equal(M, M.T)


def test_lyapunov_against_scipy():
    from scipy.linalg import solve_continuous_lyapunov

    A = np.array([[-2.0, 1.0, 0.0], [0.3, -1.0, 0.5], [0.0, -0.7, -3.0]])
    # scipy solves A X + X A^H = Q; transpose A for the M A + A^T M form
    assert np.allclose(solve_lyapunov(A), solve_continuous_lyapunov(A.T, -np.eye(3)), rtol=1e-12)


def test_lyapunov_rejects_unstable():
    with pytest.raises(LyapunovError):
        solve_lyapunov(np.diag([-1.0, 0.1]))
    with pytest.raises(ValueError):
        solve_lyapunov(-np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]))


# -- contraction


def test_contraction_decay_system():
    region = BoxRegion([-1, -1], [1, 1], 5)
    good = contraction_check(decay_system(), np.eye(2), 1.0, region)
    assert good.valid and good.worst_eigenvalue == pytest.approx(-1.0)
    assert good.u_independent and good.samples_checked == 25
    bad = contraction_check(decay_system(), np.eye(2), 3.0, region)
    assert not bad.valid and bad.worst_eigenvalue == pytest.approx(1.0)
    assert max_beta(decay_system(), np.eye(2), region) == pytest.approx(2.0)
    assert "valid=false" in bad.to_text()


def test_contraction_checks_control_vertices():
    # g(x) = (x1, 0): J = -I + u diag(1, 0), worst at u = u_max
    g = VectorField(2, lambda x: [x[0], 0.0 * x[1]])
    sysx = ControlAffineSystem("scaled", VectorField.linear(-np.eye(2)), (g, g), [[-0.5, 0.5], [0.0, 0.25]])
    cert = contraction_check(sysx, np.eye(2), 0.5, BoxRegion([-1, -1], [1, 1], 4))
    assert cert.vertex_controls_checked == 4 and not cert.u_independent
    assert cert.worst_eigenvalue == pytest.approx(2 * (-1 + 0.75) + 0.5)
    assert np.allclose(cert.worst_control, [0.5, 0.25])


def test_contraction_input_validation():
    region = BoxRegion([-1, -1], [1, 1], 3)
    with pytest.raises(ValueError):
        contraction_check(decay_system(), np.array([[1.0, 0.0], [0.0, -1.0]]), 1.0, region)
    with pytest.raises(ValueError):
        contraction_check(decay_system(), np.array([[1.0, 0.5], [0.0, 1.0]]), 1.0, region)
    with pytest.raises(ValueError):
        contraction_check(decay_system(), np.eye(2), 0.0, region)


def test_contraction_small_box_with_reference_metric(cstr3, cstr3_steady):
    region = BoxRegion.around(cstr3_steady, [0.01, 0.01, 0.0002], 10)
    cert = contraction_check(cstr3, REFERENCE_M, 0.1, region)
    assert cert.valid
    finer = contraction_check(cstr3, REFERENCE_M, 0.1, BoxRegion.around(cstr3_steady, [0.01, 0.01, 0.0002], 20))
    assert finer.worst_eigenvalue <= cert.worst_eigenvalue + 1e-6 or finer.valid


def test_contraction_threads_are_deterministic(cstr3, cstr3_steady):
    region = BoxRegion.around(cstr3_steady, [0.3, 0.65, 0.999], 12)
    a = contraction_check(cstr3, REFERENCE_M, 0.1, region)
    b = contraction_check(cstr3, REFERENCE_M, 0.1, region, threads=3)
    assert a.worst_eigenvalue == b.worst_eigenvalue


def test_metric_distance_decreases_near_orbit(cstr3, cstr3_steady):
    sched = cstr3.symmetric_bang_bang(1.0)
    xs = solve_shooting(cstr3, sched, cstr3_steady).x_star
    rng = np.random.default_rng(5)
    for _ in range(3):
        a, b = xs * (1 + 0.01 * rng.normal(size=3)), xs * (1 + 0.01 * rng.normal(size=3))
        ta = simulate_periods(cstr3, sched, a, 3, samples_per_segment=10)
        tb = simulate_periods(cstr3, sched, b, 3, samples_per_segment=10)
        _, ia, ib = np.intersect1d(np.round(ta.t, 12), np.round(tb.t, 12), return_indices=True)
        e = ta.x[ia] - tb.x[ib]
        d = np.einsum("ki,ij,kj->k", e, REFERENCE_M, e)
        assert np.all(np.diff(d) <= 0)


# -- attraction


def test_attractivity_from_fixed_point(cstr2):
    sched = cstr2.symmetric_bang_bang(1.0)
    xs = solve_shooting(cstr2, sched, [-0.43, -0.016]).x_star
    res = attractivity_probe(cstr2, sched, [xs], 4, xs)[0]
    assert np.all(res.distances <= 1e-8)


def test_attractivity_linear_rate():
    sysl = synthetic_linear(-np.eye(2), np.eye(2), control_box=[[-1, 1], [-1, 1]])
    sched = SwitchingSchedule(0.8, (0.0, 0.5, 1.0), ((1.0, 1.0), (-1.0, -1.0)))
    xs = solve_shooting(sysl, sched, [0.0, 0.0]).x_star
    res = attractivity_probe(sysl, sched, [[2.0, -1.0]], 5, xs, metric=np.diag([2.0, 1.0]))[0]
    assert np.allclose(res.ratios, np.exp(-0.8), atol=1e-6)


def test_contraction_worst_point_matches_finite_differences(cstr3, cstr3_steady):
    region = BoxRegion.around(cstr3_steady, [0.3, 0.65, 0.999], 6)
    cert = contraction_check(cstr3, REFERENCE_M, 0.1, region)
    J = central_jacobian(cstr3.f0, cert.worst_point, 1e-7)
    S = REFERENCE_M @ J + J.T @ REFERENCE_M + 0.1 * np.eye(3)
    assert cert.worst_eigenvalue == pytest.approx(np.linalg.eigvalsh(S)[-1], rel=1e-6)
