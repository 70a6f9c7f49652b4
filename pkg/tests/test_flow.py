import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bchd_orbit.bchd import bind, terms_general
from bchd_orbit.flow import (
    IntegrationError,
    SwitchingSchedule,
    ToleranceConfig,
    compose_flows,
    flow_autonomous,
    integrate,
    simulate_periods,
)
from bchd_orbit.lie import VectorField
from bchd_orbit.models import synthetic_linear
from bchd_orbit.solve import bchd_field

SHOOTING_2D = np.array([-0.4314, -0.01646])


def rk4(f, x0, t1, h):
    x = np.array(x0, dtype=float)
    for _ in range(int(round(t1 / h))):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_linear_decay():
    tr = integrate(VectorField.linear(-np.eye(2)), [1.0, 1.0], 0.0, 1.0)
    assert tr.t[-1] == 1.0
    assert np.allclose(tr.final, [math.exp(-1)] * 2, atol=1e-9)


def test_zero_field_is_constant():
    tr = integrate(VectorField.constant_field([0.0, 0.0]), [0.3, -0.2], 0.0, 2.0)
    assert np.all(tr.x == [0.3, -0.2])


def test_cstr2_against_fixed_step_rk4(cstr2_fields):
    f1 = cstr2_fields[0]
    ref = rk4(f1, [0.0, 0.0], 0.5, 1e-5)
    assert np.allclose(integrate(f1, [0.0, 0.0], 0.0, 0.5).final, ref, atol=1e-7)


def test_cstr3_against_scipy(cstr3_fields, cstr3_steady):
    f = cstr3_fields[1]
    ref = solve_ivp(lambda t, x: f(x), (0, 0.5), cstr3_steady, method="DOP853", rtol=1e-12, atol=1e-12).y[:, -1]
    assert np.allclose(integrate(f, cstr3_steady, 0.0, 0.5).final, ref, rtol=1e-8)


def test_dense_samples(cstr2_fields):
    f1 = cstr2_fields[0]
    tr = integrate(f1, [0.0, 0.0], 0.0, 0.5, sample_times=[0.125, 0.25])
    assert 0.125 in tr.t and 0.25 in tr.t
    k = int(np.flatnonzero(tr.t == 0.25)[0])
    assert np.allclose(tr.x[k], integrate(f1, [0.0, 0.0], 0.0, 0.25).final, atol=1e-9)
    assert np.all(np.diff(tr.t) > 0)


def test_tighter_tolerance_is_more_accurate():
    F = VectorField.linear([[-1.0, 5.0], [-5.0, -1.0]])
    exact = solve_ivp(lambda t, x: F(x), (0, 3), [1.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    errs = [np.linalg.norm(integrate(F, [1.0, 0.0], 0, 3, ToleranceConfig(rtol=r, atol=r * 1e-2)).final - exact)
            for r in (1e-4, 1e-7, 1e-10)]
    assert errs[0] > errs[1] > errs[2]


def test_domain_exit_raises(cstr2):
    push = VectorField.constant_field([-1.0, 0.0])
    field = VectorField(2, push.func, domain_box=cstr2.domain_box)
    with pytest.raises(IntegrationError) as info:
        integrate(field, [0.0, 0.0], 0.0, 2.0)
    assert info.value.x is not None and info.value.x[0] > -1


def test_schedule_validation():
    with pytest.raises(ValueError):
        SwitchingSchedule(0.0, (0, 0.5, 1), ((1,), (0,)))
    with pytest.raises(ValueError):
        SwitchingSchedule(1.0, (0, 0.7, 0.5, 1), ((1,), (0,), (1,)))
    with pytest.raises(ValueError):
        SwitchingSchedule(1.0, (0, 0.5, 1), ((1,),))
    s = SwitchingSchedule.from_fractions(2.0, [0.25, 0.75], ((1.0,), (-1.0,)))
    assert np.allclose(s.switch_times, [0, 0.5, 2.0])
    assert np.allclose(s.fractions, [0.25, 0.75])
    with pytest.raises(ValueError):
        s.check_controls([[-0.5, 0.5]])


def test_compose_linear_closed_form():
    sys1 = synthetic_linear(-np.eye(2), np.eye(2), control_box=[[-1, 1], [-1, 1]])
    s = SwitchingSchedule(0.7, (0.0, 1.0), ((0.0, 0.0),))
    assert np.allclose(compose_flows(sys1, s, [1.0, 2.0]), np.exp(-0.7) * np.array([1.0, 2.0]), atol=1e-10)


def test_zero_drift_translates():
    sys0 = synthetic_linear(np.zeros((2, 2)), np.eye(2), control_box=[[-1, 1], [-1, 1]])
    s = SwitchingSchedule(2.0, (0.0, 0.25, 1.0), ((1.0, 0.0), (0.0, -1.0)))
    assert np.allclose(compose_flows(sys0, s, [0.0, 0.0]), [0.5, -1.5], atol=1e-12)


def test_tiny_period_is_identity(cstr2):
    x0 = np.array([0.1, 0.02])
    assert np.allclose(compose_flows(cstr2, cstr2.symmetric_bang_bang(1e-8), x0), x0, atol=1e-7)


def test_cstr2_reported_fixed_point(cstr2):
    out = compose_flows(cstr2, cstr2.symmetric_bang_bang(1.0), SHOOTING_2D)
    assert np.allclose(out, SHOOTING_2D, atol=1e-3)


def test_flow_autonomous_time_rescaling(cstr2_fields):
    f = cstr2_fields[0]
    x0 = np.array([0.05, 0.0])
    F = bind(terms_general(1, 1), [f], [1.0], 0.3)
    assert np.allclose(flow_autonomous(F, x0), integrate(f, x0, 0.0, 0.3).final, atol=1e-8)
    zero = VectorField.constant_field([0.0, 0.0])
    assert np.array_equal(flow_autonomous(zero, x0), x0)


@pytest.mark.parametrize("x0", [(0.5, 0.0), (-0.5, -0.5), (0.1, 0.05)])
def test_averaged_flow_approaches_equilibrium(cstr2, x0):
    F4 = bchd_field(cstr2, cstr2.symmetric_bang_bang(1.0), 4)
    end = flow_autonomous(F4, x0, T=50.0)
    assert np.linalg.norm(end - np.array([-0.4383664, -0.0163378])) < 1e-4


def test_truncated_flow_from_hot_start_leaves_domain(cstr2):
    # the truncated field drives x1 through -1 from hot starts; reported, not hidden
    F4 = bchd_field(cstr2, cstr2.symmetric_bang_bang(1.0), 4)
    with pytest.raises(IntegrationError) as info:
        flow_autonomous(F4, [0.5, 0.5], T=50.0)
    assert info.value.x[0] < -0.99


def test_simulate_periods_at_fixed_point(cstr2):
    from bchd_orbit.solve import solve_shooting

    sched = cstr2.symmetric_bang_bang(1.0)
    xs = solve_shooting(cstr2, sched, SHOOTING_2D).x_star
    tr = simulate_periods(cstr2, sched, xs, 3, samples_per_segment=10)
    assert np.allclose(tr.poincare, xs, atol=1e-8)
    assert tr.poincare.shape == (4, 2)
    assert np.all(np.diff(tr.t) > 0)
    assert np.allclose(tr.t[tr.switch_indices], [0.5, 1.0, 1.5, 2.0, 2.5])
    assert set(tr.segment) == {1, 2}


def test_trajectory_csv(tmp_path, cstr2):
    tr = simulate_periods(cstr2, cstr2.symmetric_bang_bang(1.0), [0.0, 0.0], 1, samples_per_segment=4)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,segment"
    assert len(lines) == tr.t.size + 1
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1:3], tr.x)
