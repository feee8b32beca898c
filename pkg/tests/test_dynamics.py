import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronomech.dynamics import (
    HertzReductionError,
    LightQuadricError,
    MechSystem,
    State,
    constrained_acceleration_ii,
    covariant_value,
    hertz_reduce,
    integrate,
    intermediate_integral_residual,
    jacobi_metric,
    newton_field,
    project_trajectory,
    time_constrained_field,
)
from chronomech.geometry import MetricField, RegularityError

FLAT1 = MetricField(["x"], [["1"]])
FLAT2 = MetricField(["x", "y"], [["1", "0"], ["0", "1"]])
POLAR = MetricField(["r", "th"], [["1", "0"], ["0", "r^2"]])
SKEW = MetricField(["x", "y"], [["2+sin(y)", "0.3*x"], ["0.3*x", "1+x^2"]])
KEPLER = MechSystem(FLAT2, potential="-1/sqrt(x^2+y^2)")
HO = MechSystem(FLAT1, potential="0.5*x^2")
HO2 = MechSystem(FLAT2, potential="0.5*x^2 + 2*y^2")


def test_newton_field_examples():
    assert np.all(newton_field(MechSystem(FLAT2)).acceleration([0.3, 1.0], [2.0, -1.0]) == 0)
    ho = MechSystem(FLAT1, potential="0.5*4*x^2")
    assert newton_field(ho).acceleration([0.7], [0.0])[0] == pytest.approx(-4 * 0.7)
    a = newton_field(KEPLER).acceleration([1.0, 0.0], [0.0, 1.0])
    assert a == pytest.approx([-1.0, 0.0], abs=1e-15)


def test_kepler_acceleration_hand_oracle():
    rng = np.random.default_rng(0)
    f = newton_field(KEPLER)
    for _ in range(50):
        p = rng.uniform(-2, 2, 2)
        r = np.hypot(*p)
        if r < 0.2:
            continue
        assert np.allclose(f.acceleration(p, [0.0, 0.0]), -p / r**3, atol=1e-13)


def test_potential_generates_force_form():
    for i, c in enumerate(KEPLER.coords):
        assert str(KEPLER.force_form[i]) == str(KEPLER.potential.partial(c))


def test_straight_line_endpoint():
    tr = integrate(newton_field(MechSystem(FLAT1)), State([0.0], [1.0]), 2.0)
    assert abs(tr.x[-1, 0] - 2.0) <= 1e-12
    assert tr.lam[-1] == 2.0


def test_oscillator_returns():
    tr = integrate(newton_field(HO), State([1.0], [0.0]), 2 * math.pi, tol=1e-10)
    assert abs(tr.x[-1, 0] - 1.0) <= 1e-8 and abs(tr.v[-1, 0]) <= 1e-8


def test_oscillator_rk4_fixed_step():
    tr = integrate(newton_field(HO), State([1.0], [0.0]), 2 * math.pi, step=1e-3, adaptive=False)
    assert abs(tr.x[-1, 0] - 1.0) <= 1e-10
    assert len(tr) == 6285


def test_polar_geodesic_theta_dot_constant():
    tr = integrate(newton_field(MechSystem(POLAR)), State([1.0, 0.0], [0.3, 0.8]), 10.0)
    assert np.max(np.abs(tr.theta_dot - tr.theta_dot[0])) <= 1e-9


state2 = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4)


@settings(max_examples=15, deadline=None)
@given(state2)
def test_conservative_flow_energy(s):
    sys = MechSystem(SKEW, potential="0.5*(x^2 + y^2) + 0.1*x*y")
    tr = integrate(newton_field(sys), State(s[:2], s[2:]), 10.0, tol=1e-10)
    H0 = tr.H[0]
    assert np.max(np.abs(tr.H - H0)) <= 1e-8 * (1 + abs(H0))


@settings(max_examples=15, deadline=None)
@given(state2)
def test_geodesic_flow_kinetic(s):
    tr = integrate(newton_field(MechSystem(SKEW)), State(s[:2], s[2:]), 10.0, tol=1e-10, functionals=False)
    assert np.max(np.abs(tr.theta_dot - tr.theta_dot[0])) <= 1e-9


def test_functional_derivatives():
    tr = integrate(newton_field(KEPLER), State([1.0, 0.0], [0.1, 1.2]), 1.0, step=1e-3, adaptive=False)
    dt = tr.t[2:] - tr.t[:-2]
    dS = tr.S[2:] - tr.S[:-2]
    dl = tr.ell[2:] - tr.ell[:-2]
    twoT = tr.theta_dot[1:-1]
    assert np.max(np.abs(dS / dt - twoT) / twoT) <= 1e-6
    assert np.max(np.abs(dl / dt - np.sqrt(twoT)) / np.sqrt(twoT)) <= 1e-6
    assert np.max(np.abs(dS / dl - np.sqrt(twoT)) / np.sqrt(twoT)) <= 1e-6
    assert np.all(np.diff(tr.S) > 0) and np.all(np.diff(tr.t) > 0) and np.all(np.diff(tr.ell) > 0)


def test_light_quadric_aborts():
    mink = MechSystem(MetricField(["t", "x"], [["-1", "0"], ["0", "1"]]))
    with pytest.raises(LightQuadricError):
        integrate(newton_field(mink), State([0.0, 0.0], [1.0, 1.0]), 1.0)
    tr = integrate(newton_field(mink), State([0.0, 0.0], [1.0, 1.0]), 1.0, functionals=False)
    assert tr.x[-1] == pytest.approx([1.0, 1.0])


def test_turning_point_is_removable():
    tr = integrate(newton_field(HO), State([1.0], [0.0]), 1.0, step=0.1, adaptive=False)
    assert tr.t[-1] == pytest.approx(1.0)


def test_span_must_be_positive():
    with pytest.raises(ValueError):
        integrate(newton_field(HO), State([1.0], [0.0]), 0.0)


def test_trajectory_csv():
    tr = integrate(newton_field(KEPLER), State([1.0, 0.0], [0.0, 1.0]), 0.1, step=0.05, adaptive=False)
    buf = io.StringIO()
    tr.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "lambda,x,y,x_dot,y_dot,S,t,ell,H"
    assert len(lines) == 1 + len(tr) == 4
    assert float(lines[-1].split(",")[0]) == pytest.approx(0.1)


# time-constrained field ----------------------------------------------------------------


def _d_tau_dot(field, x, v):
    """D-bar applied to tau_dot, using the symbolic partials of tau_dot and the numeric field."""
    sys = field.system
    b = sys.state_binding(x, v)
    a = field.acceleration(x, v)
    out = 0.0
    for j, c in enumerate(sys.coords):
        out += v[j] * field.tau_dot.partial(c).evaluate(b)
        out += a[j] * field.tau_dot.partial(sys.velocities[j]).evaluate(b)
    return out


@pytest.mark.parametrize(
    "tau",
    [["1", "0.2*x"], ["x*y + 1", "cos(x)"], ["1 + 0.2*x_dot/sqrt(x_dot^2+y_dot^2)", "0.2*y_dot/sqrt(x_dot^2+y_dot^2)"]],
)
def test_constrained_field_preserves_tau_dot(tau):
    sys = MechSystem(SKEW, potential="0.5*(x^2 + y^2)")
    field = time_constrained_field(sys, tau)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        x, v = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        try:
            assert abs(_d_tau_dot(field, x, v)) <= 1e-10
        except RegularityError:
            pass


def test_constrained_residual_is_parallel_to_tau():
    sys = MechSystem(SKEW, potential="0.5*x^2 + sin(y)")
    tau = ["1 + 0.3*y", "x"]
    field = time_constrained_field(sys, tau)
    rng = np.random.default_rng(6)
    for _ in range(200):
        x, v = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        b = sys.state_binding(x, v)
        a = field.acceleration(x, v)
        gam = SKEW.christoffel.second_values(x)
        alpha = np.array([f.evaluate(b) for f in sys.force_form])
        # lowered Newton defect g(a + Gamma(v, v)) + alpha
        r = SKEW.values(x) @ (a + np.einsum("jkl,k,l->j", gam, v, v)) + alpha
        t = np.array([e.evaluate(b) for e in field.tau])
        w1, w2 = rng.normal(size=2), rng.normal(size=2)
        cross = (r @ w1) * (t @ w2) - (r @ w2) * (t @ w1)
        assert abs(cross) <= 1e-9


def test_constrained_equals_newton_when_tangent():
    sys = MechSystem(FLAT2)
    field = time_constrained_field(sys, ["1", "0"])
    rng = np.random.default_rng(7)
    for _ in range(20):
        x, v = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        assert np.all(field.acceleration(x, v) == newton_field(sys).acceleration(x, v))


def test_constrained_product_space_reproduces_conservative():
    ext = MechSystem(MetricField(["t", "x", "y"], [["-(1+x^2+y^2)", "0", "0"], ["0", "1", "0"], ["0", "0", "1+0.5*x^2"]]))
    red = MechSystem(MetricField(["x", "y"], [["1", "0"], ["0", "1+0.5*x^2"]]), potential="0.5*(1+x^2+y^2)")
    fbar = time_constrained_field(ext, ["1", "0", "0"])
    fred = newton_field(red)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x, v = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        a = fbar.acceleration([rng.uniform(-1, 1), *x], [1.0, *v])
        assert abs(a[0]) <= 1e-10
        assert np.allclose(a[1:], fred.acceleration(x, v), atol=1e-10, rtol=0)


@pytest.mark.parametrize("tau", [["1 + 0.3*y", "x"], ["x^2 + 1", "sin(x*y)"]])
def test_constrained_two_forms_agree(tau):
    sys = MechSystem(SKEW, potential="0.5*x^2 + y^3")
    field = time_constrained_field(sys, tau)
    rng = np.random.default_rng(9)
    for _ in range(100):
        s = State(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
        try:
            a = field.acceleration(s.x, s.v)
        except RegularityError:
            continue
        assert np.allclose(a, constrained_acceleration_ii(sys, tau, s), atol=1e-9, rtol=0)


def test_constrained_null_tau_rejected():
    mink = MechSystem(MetricField(["t", "x"], [["-1", "0"], ["0", "1"]]))
    field = time_constrained_field(mink, ["1", "1"])
    with pytest.raises(RegularityError):
        field.acceleration([0.0, 0.0], [1.0, 0.5])
    with pytest.raises(RegularityError):
        constrained_acceleration_ii(mink, ["1", "1"], State([0.0, 0.0], [1.0, 0.5]))


# Hertz reduction -----------------------------------------------------------------------

SAMPLES3 = [[0.0, 1.0, 0.0], [1.0, 0.5, 1.5], [-2.0, -1.0, 0.3]]


def _ext(g00, gxx="1"):
    return MechSystem(MetricField(["t", "x", "y"], [[g00, "0", "0"], ["0", gxx, "0"], ["0", "0", "1"]]))


def test_hertz_constant_gives_geodesic():
    red = hertz_reduce(_ext("-2"), 1.0, sample_points=SAMPLES3)
    assert red.potential.evaluate({"x": 0.3, "y": 2.0}) == pytest.approx(-0.25)
    assert all(a.is_zero() for a in red.force_form)


def test_hertz_kepler_and_oscillator():
    k, P0 = 1.0, 2.0
    red = hertz_reduce(_ext(f"-{P0**2}*sqrt(x^2+y^2)/{2 * k}"), P0, sample_points=SAMPLES3)
    for p in SAMPLES3:
        r = math.hypot(p[1], p[2])
        assert red.potential_value(p[1:]) == pytest.approx(-k / r, rel=1e-14)
    w = 1.5
    red = hertz_reduce(_ext(f"{P0**2}/({w**2}*x^2)"), P0, sample_points=SAMPLES3)
    assert red.potential_value([0.5, 0.3]) == pytest.approx(0.5 * w**2 * 0.25, rel=1e-14)


def test_hertz_rejects_time_dependence_and_cross_terms():
    with pytest.raises(HertzReductionError, match="g\\^00"):
        hertz_reduce(_ext("-(1+t^2)"), 1.0, sample_points=SAMPLES3)
    with pytest.raises(HertzReductionError, match="g\\[x\\]\\[x\\]"):
        hertz_reduce(_ext("-1", gxx="1+t^2"), 1.0, sample_points=SAMPLES3)
    cross = MechSystem(MetricField(["t", "x"], [["-1", "0.1"], ["0.1", "1"]]))
    with pytest.raises(HertzReductionError, match="adapted"):
        hertz_reduce(cross, 1.0, sample_points=[[0.0, 1.0]])


def test_hertz_flow_p0_and_projection():
    ext = _ext("-sqrt(x^2+y^2)/2")
    P0 = 1.0
    red = hertz_reduce(ext, P0, sample_points=SAMPLES3)
    x0, v0 = np.array([1.0, 0.0]), np.array([0.0, 1.1])
    g00 = -0.5
    s_ext = State([0.0, *x0], [P0 / g00, *v0])
    step = 1e-3
    te = integrate(newton_field(ext), s_ext, 10.0, step=step, adaptive=False, functionals=False)
    tr = integrate(newton_field(red), State(x0, v0), 10.0, step=step, adaptive=False, functionals=False)
    g00_path = -np.hypot(te.x[:, 1], te.x[:, 2]) / 2
    p0 = g00_path * te.v[:, 0]
    assert np.max(np.abs(p0 - P0)) <= 1e-9
    assert np.max(np.abs(te.x[:, 1:] - tr.x)) <= 1e-6


def test_covariant_value_examples():
    s = State([1.0, 0.0], [0.3, 0.4])
    assert np.all(covariant_value(MechSystem(POLAR), s) == 0)
    assert covariant_value(HO, State([1.0], [0.0]))[0] == -1.0
    assert covariant_value(KEPLER, s) == pytest.approx([-1.0, 0.0])


def test_covariant_value_matches_trajectory_acceleration():
    """Along a flow in polar coordinates, nabla_u u from finite differences equals D-nabla."""
    sys = MechSystem(POLAR, potential="-1/r")
    tr = integrate(newton_field(sys), State([1.0, 0.0], [0.1, 1.1]), 1.0, step=1e-3, adaptive=False, functionals=False)
    h = 1e-3
    for i in range(5, len(tr) - 5, 97):
        acc = (tr.v[i + 1] - tr.v[i - 1]) / (2 * h)
        gam = POLAR.christoffel.second_values(tr.x[i])
        nabla = acc + np.einsum("jkl,k,l->j", gam, tr.v[i], tr.v[i])
        assert np.allclose(nabla, covariant_value(sys, tr.state(i)), atol=1e-6)


# projection ----------------------------------------------------------------------------


def test_project_free_particle():
    tr = integrate(newton_field(MechSystem(FLAT2)), State([0.0, 0.0], [0.7, -0.2]), 5.0)
    pr = project_trajectory(tr, ["x"])
    assert abs(pr.duration - tr.duration) <= 1e-10


def test_project_zero_velocity_fails():
    tr = integrate(newton_field(MechSystem(FLAT2)), State([0.0, 0.0], [0.7, 0.0]), 1.0)
    with pytest.raises(LightQuadricError):
        project_trajectory(tr, ["y"])


def test_project_oscillator_away_from_turning_points():
    # x-axis period 2 pi; stay within a quarter period of the x-turning points
    tr = integrate(newton_field(HO2), State([0.0, 0.5], [1.0, 0.0]), 1.2, step=1e-3, adaptive=False)
    pr = project_trajectory(tr, ["x"])
    assert abs(pr.duration - tr.duration) <= 1e-8


# intermediate integrals ----------------------------------------------------------------


def test_intermediate_integral_constant_field():
    r = intermediate_integral_residual(["1", "2"], MechSystem(FLAT2))
    assert r.evaluate({"x": 0.3, "y": 0.1}) == 0


def test_intermediate_integral_hamilton_jacobi_gradients():
    E = 0.5
    u1 = [f"sqrt(2*({E}) - x^2)"]
    r1 = intermediate_integral_residual(u1, HO)
    for x in np.linspace(-0.9, 0.9, 7):
        assert abs(r1.evaluate({"x": x})) <= 1e-8
    w = f"sqrt(2*({E} + 1/sqrt(x^2+y^2)))/sqrt(x^2+y^2)"
    r2 = intermediate_integral_residual([f"{w}*x", f"{w}*y"], KEPLER)
    rng = np.random.default_rng(10)
    for _ in range(20):
        p = rng.uniform(0.4, 1.5, 2) * rng.choice([-1, 1], 2)
        assert abs(r2.evaluate({"x": p[0], "y": p[1]})) <= 1e-8


def test_intermediate_integral_rejects_non_solution():
    r = intermediate_integral_residual(["2*x", "0"], MechSystem(FLAT2))
    assert r.evaluate({"x": 0.7, "y": 0.2}) == pytest.approx(4 * 0.7)


# Maupertuis ----------------------------------------------------------------------------


def test_kepler_orbit_is_jacobi_geodesic():
    E = -0.5
    h = jacobi_metric(KEPLER, E)
    s0 = KEPLER.state_at_energy([1.0, 0.0], [0.2, 1.0], E)
    tr = integrate(newton_field(KEPLER), s0, 6.0, tol=1e-12)
    for i in range(0, len(tr), 7):
        x, v, a = tr.x[i], tr.v[i], tr.a[i]
        r = np.hypot(*x)
        w = 2 * (E + 1 / r)  # ds/dt
        dw = -2 * (x @ v) / r**3  # dw/dt
        xp = v / w
        xpp = (a / w - v * dw / w**2) / w
        gam = h.christoffel.second_values(x)
        res = xpp + np.einsum("jkl,k,l->j", gam, xp, xp)
        assert np.max(np.abs(res)) <= 1e-6
