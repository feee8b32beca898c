import math
import re

import numpy as np
import pytest

from chronomech.dynamics import MechSystem
from chronomech.expr import parse
from chronomech.geometry import MetricError, MetricField, laplacian
from chronomech.operators import DiffOperator, SymTensorField, sorted_multi_indices
from chronomech.quantize import (
    QuantizeError,
    commutator_value,
    dequantize,
    hamiltonian_of,
    hertz_separation,
    kappa,
    kappa_identity_residuals,
    p0_squared,
    quantize,
    schrodinger_operator,
    symbol,
)

HBAR = 0.7
FLAT1 = MetricField(["x"], [["1"]])
FLAT2 = MetricField(["x", "y"], [["1", "0"], ["0", "1"]])
POLAR = MetricField(["r", "th"], [["1", "0"], ["0", "r^2"]])
SKEW = MetricField(["x", "y"], [["2+sin(y)", "0.3*x"], ["0.3*x", "1+x^2"]])


def random_points(g, count, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.uniform(0.5, 2.0, g.n) for _ in range(count)]


def random_tensor(g, seed, max_degree=3):
    rng = np.random.default_rng(seed)
    c = g.coords
    pool = [f"{c[0]}", f"{c[0]}*{c[-1]}", f"sin({c[-1]})", f"{c[0]}^2", "1", f"exp(0.3*{c[0]})"]
    comps = {}
    for r in range(max_degree + 1):
        for m in sorted_multi_indices(g.n, r):
            a, b = rng.choice(pool, 2)
            comps[m] = parse(f"{rng.uniform(-1, 1):.4f}*{a} + {rng.uniform(-1, 1):.4f}*{b}", c)
    return SymTensorField.from_components(c, comps)


def assert_same_tensor(a, b, points, tol):
    keys = set(a.multi_indices()) | set(b.multi_indices())
    for p in points:
        for m in keys:
            assert abs(a.component_value(m, p) - b.component_value(m, p)) <= tol, (m, p)


def assert_same_operator(a, b, points, tol):
    keys = set(a.multi_indices()) | set(b.multi_indices())
    for p in points:
        for alpha in keys:
            assert abs(a.coefficient_value(alpha, p) - b.coefficient_value(alpha, p)) <= tol, (alpha, p)


def test_scalar_quantizes_to_multiplication():
    phi = SymTensorField(["x", "y"], {(0, ()): parse("x^2*y", ["x", "y"])})
    op = quantize(phi, SKEW, HBAR)
    assert list(op.terms) == [(0, (0, 0))]
    assert op.value(parse("1 + x", ["x", "y"]), [2.0, 3.0]) == 36.0


def test_first_order_flat():
    op = quantize(SymTensorField(["x"], {(0, (0,)): 1.0}), FLAT1, HBAR)
    assert list(op.terms) == [(1, (1,))]
    assert op.coefficient_value((1,), [0.3]) == pytest.approx(-1j * HBAR)


@pytest.mark.parametrize("g", [FLAT2, POLAR, SKEW])
def test_metric_tensor_quantizes_to_laplacian(g):
    op = quantize(SymTensorField.metric(g), g, HBAR)
    lap = laplacian(g).times_hbar_power(2).with_hbar(HBAR)
    assert_same_operator(op, lap, random_points(g, 20), 1e-12)
    rng = np.random.default_rng(1)
    c = g.coords
    for k in range(20):
        a, b = rng.uniform(-1, 1, 2)
        f = parse(f"{a:.4f}*{c[0]}^3*{c[1]} + sin({b:.4f}*{c[0]}*{c[1]}) + exp({c[1]}/(1+{c[0]}^2))", c)
        p = random_points(g, 1, seed=k)[0]
        assert abs(op.value(f, p) - (-(HBAR**2)) * laplacian(g).value(f, p)) <= 1e-10


def test_polar_laplacian_quantization_against_hand_formula():
    op = quantize(SymTensorField.metric(POLAR), POLAR, HBAR)
    f = parse("r^3*cos(2*th) + exp(r)*th", ["r", "th"])
    for r, th in [(0.8, 0.3), (1.7, -1.1)]:
        f_r = 3 * r**2 * math.cos(2 * th) + math.exp(r) * th
        f_rr = 6 * r * math.cos(2 * th) + math.exp(r) * th
        f_tt = -4 * r**3 * math.cos(2 * th)
        assert op.value(f, [r, th]) == pytest.approx(-(HBAR**2) * (f_rr + f_r / r + f_tt / r**2), abs=1e-12)


@pytest.mark.parametrize("g", [FLAT2, POLAR, SKEW])
@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_symbol_recovers_homogeneous_tensor(g, r):
    phi = random_tensor(g, seed=10 + r).homogeneous(r)
    recovered = symbol(quantize(phi, g, HBAR), r)
    assert_same_tensor(recovered, phi, random_points(g, 10), 1e-12)


def test_symbol_examples():
    lap = quantize(SymTensorField.metric(POLAR), POLAR, HBAR)
    assert_same_tensor(symbol(lap, 2), SymTensorField.metric(POLAR), random_points(POLAR, 5), 1e-14)
    raw = symbol(lap, 2, strip=False)
    assert raw.component_value((0, 0), [1.0, 0.0]) == pytest.approx(-(HBAR**2))
    d = quantize(SymTensorField(["x"], {(0, (0,)): 1.0}), FLAT1, HBAR)
    assert symbol(d, 1).component_value((0,), [0.0]) == 1.0
    assert symbol(d, 2).terms == {}
    with pytest.raises(QuantizeError):
        symbol(d, 4)
    with pytest.raises(QuantizeError):
        symbol(d, -1)


@pytest.mark.parametrize("g", [FLAT2, POLAR, SKEW])
def test_dequantize_quantize_round_trip(g):
    pts = random_points(g, 100, seed=3)
    phi = random_tensor(g, seed=4)
    P = quantize(phi, g, HBAR)
    back = dequantize(P, g)
    assert_same_tensor(back, phi, pts, 1e-10)
    assert_same_operator(quantize(back, g, HBAR), P, pts, 1e-10)


def test_random_operator_round_trip():
    rng = np.random.default_rng(5)
    terms = {}
    for r in range(4):
        for m in sorted_multi_indices(2, r):
            alpha = tuple(m.count(i) for i in range(2))
            terms[(r, alpha)] = parse(f"{rng.uniform(-1, 1):.3f}*r + {rng.uniform(-1, 1):.3f}*sin(th)", ["r", "th"])
    P = DiffOperator(["r", "th"], terms, HBAR)
    back = quantize(dequantize(P, POLAR), POLAR, HBAR)
    assert_same_operator(back, P, random_points(POLAR, 100, seed=6), 1e-10)


def test_dequantize_schrodinger_is_hamiltonian():
    sys = MechSystem(POLAR, potential="-1/r + 0.1*th^2")
    P = schrodinger_operator(sys, HBAR)
    phi = dequantize(P, POLAR)
    expected = SymTensorField.metric(POLAR).scaled(0.5) + SymTensorField(["r", "th"], {(0, ()): sys.potential})
    assert_same_tensor(phi, expected, random_points(POLAR, 20), 1e-12)
    H = hamiltonian_of(P, POLAR)
    rng = np.random.default_rng(7)
    for x in random_points(POLAR, 20, seed=8):
        p = rng.normal(size=2)
        T = 0.5 * (p[0] ** 2 + p[1] ** 2 / x[0] ** 2)
        assert H(x, p) == pytest.approx(T + sys.potential_value(x), abs=1e-12)


def test_hamiltonian_examples():
    lap = quantize(SymTensorField.metric(POLAR), POLAR, HBAR)
    H = hamiltonian_of(lap, POLAR)
    assert H([2.0, 0.1], [1.0, 3.0]) == pytest.approx(1.0 + 9.0 / 4.0, abs=1e-14)
    mult = DiffOperator.multiplication(["x"], parse("x^3", ["x"]), HBAR)
    assert hamiltonian_of(mult, FLAT1)([2.0], [5.0]) == pytest.approx(8.0)
    d = DiffOperator.derivative(["x"], (1,), k=1, hbar=HBAR)
    H = hamiltonian_of(d, FLAT1)
    assert H([0.3], [1.7]) == pytest.approx(1.7)
    assert H.degree == 1


def test_order_zero_dequantizes_to_scalar():
    P = DiffOperator.multiplication(["r", "th"], parse("r*sin(th)", ["r", "th"]), HBAR)
    phi = dequantize(P, POLAR)
    assert phi.degrees == [0]
    assert phi.component_value((), [2.0, 0.5]) == pytest.approx(2 * math.sin(0.5))


def test_schrodinger_examples():
    ho = schrodinger_operator(MechSystem(FLAT1, potential="0.5*4*x^2"), HBAR)
    assert ho.coefficient_value((2,), [0.3]) == pytest.approx(-0.5 * HBAR**2)
    assert ho.coefficient_value((0,), [0.3]) == pytest.approx(2 * 0.09)
    assert ho.coefficient_value((1,), [0.3]) == 0
    free = schrodinger_operator(MechSystem(POLAR), HBAR)
    r = 1.3
    assert free.coefficient_value((2, 0), [r, 0]) == pytest.approx(-0.5 * HBAR**2)
    assert free.coefficient_value((1, 0), [r, 0]) == pytest.approx(-0.5 * HBAR**2 / r)
    assert free.coefficient_value((0, 2), [r, 0]) == pytest.approx(-0.5 * HBAR**2 / r**2)
    assert free.coefficient_value((1, 1), [r, 0]) == 0


def test_non_conservative_rejected():
    sys = MechSystem(FLAT1, force_form=["x_dot"])
    with pytest.raises(QuantizeError):
        schrodinger_operator(sys, HBAR)


def test_degree_cap():
    phi = SymTensorField(["x"], {(0, (0, 0, 0, 0)): 1.0})
    with pytest.raises(QuantizeError):
        quantize(phi, FLAT1, HBAR)
    P = DiffOperator.derivative(["x"], (4,), hbar=HBAR)
    with pytest.raises(QuantizeError):
        dequantize(P, FLAT1)


def test_linear_chart_change():
    """Quantizing in two charts related by x = u + v/2, y = v gives the same action on functions."""
    A = np.array([[1.0, 0.5], [0.0, 1.0]])
    Ainv = np.linalg.inv(A)
    gx = [["2+sin(y)", "0.3*x"], ["0.3*x", "1+x^2"]]

    def sub(text):
        return re.sub(r"\by\b", "(v)", re.sub(r"\bx\b", "(u+0.5*v)", text))

    g1 = MetricField(["x", "y"], gx)
    # g'_ab = A^i_a A^j_b g_ij
    gu = [[" + ".join(f"({A[i, a] * A[j, b]})*({sub(gx[i][j])})" for i in range(2) for j in range(2)) for b in range(2)] for a in range(2)]
    g2 = MetricField(["u", "v"], gu)
    comps = {(0, 0): "x*y", (0, 1): "1+y^2", (1, 1): "sin(x)", (0,): "x", (1,): "y^2", (): "x+y"}
    phi1 = SymTensorField.from_components(["x", "y"], comps)
    # transform contravariant components by A^{-1}
    comps2 = {(): sub(comps[()])}
    for a in range(2):
        comps2[(a,)] = " + ".join(f"({Ainv[a, i]})*({sub(comps[(i,)])})" for i in range(2))
    for a, b in [(0, 0), (0, 1), (1, 1)]:
        terms = []
        for i in range(2):
            for j in range(2):
                key = tuple(sorted((i, j)))
                terms.append(f"({Ainv[a, i] * Ainv[b, j]})*({sub(comps[key])})")
        comps2[(a, b)] = " + ".join(terms)
    phi2 = SymTensorField.from_components(["u", "v"], comps2)
    f1 = "x^2*sin(y) + exp(0.3*x*y)"
    op1, op2 = quantize(phi1, g1, HBAR), quantize(phi2, g2, HBAR)
    for uv in [np.array([0.2, 0.7]), np.array([-0.5, 1.1])]:
        xy = A @ uv
        v1 = op1.value(parse(f1, ["x", "y"]), xy)
        v2 = op2.value(parse(sub(f1), ["u", "v"]), uv)
        assert abs(v1 - v2) <= 1e-10


# time-adapted metrics ------------------------------------------------------------------

STATIC = MetricField(["t", "x", "y"], [["-(1+x^2)", "0", "0"], ["0", "1+y^2", "0"], ["0", "0", "2"]])
EXPANDING = MetricField(["t", "x", "y"], [["-1", "0", "0"], ["0", "exp(t)", "0"], ["0", "0", "exp(t)"]])
MIXED = MetricField(["t", "x", "y"], [["-(1+x^2)", "0", "0"], ["0", "exp(t)", "0"], ["0", "0", "exp(t)*(1+x^2)"]])


def test_kappa_static_vanishes():
    pts = random_points(STATIC, 20, seed=11)
    k = kappa(STATIC, pts)
    assert max(abs(k.evaluate(STATIC.binding(p))) for p in pts) <= 1e-12
    flat = MetricField(["t", "x"], [["-1", "0"], ["0", "1"]])
    assert kappa(flat, [[0.0, 0.0]]).evaluate({"t": 0, "x": 0}) == 0


def test_kappa_expanding():
    pts = random_points(EXPANDING, 10, seed=12)
    k = kappa(EXPANDING, pts)
    # Laplacian of t is -1 here, so kappa = 1/2
    for p in pts:
        assert k.evaluate(EXPANDING.binding(p)) == pytest.approx(0.5, abs=1e-12)
    assert np.max(np.abs(kappa_identity_residuals(EXPANDING, pts))) <= 1e-10


def test_kappa_identity_general():
    pts = random_points(MIXED, 20, seed=13)
    assert np.max(np.abs(kappa_identity_residuals(MIXED, pts))) <= 1e-10
    # Laplacian of t from an independent divergence-form finite difference
    k = kappa(MIXED, pts)
    for p in pts[:3]:
        h = 1e-5

        def flux(q):
            g = MIXED.values(q)
            return math.sqrt(abs(np.linalg.det(g))) * np.linalg.inv(g)[0, 0]

        e = np.array([h, 0, 0])
        lap_t = (flux(p + e) - flux(p - e)) / (2 * h) / math.sqrt(abs(np.linalg.det(MIXED.values(p))))
        g00 = MIXED.values(p)[0, 0]
        # grad(t) log sqrt|g00| = g^00 d_t(...) = 0 since g00 does not depend on t
        assert k.evaluate(MIXED.binding(p)) == pytest.approx(-0.5 * lap_t, abs=1e-8)
        assert g00 < 0


def test_kappa_requires_adapted_metric():
    g = MetricField(["t", "x"], [["-1", "0.2"], ["0.2", "1"]])
    with pytest.raises(MetricError):
        kappa(g, [[0.0, 0.0]])


def test_p0_squared_structure():
    op = p0_squared(MIXED, HBAR)
    for p in random_points(MIXED, 10, seed=14):
        gam = MIXED.christoffel.second_values(p)
        assert op.coefficient_value((2, 0, 0), p) == pytest.approx(-(HBAR**2), abs=1e-12)
        for mu, alpha in [(1, (0, 1, 0)), (2, (0, 0, 1))]:
            assert abs(op.coefficient_value(alpha, p) - HBAR**2 * gam[mu, 0, 0]) <= 1e-10
        assert abs(op.coefficient_value((1, 0, 0), p)) <= 1e-10


def test_p0_squared_does_not_commute_with_laplacian():
    lap = laplacian(MIXED)
    f = parse("t^2*x + sin(y)*t^3", ["t", "x", "y"])
    vals = [abs(commutator_value(p0_squared(MIXED, HBAR), lap, f, p)) for p in random_points(MIXED, 5, seed=15)]
    assert max(vals) > 1e-6
    # on the flat product the two commute
    flat = MetricField(["t", "x"], [["-1", "0"], ["0", "1"]])
    g = parse("t^2*x^3 + sin(t*x)", ["t", "x"])
    assert abs(commutator_value(p0_squared(flat, HBAR), laplacian(flat), g, [0.3, 0.4])) <= 1e-12


# Hertz separation ----------------------------------------------------------------------


def _ext(g00):
    return MechSystem(
        MetricField(["t", "x", "y"], [[g00, "0", "0"], ["0", "1", "0"], ["0", "0", "1"]], sample_points=[[0, 1, 0], [1, 0.5, 1.5]])
    )


def test_hertz_separation_kepler():
    sep = hertz_separation(_ext("-sqrt(x^2+y^2)/2"), 1.0, E=-0.5, hbar=HBAR)
    expected = schrodinger_operator(MechSystem(FLAT2, potential="-1/sqrt(x^2+y^2)"), HBAR)
    assert_same_operator(sep.operator, expected, random_points(FLAT2, 10, seed=16), 1e-12)
    assert sep.exponent == pytest.approx(1j / HBAR)
    assert sep.holds is False
    assert sep.required_P0 == pytest.approx(0.5)


def test_hertz_separation_time_equation():
    E = -0.5
    sep = hertz_separation(_ext("-sqrt(x^2+y^2)/2"), -E, E=E, hbar=HBAR)
    assert sep.holds
    # Psi = exp(i P0 x0 / hbar) Phi with x0 = c t0 gives i hbar dPsi/dt0 = -c P0 Psi
    c = 1.0
    assert (1j * HBAR) * (sep.exponent * c) == pytest.approx(-c * sep.P0)
    assert hertz_separation(_ext("-1"), 1.0).holds is None


def test_hertz_separation_constant_g00():
    sep = hertz_separation(_ext("-2"), 1.0, hbar=HBAR)
    free = schrodinger_operator(MechSystem(FLAT2), HBAR)
    shift = DiffOperator.multiplication(["x", "y"], -0.25, HBAR)
    assert_same_operator(sep.operator, free + shift, random_points(FLAT2, 5), 1e-14)
