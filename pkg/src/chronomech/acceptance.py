"""
The acceptance suite: one named check per criterion.

Each check returns a :class:`CheckResult` listing the measured quantities
next to their bounds.  ``chronomech verify`` and ``tests/test_acceptance.py``
both run these.
"""

from __future__ import annotations

import math
import sys
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .dynamics import MechSystem, State, hertz_reduce, integrate, newton_field, project_trajectory, time_constrained_field
from .expr import parse
from .geometry import MetricField, laplacian
from .hamjac import InitialManifold, cycle_action, dSdE_check, propagate, seed_conormal, speeds
from .operators import DiffOperator, SymTensorField, sorted_multi_indices
from .quantize import (
    commutator_value,
    dequantize,
    kappa,
    kappa_identity_residuals,
    p0_squared,
    quantize,
    schrodinger_operator,
    symbol,
)
from .schrodgrid import Grid1D, discretize, eigensolve, evolve_cn

__all__ = ["CheckResult", "CHECKS", "run_check", "run_all"]


@dataclass
class Measure:
    label: str
    value: float
    bound: float
    mode: str = "le"  # "le": value <= bound, "gt": value > bound

    @property
    def ok(self) -> bool:
        if not math.isfinite(self.value):
            return False
        return self.value <= self.bound if self.mode == "le" else self.value > self.bound

    def __str__(self) -> str:
        op = "<=" if self.mode == "le" else ">"
        return f"{self.label}={self.value:.3e} ({op} {self.bound:.0e})"


@dataclass
class CheckResult:
    name: str
    title: str
    measures: list[Measure] = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.measures) and all(m.ok for m in self.measures)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = self.error or "; ".join(str(m) for m in self.measures)
        return f"{status} {self.name}: {self.title} [{detail}] ({self.seconds:.1f}s)"


def _flat(n: int) -> MetricField:
    return MetricField(["x", "y", "z", "w"][:n], [["1" if i == j else "0" for j in range(n)] for i in range(n)])


def _kepler() -> MechSystem:
    return MechSystem(_flat(2), potential="-1/sqrt(x^2+y^2)")


def _oscillator() -> MechSystem:
    return MechSystem(_flat(1), potential="0.5*x^2")


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


# checks ----------------------------------------------------------------------------------


def check_kepler_period_law() -> list[Measure]:
    kep = _kepler()
    energies = [-0.5, -0.25, -0.125]
    periods = [cycle_action(kep, E, kep.state_at_energy([1, 0], [0, 1], E)).T for E in energies]
    c = [T**2 * (-E) ** 3 for T, E in zip(periods, energies)]
    spread = (max(c) - min(c)) / np.mean(c)
    slope = np.polyfit(np.log(-np.array(energies)), np.log(periods), 1)[0]
    return [Measure("T^2(-E)^3 spread", spread, 1e-4), Measure("|slope+1.5|", abs(slope + 1.5), 1e-3)]


def check_kepler_action_law() -> list[Measure]:
    kep = _kepler()
    energies = [-0.5, -0.25, -0.125]
    cycles = [cycle_action(kep, E, kep.state_at_energy([1, 0], [0, 1], E)) for E in energies]
    k = [cy.S * math.sqrt(-E) for cy, E in zip(cycles, energies)]
    spread = (max(k) - min(k)) / np.mean(k)
    s_over_e = max(_rel(cy.S / E, -2 * cy.T) for cy, E in zip(cycles, energies))
    t0 = max(_rel(cy.t0, -4 * cy.T) for cy in cycles)
    return [
        Measure("S sqrt(-E) spread", spread, 1e-3),
        Measure("S/E vs -2T", s_over_e, 1e-3),
        Measure("tau-2t vs -4T", t0, 1e-3),
    ]


def check_dSdE_equals_t() -> list[Measure]:
    kep = dSdE_check(_kepler(), -0.5, 1e-3, x0=[1, 0], direction=[0, 1])
    ho = dSdE_check(_oscillator(), 0.5, 1e-3, x0=[0], direction=[1])
    return [
        Measure("Kepler rel err", kep.rel_error, 1e-3),
        Measure("HO |dS/dE-2pi|", abs(ho.dSdE - 2 * math.pi), 1e-6),
    ]


def check_oscillator_period_coincidence() -> list[Measure]:
    ho = _oscillator()
    out = []
    for E in (0.5, 2.0):
        cy = cycle_action(ho, E, ho.state_at_energy([0], [1], E))
        out.append(Measure(f"|tau-T|/T at E={E}", abs(cy.tau - cy.T) / cy.T, 1e-6))
    return out


def check_duration_absoluteness() -> list[Measure]:
    g = _flat(2)
    out = []
    free = MechSystem(g)
    tr = integrate(newton_field(free), State([0, 0], [1, 0.5]), 3.0, tol=1e-11)
    out.append(Measure("free", abs(project_trajectory(tr, ["x"]).t[-1] - tr.t[-1]), 1e-8))
    ho = MechSystem(g, potential="0.5*x^2+0.5*y^2")
    # x-velocity cos(lambda) stays positive over [0, 1.2]
    tr = integrate(newton_field(ho), State([0, 0.3], [1, 0.2]), 1.2, tol=1e-11)
    out.append(Measure("HO", abs(project_trajectory(tr, ["x"]).t[-1] - tr.t[-1]), 1e-8))
    return out


def check_time_constraint_conservative() -> list[Measure]:
    U = "0.5*x^2+0.3*y+2+0.1*x*y"
    ext = MechSystem(
        MetricField(["t", "x", "y"], [[f"-2*({U})", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
    )
    constrained = time_constrained_field(ext, ["1", "0", "0"])
    newton = newton_field(MechSystem(_flat(2), potential=U))
    rng = np.random.default_rng(6)
    err = 0.0
    tangency = 0.0
    for _ in range(100):
        x = rng.uniform(-1, 1, 3)
        v = np.r_[1.0, rng.uniform(-1, 1, 2)]
        a = constrained.acceleration(x, v)
        err = max(err, float(np.max(np.abs(a[1:] - newton.acceleration(x[1:], v[1:])))))
        tangency = max(tangency, abs(a[0]))
    return [Measure("|a_bar - a_newton|", err, 1e-10), Measure("|D_bar t_dot|", tangency, 1e-10)]


def check_hertz_reduction() -> list[Measure]:
    from .cli import load

    desc = load("hertz_kepler.json")
    ext, P0 = desc.system, float(desc.P0)
    red = hertz_reduce(ext, P0, desc.time_coordinate)
    s0 = desc.initial()
    g00 = desc.metric.values(s0.x)[0, 0]
    if abs(g00 * s0.v[0] - P0) > 1e-12:
        raise ValueError("initial state is not on p0 = P0")
    step = 0.002
    te = integrate(newton_field(ext), s0, 10.0, step=step, adaptive=False, functionals=False)
    tr = integrate(newton_field(red), State(s0.x[1:], s0.v[1:]), 10.0, step=step, adaptive=False)
    p0 = np.array([desc.metric.values(x)[0, 0] * v[0] for x, v in zip(te.x, te.v)])
    return [
        Measure("max |x_ext - x_red|", float(np.max(np.abs(te.x[:, 1:] - tr.x))), 1e-6),
        Measure("|p0 drift|", float(np.max(np.abs(p0 - P0))), 1e-9),
    ]


def _random_functions(coords, rng, count):
    a, b = coords[:2]
    out = []
    for _ in range(count):
        c = rng.uniform(-1, 1, 4)
        out.append(
            parse(
                f"{c[0]:.6f}*{a}^3*{b} + {c[1]:.6f}*sin({a}+{b}) + {c[2]:.6f}*exp(0.3*{a})*cos({b}) + {c[3]:.6f}*{b}^2",
                coords,
            )
        )
    return out


def _random_tensor(coords, rng, max_degree=3):
    terms = {}
    a, b = coords[:2]
    for r in range(max_degree + 1):
        for m in sorted_multi_indices(len(coords), r):
            c = rng.uniform(-1, 1, 2)
            terms[(0, m)] = parse(f"{c[0]:.6f}*{a}^{r} + {c[1]:.6f}*cos({b}+{r})", coords)
    return SymTensorField(coords, terms)


def _random_operator(coords, rng, hbar):
    n = len(coords)
    terms = {}
    a, b = coords[:2]
    for r in range(4):
        for m in sorted_multi_indices(n, r):
            alpha = tuple(m.count(i) for i in range(n))
            c = rng.uniform(-1, 1, 2)
            k = int(rng.integers(0, 4))
            terms[(k, alpha)] = parse(f"{c[0]:.6f}*{b}^2 + {c[1]:.6f}*sin({a})", coords)
    return DiffOperator(coords, terms, hbar)


def check_quantization_identities() -> list[Measure]:
    rng = np.random.default_rng(8)
    hbar = 0.7
    polar = MetricField(["r", "th"], [["1", "0"], ["0", "r^2"]])
    flat = MetricField(["x", "y"], [["1", "0"], ["0", "1"]])

    def points(g, count):
        if g is polar:
            return [[rng.uniform(0.5, 2.0), rng.uniform(-3, 3)] for _ in range(count)]
        return [list(rng.uniform(-2, 2, 2)) for _ in range(count)]

    # quantized metric tensor against -hbar^2 Laplacian
    Q = quantize(SymTensorField.metric(polar), polar, hbar)
    lap = laplacian(polar)
    lap_err = 0.0
    for f in _random_functions(polar.coords, rng, 20):
        for p in points(polar, 3):
            lap_err = max(lap_err, abs(Q.value(f, p) + hbar**2 * lap.value(f, p)))

    tensor_err = 0.0
    op_err = 0.0
    for g in (flat, polar):
        phi = _random_tensor(g.coords, rng)
        back = dequantize(quantize(phi, g, hbar), g)
        P = _random_operator(g.coords, rng, hbar)
        P2 = quantize(dequantize(P, g), g, hbar)
        for p in points(g, 100):
            a, b = phi.values(p), back.values(p)
            tensor_err = max(tensor_err, max(abs(a.get(m, 0) - b.get(m, 0)) for m in set(a) | set(b)))
            for alpha in set(P.multi_indices()) | set(P2.multi_indices()):
                op_err = max(op_err, abs(P.coefficient_value(alpha, p) - P2.coefficient_value(alpha, p)))

    sigma = symbol(Q, 2)
    sig_err = 0.0
    inv = polar.inverse
    for p in points(polar, 20):
        b = polar.binding(p)
        for m in sorted_multi_indices(2, 2):
            sig_err = max(sig_err, abs(sigma.component_value(m, p) - inv[m[0]][m[1]].evaluate(b)))
    return [
        Measure("quantize(g) + hbar^2 Lap", lap_err, 1e-10),
        Measure("deq(q(Phi)) - Phi", tensor_err, 1e-10),
        Measure("q(deq(P)) - P", op_err, 1e-10),
        Measure("sigma^2 - g^rs", sig_err, 0.0),
    ]


def check_kappa_behaviour() -> list[Measure]:
    rng = np.random.default_rng(9)
    coords = ["t", "x", "y"]
    static = MetricField(coords, [["-(1+x^2)", "0", "0"], ["0", "1+y^2", "0"], ["0", "0", "2+sin(x)"]])
    samples = [list(rng.uniform(-1, 1, 3)) for _ in range(20)]
    k = kappa(static, samples)
    k_max = max(abs(k.evaluate(static.binding(p))) for p in samples)
    dyn = MetricField(
        coords, [["-(1+x^2)*exp(0.2*t)", "0", "0"], ["0", "exp(t)*(1+y^2)", "0"], ["0", "0", "exp(0.5*t)"]]
    )
    pts = [list(rng.uniform(-1, 1, 3)) for _ in range(100)]
    ident = float(np.max(np.abs(kappa_identity_residuals(dyn, pts))))
    p0sq = p0_squared(dyn, 1.0)
    lap_hat = quantize(SymTensorField.metric(dyn), dyn, 1.0)
    f = parse("x^2*y + sin(t)*x + cos(y)", coords)
    witness = max(abs(commutator_value(p0sq, lap_hat, f, p)) for p in pts[:5])
    return [
        Measure("static |kappa|", k_max, 1e-12),
        Measure("identity residual", ident, 1e-10),
        Measure("|[p0^2, Lap] f|", witness, 1e-6, mode="gt"),
    ]


def check_grid_quantum() -> list[Measure]:
    ho = _oscillator()
    grid = Grid1D(20.0, 1024)
    H = discretize(schrodinger_operator(ho, 1.0), grid)
    E0, psi = eigensolve(H, 1)[0]
    psi = grid.normalized(psi)
    T = 2 * math.pi
    steps = 10_000
    ev = evolve_cn(H, psi, T / steps, steps, grid)
    phase = float(np.angle(ev.overlaps[-1]))
    phase_err = abs(math.remainder(phase + T * E0, 2 * math.pi))
    x = grid.interior
    coherent = np.pi**-0.25 * np.exp(-((x - 2.0) ** 2) / 2)
    ev2 = evolve_cn(H, coherent, T / 2000, 2000, grid)
    classical = integrate(newton_field(ho), State([2.0], [0.0]), T, step=T / 2000, adaptive=False, functionals=False)
    track = float(np.max(np.abs(ev2.xmean - classical.x[:, 0])))
    return [
        Measure("|E0-0.5|/0.5", abs(E0 - 0.5) / 0.5, 1e-3),
        Measure("norm drift", ev.norm_drift, 1e-10),
        Measure("phase error", phase_err, 1e-3),
        Measure("coherent <x> vs classical", track, 1e-2),
    ]


def check_de_broglie_split() -> list[Measure]:
    U, E, d = 0.3, 1.7, 1e-4
    q = lambda e: e / speeds(U, e)[0]  # noqa: E731  (E/v)
    fd = 2 * d / (q(E + d) - q(E - d))
    u = speeds(U, E)[1]
    free = MechSystem(_flat(2))
    Efree = 0.5
    bundle = propagate(seed_conormal(InitialManifold.from_point([0, 0]), free, Efree, 12), free, 4.0)
    dev = 0.0
    for c in bundle.ok:
        tau, t = bundle.tau(c), c.trajectory.t
        dev = max(dev, float(np.max(np.abs(np.diff(tau) / np.diff(t) - 2.0))))
    if bundle.failures:
        raise RuntimeError(f"{len(bundle.failures)} characteristics failed")
    return [Measure("|dE/d(E/v) - u|", abs(fd - u), 1e-6), Measure("|dtau/dt - 2|", dev, 1e-9)]


CHECKS: dict[str, tuple[str, Callable[[], list[Measure]]]] = {
    "kepler_period_law": ("Kepler T^2 (-E)^3 constant, log-slope -3/2", check_kepler_period_law),
    "kepler_action_law": ("Kepler S sqrt(-E) constant, S/E = -2T, tau - 2t = -4T", check_kepler_action_law),
    "dSdE_equals_t": ("central difference of cycle action equals the period", check_dSdE_equals_t),
    "oscillator_period_coincidence": ("oscillator tau and t periods coincide", check_oscillator_period_coincidence),
    "duration_absoluteness": ("projected duration equals source duration", check_duration_absoluteness),
    "time_constraint_conservative": ("constrained geodesic field is the Newton field", check_time_constraint_conservative),
    "hertz_reduction": ("extended geodesic flow projects to the reduced flow", check_hertz_reduction),
    "quantization_identities": ("quantize/dequantize/symbol identities", check_quantization_identities),
    "kappa_behaviour": ("kappa vanishes for static metrics; identity; commutator witness", check_kappa_behaviour),
    "grid_quantum": ("grid oscillator spectrum, unitarity, phase, coherent state", check_grid_quantum),
    "de_broglie_split": ("de Broglie relation and d tau/dt = 2", check_de_broglie_split),
}


def run_check(name: str) -> CheckResult:
    title, fn = CHECKS[name]
    t0 = time.perf_counter()
    res = CheckResult(name, title)
    try:
        res.measures = fn()
    except Exception as exc:  # a crashing check is a failing check
        res.error = f"{type(exc).__name__}: {exc}"
    res.seconds = time.perf_counter() - t0
    return res


def run_all(names=None, stream=None) -> list[CheckResult]:
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    out = []
    for n in names:
        r = run_check(n)
        if stream is not None:
            print(r.line(), file=stream, flush=True)
        out.append(r)
    return out


if __name__ == "__main__":  # pragma: no cover
    sys.exit(0 if all(r.passed for r in run_all(stream=sys.stdout)) else 1)
