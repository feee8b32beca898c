"""
Evolution fields on TM and their numerical flow.

A :class:`SecondOrderField` is stored symbolically: its accelerations are
Expressions over the coordinates and the velocity symbols ``<name>_dot``,
compiled once into a single straight-line function.  Integration uses RK4 or
an adaptive Dormand-Prince 5(4) pair; the action, duration and length
functionals ride along as extra quadrature components of the same scheme
(for RK4 this is exactly Simpson's rule with the midpoint stage values).
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .expr import ZERO, Expression, add, as_expression, compile_many, div, mul, neg, parse, sub, symbol
from .geometry import EPS_REG, MetricError, MetricField, RegularityError, _sum

__all__ = [
    "velocity_name",
    "MechSystem",
    "State",
    "Trajectory",
    "SecondOrderField",
    "IntegrationError",
    "LightQuadricError",
    "HertzReductionError",
    "newton_field",
    "time_constrained_field",
    "hertz_reduce",
    "covariant_value",
    "integrate",
    "project_trajectory",
    "intermediate_integral_residual",
    "jacobi_metric",
    "rk4_step",
    "dopri_step",
    "dopri_steps",
    "augmented_rhs",
    "constrained_acceleration_ii",
]


def velocity_name(coord: str) -> str:
    return f"{coord}_dot"


class IntegrationError(RuntimeError):
    pass


class LightQuadricError(RegularityError):
    """``theta_dot = 2T`` came within the regularity threshold of zero."""

    def __init__(self, message: str, lam: float | None = None):
        super().__init__(message)
        self.lam = lam


class HertzReductionError(MetricError):
    pass


class MechSystem:
    """Mechanical system ``(M, T2, alpha)``.

    Give either ``potential`` (then ``alpha = dU``) or ``force_form``, a
    covector whose coefficients may also depend on the velocity symbols
    ``<coord>_dot``.  With neither the system is geodesic.
    """

    def __init__(self, metric: MetricField, potential=None, force_form=None):
        if potential is not None and force_form is not None:
            raise ValueError("give a potential or a force form, not both")
        self.metric = metric
        names = self.state_names
        if potential is not None:
            self.potential: Expression | None = (
                parse(potential, metric.coords) if isinstance(potential, str) else as_expression(potential)
            )
            self.force_form = [self.potential.partial(c) for c in metric.coords]
        else:
            self.potential = None
            if force_form is None:
                self.force_form = [ZERO] * metric.n
            else:
                if len(force_form) != metric.n:
                    raise ValueError("force form must have one coefficient per coordinate")
                self.force_form = [parse(a, names) if isinstance(a, str) else as_expression(a) for a in force_form]

    @property
    def coords(self) -> tuple[str, ...]:
        return self.metric.coords

    @property
    def n(self) -> int:
        return self.metric.n

    @property
    def velocities(self) -> tuple[str, ...]:
        return tuple(velocity_name(c) for c in self.coords)

    @property
    def state_names(self) -> tuple[str, ...]:
        return self.coords + self.velocities

    @property
    def conservative(self) -> bool:
        return self.potential is not None or all(a.is_zero() for a in self.force_form)

    @cached_property
    def kinetic(self) -> Expression:
        """``T = g_ij v^i v^j / 2`` over the state symbols."""
        v = [symbol(name) for name in self.velocities]
        g = self.metric.g
        terms = [mul(g[i][j], mul(v[i], v[j])) for i in range(self.n) for j in range(self.n)]
        return mul(as_expression(0.5), _sum(terms))

    @cached_property
    def hamiltonian(self) -> Expression:
        if self.potential is None:
            return self.kinetic
        return add(self.kinetic, self.potential)

    def state_binding(self, x, v) -> dict[str, float]:
        b = {c: float(a) for c, a in zip(self.coords, x)}
        b.update({name: float(a) for name, a in zip(self.velocities, v)})
        return b

    def energy(self, x, v) -> float:
        return self.hamiltonian.evaluate(self.state_binding(x, v))

    def potential_value(self, x) -> float:
        if self.potential is None:
            return 0.0
        return self.potential.evaluate(self.metric.binding(x))

    def state_at_energy(self, x, direction, E: float) -> State:
        """State at ``x`` moving along ``direction`` with ``H = E``."""
        x = np.asarray(x, dtype=float)
        d = np.asarray(direction, dtype=float)
        gd = float(d @ self.metric.values(x) @ d)
        kinetic = E - self.potential_value(x)
        if gd <= 0 or kinetic <= 0:
            raise ValueError(f"no state with energy {E} along {direction} at {list(x)}")
        return State(x, d * math.sqrt(2.0 * kinetic / gd))


@dataclass
class State:
    """Point ``(x, xdot)`` of TM."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        self.v = np.asarray(self.v, dtype=float).copy()
        if self.x.shape != self.v.shape:
            raise ValueError("position and velocity sizes differ")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.v])


class SecondOrderField:
    """Second-order equation ``D = v d/dx + a(x, v) d/dv``.

    ``accelerations`` are Expressions over ``system.state_names``.  ``guards``
    are ``(expression, message)`` pairs whose absolute value must stay above
    :data:`EPS_REG` wherever the field is evaluated.
    """

    def __init__(self, system: MechSystem, accelerations: Sequence[Expression], guards=(), name: str = ""):
        self.system = system
        self.accelerations = list(accelerations)
        self.guards = list(guards)
        self.name = name
        names = system.state_names
        self._fn = compile_many(self.accelerations + [system.kinetic, system.hamiltonian], names)
        # guards run first so a vanishing denominator is reported as such
        self._guard_fn = compile_many([gexpr for gexpr, _ in self.guards], names) if self.guards else None
        self._n = system.n

    @property
    def coords(self):
        return self.system.coords

    def evaluate(self, x, v) -> tuple[np.ndarray, float, float]:
        """Accelerations, kinetic energy and energy at a state."""
        if self._guard_fn is not None:
            for (_, message), value in zip(self.guards, self._guard_fn(*x, *v)):
                if abs(value) < EPS_REG:
                    raise RegularityError(f"{message} (value {value:.3e})")
        out = self._fn(*x, *v)
        n = self._n
        return np.array(out[:n]), out[n], out[n + 1]

    def acceleration(self, x, v) -> np.ndarray:
        return self.evaluate(x, v)[0]

    def __call__(self, lam: float, y: np.ndarray) -> np.ndarray:
        n = self._n
        a, _, _ = self.evaluate(y[:n], y[n : 2 * n])
        return np.concatenate([y[n : 2 * n], a])


def _accelerations(system: MechSystem) -> list[Expression]:
    """``a^j = -Gamma^j_{kl} v^k v^l - g^{ji} alpha_i``."""
    n = system.n
    v = [symbol(name) for name in system.velocities]
    gam = system.metric.christoffel.second
    alpha_up = system.metric.raise_index(system.force_form)
    out = []
    for j in range(n):
        quad = _sum(
            mul(gam[j][k][l], mul(v[k], v[l])) for k in range(n) for l in range(n) if not gam[j][k][l].is_zero()
        )
        out.append(neg(add(quad, alpha_up[j])))
    return out


def newton_field(system: MechSystem) -> SecondOrderField:
    """Field of the Newton equation ``xddot^j + Gamma^j_kl xdot^k xdot^l + alpha^j = 0``."""
    return SecondOrderField(system, _accelerations(system), name="newton")


def covariant_value(system: MechSystem, state: State) -> np.ndarray:
    """``D^nabla = -grad alpha`` at a state."""
    b = system.state_binding(state.x, state.v)
    ginv = system.metric.inverse_values(state.x)
    alpha = np.array([a.evaluate(b) for a in system.force_form])
    return -ginv @ alpha


def time_constrained_field(system: MechSystem, tau: Sequence) -> SecondOrderField:
    """Field ``D - (D tau_dot / |tau|^2) Grad tau`` tangent to ``tau_dot = const``.

    ``tau`` is a horizontal 1-form: coefficients over the coordinates and
    (optionally) the velocity symbols.  Velocity-dependent coefficients must
    satisfy ``v^i d tau_i / d v^j = 0`` (``tau`` the fibre derivative of a
    function 1-homogeneous in ``v``); otherwise ``tau_dot`` is not conserved.
    """
    n = system.n
    names = system.state_names
    tau = [parse(t, names) if isinstance(t, str) else as_expression(t) for t in tau]
    if len(tau) != n:
        raise ValueError("tau must have one coefficient per coordinate")
    v = [symbol(name) for name in system.velocities]
    acc = _accelerations(system)
    tau_dot = _sum(mul(tau[i], v[i]) for i in range(n))
    d_tau_dot = _sum(
        [mul(v[j], tau_dot.partial(system.coords[j])) for j in range(n)]
        + [mul(acc[j], tau_dot.partial(system.velocities[j])) for j in range(n)]
    )
    norm2 = system.metric.norm2_covector(tau)
    grad_tau = system.metric.raise_index(tau)
    factor = div(d_tau_dot, norm2)
    new_acc = [sub(acc[j], mul(factor, grad_tau[j])) for j in range(n)]
    field = SecondOrderField(system, new_acc, guards=[(norm2, "|tau|^2 below regularity threshold")], name="time-constrained")
    field.tau = tau
    field.tau_dot = tau_dot
    field.d_tau_dot = d_tau_dot
    return field


def constrained_acceleration_ii(system: MechSystem, tau: Sequence, state: State) -> np.ndarray:
    """Time-constrained acceleration for a 1-form ``tau`` on M, written with
    the covariant value and the second fundamental form of ``grad tau``.

    Independent of :func:`time_constrained_field`; the two must agree.
    """
    from .geometry import second_fundamental_form

    g = system.metric
    tau = [parse(t, g.coords) if isinstance(t, str) else as_expression(t) for t in tau]
    b = g.binding(state.x)
    tau_v = np.array([t.evaluate(b) for t in tau])
    ginv = g.inverse_values(state.x)
    grad_tau = ginv @ tau_v
    ii = second_fundamental_form(g.raise_index(tau), g)
    ii_vv = sum(ii[i][j].evaluate(b) * state.v[i] * state.v[j] for i in range(g.n) for j in range(g.n))
    d_nabla = covariant_value(system, state)
    a = newton_field(system).acceleration(state.x, state.v)
    norm2 = float(tau_v @ grad_tau)
    if abs(norm2) < EPS_REG:
        raise RegularityError("|tau|^2 below regularity threshold")
    return a - (float(tau_v @ d_nabla) + ii_vv) / norm2 * grad_tau


def hertz_reduce(ext: MechSystem, P0: float, time_coordinate: str | None = None, sample_points=None) -> MechSystem:
    """Project a geodesic system on ``M~ = R x M`` at ``p_0 = P0``.

    The extended metric must be adapted (``g_{0 mu} = 0``) with ``g^{00}`` and
    ``g_{mu nu}`` independent of ``x^0``; the result carries the metric
    ``g_{mu nu}`` and the potential ``U = g^{00} P0^2 / 2``.
    """
    g = ext.metric
    t = time_coordinate or g.coords[0]
    if t not in g.coords:
        raise HertzReductionError(f"unknown coordinate {t!r}")
    i0 = g.coords.index(t)
    rest = [i for i in range(g.n) if i != i0]
    for mu in rest:
        if not g.g[i0][mu].is_zero():
            raise HertzReductionError(f"metric is not adapted: g[{t}][{g.coords[mu]}] = {g.g[i0][mu]}")
    g00_up = g.inverse[i0][i0]
    points = sample_points if sample_points is not None else (g.regular_points or g.sample_points)
    if not points:
        raise HertzReductionError("no sample points to check x^0 independence")
    checks = [("g^00", g00_up)] + [
        (f"g[{g.coords[a]}][{g.coords[b]}]", g.g[a][b]) for a in rest for b in rest if a <= b
    ]
    for label, e in checks:
        d = e.partial(t)
        for p in points:
            val = d.evaluate(g.binding(p))
            if abs(val) > 1e-12:
                raise HertzReductionError(f"{label} depends on {t} (d/d{t} = {val:.3e} at {list(p)})")
    coords = [g.coords[i] for i in rest]
    metric = MetricField(coords, [[g.g[a][b] for b in rest] for a in rest])
    U = mul(as_expression(0.5 * P0 * P0), g00_up)
    if t in U.symbols:  # pragma: no cover - excluded by the check above unless samples are degenerate
        raise HertzReductionError(f"g^00 depends on {t}")
    reduced = MechSystem(metric, potential=U)
    reduced.metric.sample_points = [np.asarray(p, dtype=float)[rest] for p in points]
    reduced.metric.regular_points = list(reduced.metric.sample_points)
    return reduced


def jacobi_metric(system: MechSystem, E: float) -> MetricField:
    """Maupertuis metric ``2 (E - U) T2`` of a conservative system."""
    U = system.potential if system.potential is not None else ZERO
    return system.metric.scaled(mul(as_expression(2.0), sub(as_expression(float(E)), U)))


def intermediate_integral_residual(u: Sequence, system: MechSystem) -> Expression:
    """Coordinate norm of the 1-form ``u _| d(u _| T2) + dH(u)``.

    Vanishes exactly when the vector field ``u`` on M is an intermediate
    integral of the conservative system.
    """
    if not system.conservative:
        raise ValueError("system is not conservative")
    x = system.coords
    n = system.n
    u = [parse(c, x) if isinstance(c, str) else as_expression(c) for c in u]
    low = system.metric.lower(u)
    g = system.metric.g
    Hu = mul(as_expression(0.5), _sum(mul(g[i][j], mul(u[i], u[j])) for i in range(n) for j in range(n)))
    if system.potential is not None:
        Hu = add(Hu, system.potential)
    comps = []
    for j in range(n):
        curl = _sum(mul(u[i], sub(low[j].partial(x[i]), low[i].partial(x[j]))) for i in range(n))
        comps.append(add(curl, Hu.partial(x[j])))
    from .expr import call

    return call("sqrt", _sum(mul(c, c) for c in comps))


# integration ---------------------------------------------------------------------


def rk4_step(f: Callable, lam: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(lam, y)
    k2 = f(lam + h / 2, y + h / 2 * k1)
    k3 = f(lam + h / 2, y + h / 2 * k2)
    k4 = f(lam + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def dopri_step(f: Callable, lam: float, y: np.ndarray, h: float, k1: np.ndarray | None = None):
    """One Dormand-Prince step; returns ``(y_new, error_estimate, k_last)``.

    ``k_last`` is ``f`` at the new point (first-same-as-last).
    """
    ks = [f(lam, y) if k1 is None else k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks))
        ks.append(f(lam + _DP_C[i] * h, yi))
    y_new = y + h * sum(b * k for b, k in zip(_DP_B, ks) if b)
    err = h * sum(e * k for e, k in zip(_DP_E, ks) if e)
    return y_new, err, ks[-1]


def _error_norm(err, y0, y1, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.max(np.abs(err) / scale))


def dopri_steps(rhs: Callable, lam: float, y: np.ndarray, tol: float, h: float, lam_end: float | None = None, max_steps: int = 1_000_000):
    """Accepted Dormand-Prince steps as ``(lam0, y0, f(lam0, y0), lam1, y1)``.

    Runs until ``lam_end`` (hit exactly) or forever when it is ``None``.
    """
    k1 = rhs(lam, y)
    steps = 0
    scale = max(1.0, abs(lam_end)) if lam_end is not None else 1.0
    while lam_end is None or lam < lam_end:
        if steps >= max_steps:
            raise IntegrationError(f"step limit reached at lambda = {lam}")
        if lam_end is not None:
            h = min(h, lam_end - lam)
        y_new, err, k_last = dopri_step(rhs, lam, y, h, k1)
        enorm = _error_norm(err, y, y_new, tol, tol)
        if enorm <= 1.0:
            lam_new = lam + h
            if lam_end is not None and lam_end - lam_new < 1e-14 * scale:
                lam_new = lam_end
            yield lam, y, k1, lam_new, y_new
            lam, y, k1 = lam_new, y_new, k_last
            steps += 1
        factor = 0.9 * enorm ** (-0.2) if enorm > 0 else 5.0
        h = h * min(5.0, max(0.2, factor))
        if h < 1e-14 * max(scale, abs(lam)):
            raise IntegrationError(f"step size underflow at lambda = {lam}")


@dataclass
class Trajectory:
    """Samples of an integrated trajectory with accumulated functionals.

    ``S`` is the action, ``t`` the duration and ``ell`` the length; ``H`` is
    the energy (``T`` for non-conservative systems) at each sample.
    """

    coords: tuple[str, ...]
    lam: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    S: np.ndarray
    t: np.ndarray
    ell: np.ndarray
    H: np.ndarray
    theta_dot: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.lam)

    def state(self, i: int) -> State:
        return State(self.x[i], self.v[i])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def header(self) -> list[str]:
        return ["lambda", *self.coords, *(velocity_name(c) for c in self.coords), "S", "t", "ell", "H"]

    def rows(self):
        for i in range(len(self.lam)):
            yield [self.lam[i], *self.x[i], *self.v[i], self.S[i], self.t[i], self.ell[i], self.H[i]]

    def to_csv(self, target) -> None:
        """Write ``lambda, x..., xdot..., S, t, ell, H`` with ``%.12e`` floats to a path or open file."""
        if hasattr(target, "write"):
            self._write_csv(target)
            return
        with open(target, "w", newline="") as fh:
            self._write_csv(fh)

    def _write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.header())
        for row in self.rows():
            writer.writerow([f"{value:.12e}" for value in row])


def augmented_rhs(field: SecondOrderField, functionals: bool = True):
    """RHS on ``(x, v, S, t, ell)``; the last three are the functionals."""
    n = field._n

    def rhs(lam, y):
        x, v = y[:n], y[n : 2 * n]
        a, kin, _ = field.evaluate(x, v)
        theta_dot = 2.0 * kin
        # isolated turning points (v = 0) are removable: theta/theta_dot = 1 on D
        if functionals and abs(theta_dot) < EPS_REG and float(v @ v) > EPS_REG:
            raise LightQuadricError(f"|theta_dot| = {abs(theta_dot):.3e} below regularity threshold", lam)
        # dS = theta_dot dlam; dt = theta/theta_dot = dlam; dl = theta_dot / sqrt|theta_dot| dlam
        dell = math.copysign(math.sqrt(abs(theta_dot)), theta_dot)
        return np.concatenate([v, a, [theta_dot, 1.0, dell]])

    return rhs


def integrate(
    field: SecondOrderField,
    s0: State,
    span: float,
    step: float | None = None,
    adaptive: bool = True,
    tol: float = 1e-10,
    functionals: bool = True,
    max_steps: int = 1_000_000,
) -> Trajectory:
    """Integrate ``field`` from ``s0`` over the parameter interval ``[0, span]``.

    With ``adaptive`` the Dormand-Prince pair is used with relative and
    absolute tolerance ``tol`` (``step`` is then the initial step guess);
    otherwise classical RK4 with fixed ``step``.  Functionals are
    accumulated unless ``functionals`` is false, in which case the light
    quadric check is skipped and ``t``/``ell`` are still integrated.
    """
    if span <= 0:
        raise ValueError("span must be positive")
    rhs = augmented_rhs(field, functionals)
    y = np.concatenate([s0.x, s0.v, [0.0, 0.0, 0.0]])
    lam = 0.0
    samples = [(lam, y.copy())]
    if not adaptive:
        if step is None or step <= 0:
            raise ValueError("fixed-step integration needs a positive step")
        nsteps = int(math.ceil(span / step - 1e-12))
        for i in range(nsteps):
            h = min(step, span - lam)
            y = rk4_step(rhs, lam, y, h)
            lam = span if i == nsteps - 1 else lam + h
            samples.append((lam, y.copy()))
    else:
        h0 = step if step else min(0.01 * span, 0.01)
        for _, _, _, lam, y in dopri_steps(rhs, 0.0, y, tol, h0, lam_end=span, max_steps=max_steps):
            samples.append((lam, y.copy()))
    return _trajectory_from_samples(field, samples)


def _trajectory_from_samples(field: SecondOrderField, samples) -> Trajectory:
    n = field._n
    lam = np.array([s[0] for s in samples])
    Y = np.array([s[1] for s in samples])
    x, v = Y[:, :n], Y[:, n : 2 * n]
    acc = np.empty_like(x)
    H = np.empty(len(lam))
    kin = np.empty(len(lam))
    for i in range(len(lam)):
        acc[i], kin[i], H[i] = field.evaluate(x[i], v[i])
    return Trajectory(
        coords=field.coords,
        lam=lam,
        x=x,
        v=v,
        a=acc,
        S=Y[:, 2 * n],
        t=Y[:, 2 * n + 1],
        ell=Y[:, 2 * n + 2],
        H=H,
        theta_dot=2.0 * kin,
    )


def project_trajectory(traj: Trajectory, keep: Sequence[str]) -> Trajectory:
    """Project onto the coordinates ``keep`` and re-accumulate the duration.

    The duration of the projected curve is computed as the integral of the
    class-of-time form ``theta/theta_dot`` of the Euclidean metric on the kept
    coordinates, with the curve tangent taken from the cubic Hermite
    interpolant of the projected positions and the fibre velocity from the
    Hermite interpolant of the recorded velocities (Simpson per step).
    """
    idx = [traj.coords.index(c) for c in keep]
    x, v, a = traj.x[:, idx], traj.v[:, idx], traj.a[:, idx]
    lam = traj.lam

    def tau(vel, tangent):
        q = float(vel @ vel)
        if q < EPS_REG:
            raise LightQuadricError("projected curve meets the 0-section; duration undefined")
        return float(vel @ tangent) / q

    t = np.zeros(len(lam))
    for k in range(len(lam) - 1):
        h = lam[k + 1] - lam[k]
        x0, x1, v0, v1, a0, a1 = x[k], x[k + 1], v[k], v[k + 1], a[k], a[k + 1]
        tangent_mid = 1.5 * (x1 - x0) / h - 0.25 * (v0 + v1)
        vel_mid = 0.5 * (v0 + v1) + h / 8 * (a0 - a1)
        f0 = tau(v0, v0)
        f1 = tau(v1, v1)
        fm = tau(vel_mid, tangent_mid)
        t[k + 1] = t[k] + h / 6 * (f0 + 4 * fm + f1)
    return Trajectory(
        coords=tuple(keep),
        lam=lam.copy(),
        x=x.copy(),
        v=v.copy(),
        a=a.copy(),
        S=np.full(len(lam), np.nan),
        t=t,
        ell=np.full(len(lam), np.nan),
        H=np.full(len(lam), np.nan),
    )
