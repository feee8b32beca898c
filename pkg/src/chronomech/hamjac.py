"""
Hamilton-Jacobi characteristics at a fixed energy level.

Seeds are placed on the conormal slice of an initial manifold (a point or a
graph hypersurface) inside ``{H = E}``, then carried along the Newton field.
Each characteristic records the action ``S`` and particle time ``t``; the wave
time is ``tau = S/E``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    IntegrationError,
    MechSystem,
    State,
    Trajectory,
    augmented_rhs,
    dopri_step,
    dopri_steps,
    integrate,
    newton_field,
)
from .expr import Expression, ExpressionError, parse
from .geometry import EPS_REG, RegularityError

__all__ = [
    "HamJacError",
    "EmptyQuadricError",
    "OrbitNotClosed",
    "InitialManifold",
    "Seed",
    "seed_conormal",
    "Characteristic",
    "CharacteristicBundle",
    "propagate",
    "Wavefront",
    "wavefront",
    "speeds",
    "CycleResult",
    "cycle_action",
    "DSdEResult",
    "dSdE_check",
]


class HamJacError(ValueError):
    pass


class EmptyQuadricError(HamJacError):
    """``E <= U`` on the whole initial manifold."""


class OrbitNotClosed(RuntimeError):
    pass


@dataclass
class InitialManifold:
    """A point ``x0`` or a graph hypersurface ``coord = xi(others)``.

    For a hypersurface ``box`` maps each remaining coordinate to its
    parameter interval.
    """

    point: np.ndarray | None = None
    coord: str | None = None
    xi: Expression | None = None
    box: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_point(cls, x0) -> InitialManifold:
        return cls(point=np.asarray(x0, dtype=float))

    @classmethod
    def hypersurface(cls, coord: str, xi, box: Mapping[str, tuple[float, float]]) -> InitialManifold:
        names = list(box)
        xi = parse(xi, names) if isinstance(xi, str) else xi
        return cls(coord=coord, xi=xi, box={k: (float(a), float(b)) for k, (a, b) in box.items()})

    @property
    def is_point(self) -> bool:
        return self.point is not None


@dataclass
class Seed(State):
    """Initial state of one characteristic with its sampling parameter."""

    param: tuple = ()


def _directions(n: int, count: int) -> list[tuple[tuple, np.ndarray]]:
    """``count`` (parameter, unit vector) pairs spread over the sphere S^{n-1}."""
    if n == 1:
        return [((1.0,), np.array([1.0])), ((-1.0,), np.array([-1.0]))][: max(count, 1)]
    if n == 2:
        out = []
        for k in range(count):
            a = 2 * math.pi * (k + 0.5) / count
            out.append(((a,), np.array([math.cos(a), math.sin(a)])))
        return out
    # Fibonacci lattice on S^2, padded with zeros for n = 4
    out = []
    golden = math.pi * (3 - math.sqrt(5))
    for k in range(count):
        z = 1 - 2 * (k + 0.5) / count
        r = math.sqrt(1 - z * z)
        phi = golden * k
        d = np.zeros(n)
        d[:3] = (r * math.cos(phi), r * math.sin(phi), z)
        out.append(((math.acos(z), phi % (2 * math.pi)), d))
    return out


def _box_grid(box: Mapping[str, tuple[float, float]], count: int) -> list[tuple]:
    axes = [np.linspace(a, b, count) for a, b in box.values()]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [tuple(float(m.flat[i]) for m in mesh) for i in range(mesh[0].size)]


def seed_conormal(X: InitialManifold, system: MechSystem, E: float, count: int = 16, side: int = 1) -> list[Seed]:
    """States on the conormal quadric of ``X`` at level ``E``.

    For a point source the directions are equally spaced in angle in a
    frame orthonormal for ``g`` at the point (Euclidean angles when ``g`` is
    indefinite).  For a hypersurface the surface parameters lie on a regular
    grid of ``count`` points per axis and ``p = p0 (1, -d xi)``, with
    ``sign(p0) = side``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    seeds: list[Seed] = []
    g = system.metric
    if X.is_point:
        x0 = X.point
        if len(x0) != system.n:
            raise HamJacError("point has the wrong dimension")
        kinetic = E - system.potential_value(x0)
        if kinetic <= 0:
            raise EmptyQuadricError(f"E = {E} <= U = {E - kinetic} at the source point")
        gm = g.values(x0)
        try:
            frame = np.linalg.inv(np.linalg.cholesky(gm)).T
        except np.linalg.LinAlgError:
            frame = np.eye(system.n)
        for param, e in _directions(system.n, count):
            d = frame @ e
            gd = float(d @ gm @ d)
            if gd <= EPS_REG:
                continue
            v = d * math.sqrt(2 * kinetic / gd)
            seeds.append(Seed(x0, v, param=param))
        if not seeds:
            raise EmptyQuadricError("no timelike directions at the source point")
        return seeds

    coords = system.coords
    if X.coord not in coords:
        raise HamJacError(f"unknown coordinate {X.coord!r}")
    i0 = coords.index(X.coord)
    others = [c for c in coords if c != X.coord]
    if sorted(X.box) != sorted(others):
        raise HamJacError(f"box must cover exactly {others}")
    dxi = [X.xi.partial(c) for c in X.box]
    for param in _box_grid(X.box, count):
        b = dict(zip(X.box, param))
        x = np.empty(system.n)
        x[i0] = X.xi.evaluate(b)
        for c, val in b.items():
            x[coords.index(c)] = val
        w = np.empty(system.n)
        w[i0] = 1.0
        for c, d in zip(X.box, dxi):
            w[coords.index(c)] = -d.evaluate(b)
        ginv = g.inverse_values(x)
        q = float(w @ ginv @ w)
        kinetic = E - system.potential_value(x)
        if kinetic <= 0 or q <= EPS_REG:
            continue
        p = side * w * math.sqrt(2 * kinetic / q)
        seeds.append(Seed(x, ginv @ p, param=param))
    if not seeds:
        raise EmptyQuadricError(f"E = {E} <= U everywhere on the hypersurface")
    return seeds


@dataclass
class Characteristic:
    param: tuple
    trajectory: Trajectory | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.trajectory is not None


@dataclass
class CharacteristicBundle:
    energy: float
    characteristics: list[Characteristic]

    @property
    def ok(self) -> list[Characteristic]:
        return [c for c in self.characteristics if c.ok]

    @property
    def failures(self) -> list[Characteristic]:
        return [c for c in self.characteristics if not c.ok]

    @property
    def has_tau(self) -> bool:
        return self.energy != 0

    def tau(self, c: Characteristic) -> np.ndarray:
        """Wave time ``S/E`` along a characteristic."""
        if not self.has_tau:
            raise HamJacError("wave time is undefined at E = 0")
        return c.trajectory.S / self.energy

    def max_energy_drift(self) -> float:
        return max(float(np.max(np.abs(c.trajectory.H - self.energy))) for c in self.ok)

    def export(self, directory) -> list[str]:
        """One trajectory CSV per seed plus ``index.csv``; returns written paths."""
        os.makedirs(directory, exist_ok=True)
        written = []
        index = os.path.join(directory, "index.csv")
        with open(index, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "param", "status", "file"])
            for k, c in enumerate(self.characteristics):
                name = f"seed_{k:04d}.csv"
                params = " ".join(f"{p:.12e}" for p in c.param)
                if c.ok:
                    c.trajectory.to_csv(os.path.join(directory, name))
                    written.append(os.path.join(directory, name))
                    w.writerow([k, params, "ok", name])
                else:
                    w.writerow([k, params, f"error: {c.error}", ""])
        written.append(index)
        return written


def propagate(
    seeds: Sequence[Seed],
    system: MechSystem,
    span: float,
    tol: float = 1e-10,
    level_tol: float = 1e-10,
    energy: float | None = None,
) -> CharacteristicBundle:
    """Integrate every seed; failures are recorded per seed.

    ``energy`` is the nominal level (default: the first seed's energy).
    """
    if not seeds:
        raise HamJacError("no seeds")
    energies = [system.energy(s.x, s.v) for s in seeds]
    E = energies[0] if energy is None else float(energy)
    if any(abs(e - E) > level_tol * (1 + abs(E)) for e in energies):
        raise HamJacError("seeds are not on a common energy level")
    fld = newton_field(system)
    out = []
    for s in seeds:
        try:
            traj = integrate(fld, s, span, tol=tol)
            out.append(Characteristic(getattr(s, "param", ()), traj))
        except (IntegrationError, RegularityError, ExpressionError, ArithmeticError) as exc:
            out.append(Characteristic(getattr(s, "param", ()), None, f"{type(exc).__name__}: {exc}"))
    return CharacteristicBundle(E, out)


@dataclass
class Wavefront:
    energy: float
    action_value: float
    points: list[list[float]]
    seed_params: list[list[float]]
    skipped: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "action_value": self.action_value,
            "points": self.points,
            "seed_params": self.seed_params,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def wavefront(bundle: CharacteristicBundle, s: float) -> Wavefront:
    """Points where each characteristic reaches action ``s`` (linear interpolation in ``S``)."""
    pts, params, skipped = [], [], []
    chars = sorted(bundle.ok, key=lambda c: c.param)
    for c in chars:
        tr = c.trajectory
        S = tr.S
        if not (min(S[0], S[-1]) <= s <= max(S[0], S[-1])):
            skipped.append(list(c.param))
            continue
        k = int(np.searchsorted(S, s, side="left")) if S[-1] >= S[0] else None
        if k is None:  # decreasing action (E < U regions are excluded, so only numerically)
            skipped.append(list(c.param))
            continue
        if k == 0:
            x = tr.x[0]
        else:
            w = (s - S[k - 1]) / (S[k] - S[k - 1])
            x = (1 - w) * tr.x[k - 1] + w * tr.x[k]
        pts.append([float(a) for a in x])
        params.append(list(c.param))
    return Wavefront(bundle.energy, float(s), pts, params, skipped)


def speeds(U_val: float, E: float) -> tuple[float, float]:
    """Wave speed ``E / sqrt(2(E-U))`` and particle speed ``sqrt(2(E-U))``."""
    k = 2.0 * (E - U_val)
    if k <= 0:
        raise HamJacError(f"E = {E} must exceed U = {U_val}")
    u = math.sqrt(k)
    v = E / u if u > EPS_REG else math.copysign(math.inf, E)
    return v, u


@dataclass
class CycleResult:
    S: float
    T: float
    tau: float | None
    ell: float
    lam: float
    closure: float

    @property
    def t0(self) -> float | None:
        """``tau - 2t`` over the cycle."""
        return None if self.tau is None else self.tau - 2 * self.T


def cycle_action(
    system: MechSystem,
    E: float,
    s0: State,
    max_span: float = 1e4,
    tol: float = 1e-12,
    closure_tol: float = 1e-6,
    level_tol: float = 1e-8,
) -> CycleResult:
    """Action, period and wave time of the closed orbit through ``s0``.

    The first return of ``(x, xdot)`` within ``closure_tol`` of the start is
    located by bisection on ``d/dlam |y - y0|^2 / 2`` inside the step where it
    changes sign; candidates are only considered once the orbit has left a
    ``1e3 * closure_tol`` neighbourhood of the start.
    """
    H0 = system.energy(s0.x, s0.v)
    if abs(H0 - E) > level_tol * (1 + abs(E)):
        raise HamJacError(f"initial state has H = {H0}, not E = {E}")
    fld = newton_field(system)
    rhs = augmented_rhs(fld)
    n = system.n
    y0 = np.concatenate([s0.x, s0.v, [0.0, 0.0, 0.0]])
    ph0 = y0[: 2 * n]
    scale = 1.0 + float(np.max(np.abs(ph0)))

    def gfun(y, dy):
        return float((y[: 2 * n] - ph0) @ dy[: 2 * n])

    left = False
    g_prev = 0.0
    for lam_a, ya, ka, lam_b, yb in dopri_steps(rhs, 0.0, y0, tol, 1e-3):
        if lam_b > max_span:
            break
        dist_b = float(np.linalg.norm(yb[: 2 * n] - ph0))
        if not left:
            left = dist_b > 1e3 * closure_tol * scale
            g_prev = gfun(yb, rhs(lam_b, yb))
            continue
        g_b = gfun(yb, rhs(lam_b, yb))
        if g_prev < 0 <= g_b:
            # minimum of the distance inside (lam_a, lam_b]
            lo, hi = 0.0, lam_b - lam_a
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                ym = dopri_step(rhs, lam_a, ya, mid, ka)[0]
                if gfun(ym, rhs(lam_a + mid, ym)) < 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-15 * (1 + lam_b):
                    break
            h = 0.5 * (lo + hi)
            ys = dopri_step(rhs, lam_a, ya, h, ka)[0] if h > 0 else ya
            dist = float(np.linalg.norm(ys[: 2 * n] - ph0))
            if dist <= closure_tol * scale:
                S, T, ell = float(ys[2 * n]), float(ys[2 * n + 1]), float(ys[2 * n + 2])
                tau = S / E if E != 0 else None
                return CycleResult(S, T, tau, ell, lam_a + h, dist)
        g_prev = g_b
    raise OrbitNotClosed(f"orbit not closed at tolerance {closure_tol} within span {max_span}")


@dataclass
class DSdEResult:
    dSdE: float
    T: float
    rel_error: float
    S_minus: float
    S_plus: float


def dSdE_check(
    system: MechSystem,
    E: float,
    dE: float,
    x0=None,
    direction=None,
    tol: float = 1e-12,
    max_span: float = 1e4,
) -> DSdEResult:
    """Central difference of the cycle action against the period at ``E``.

    Orbits start at ``x0`` moving along ``direction`` (defaults: the origin
    shifted by one along the first axis, moving along the last axis; in one
    dimension, ``x = 0`` moving forward).
    """
    if dE == 0:
        raise HamJacError("dE must be nonzero")
    n = system.n
    if x0 is None:
        x0 = np.zeros(n)
        if n > 1:
            x0[0] = 1.0
    if direction is None:
        direction = np.zeros(n)
        direction[-1] = 1.0
    dE = abs(dE)
    res = {}
    for e in (E - dE, E, E + dE):
        s = system.state_at_energy(x0, direction, e)
        res[e] = cycle_action(system, e, s, max_span=max_span, tol=tol)
    S_m, S_p = res[E - dE].S, res[E + dE].S
    fd = (S_p - S_m) / (2 * dE)
    T = res[E].T
    return DSdEResult(fd, T, abs(fd - T) / abs(T), S_m, S_p)
