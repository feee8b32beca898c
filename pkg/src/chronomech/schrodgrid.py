"""
One-dimensional grid realization of Schrödinger operators.

Dirichlet boundaries: the unknowns are the ``N - 2`` interior points of a
uniform grid on ``[-L/2, L/2]``.  Operators of order <= 2 become tridiagonal
matrices via central second-order stencils.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import MechSystem
from .expr import ExpressionError
from .hamjac import OrbitNotClosed, cycle_action
from .operators import DiffOperator, hbar_factor

__all__ = [
    "GridError",
    "Grid1D",
    "Tridiagonal",
    "discretize",
    "is_hermitian",
    "eigensolve",
    "Evolution",
    "evolve_cn",
    "PhaseReport",
    "phase_report",
]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    L: float = 20.0
    N: int = 1024

    def __post_init__(self):
        if self.N < 16:
            raise GridError("N must be at least 16")
        if not self.L > 0:
            raise GridError("L must be positive")

    @property
    def h(self) -> float:
        return self.L / (self.N - 1)

    @property
    def x(self) -> np.ndarray:
        """All grid points including the two boundary points."""
        return np.linspace(-self.L / 2, self.L / 2, self.N)

    @property
    def interior(self) -> np.ndarray:
        return self.x[1:-1]

    def norm(self, psi) -> float:
        """Trapezoid rule for ``|psi|^2`` (zero boundary values)."""
        return float(self.h * np.sum(np.abs(psi) ** 2))

    def inner(self, a, b) -> complex:
        return complex(self.h * np.sum(np.conj(a) * b))

    def normalized(self, psi) -> np.ndarray:
        return np.asarray(psi) / math.sqrt(self.norm(psi))


@dataclass
class Tridiagonal:
    """Square matrix given by its three bands (``lower[i] = A[i+1, i]``)."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    @property
    def size(self) -> int:
        return len(self.diag)

    @property
    def is_real(self) -> bool:
        return not any(np.iscomplexobj(b) and np.any(b.imag != 0) for b in (self.lower, self.diag, self.upper))

    def real(self) -> Tridiagonal:
        return Tridiagonal(*(np.real(b).astype(float) for b in (self.lower, self.diag, self.upper)))

    def to_dense(self) -> np.ndarray:
        n = self.size
        dtype = np.result_type(self.lower, self.diag, self.upper)
        a = np.zeros((n, n), dtype=dtype)
        a[np.arange(n), np.arange(n)] = self.diag
        a[np.arange(1, n), np.arange(n - 1)] = self.lower
        a[np.arange(n - 1), np.arange(1, n)] = self.upper
        return a

    def matvec(self, x) -> np.ndarray:
        return _kernels._tri_matvec(self.lower, self.diag, self.upper, np.asarray(x))

    def solve(self, rhs) -> np.ndarray:
        return _kernels.solve_tridiagonal(self.lower, self.diag, self.upper, rhs)


def discretize(P: DiffOperator, grid: Grid1D) -> Tridiagonal:
    """Central-difference matrix of a 1-D operator of order <= 2."""
    if P.n != 1:
        raise GridError("only one-coordinate operators can be discretized")
    if P.order > 2:
        raise GridError(f"order {P.order} above 2")
    x = grid.interior
    h = grid.h
    name = P.coords[0]
    coef = {0: np.zeros(len(x), dtype=complex), 1: np.zeros(len(x), dtype=complex), 2: np.zeros(len(x), dtype=complex)}
    for (k, (a,)), c in P.terms.items():
        fn = c.compile([name])
        z = hbar_factor(k, P.hbar)
        try:
            vals = np.array([fn(float(xi)) for xi in x])
        except (ExpressionError, ArithmeticError) as exc:
            raise GridError(f"coefficient {c} is singular on the grid: {exc}") from exc
        coef[a] += z * vals
    a0, a1, a2 = coef[0], coef[1], coef[2]
    diag = a0 - 2 * a2 / h**2
    lower = (a2 / h**2 - a1 / (2 * h))[1:]
    upper = (a2 / h**2 + a1 / (2 * h))[:-1]
    mat = Tridiagonal(lower, diag, upper)
    return mat.real() if mat.is_real else mat


def is_hermitian(H: Tridiagonal, tol: float = 1e-14) -> bool:
    scale = max(1.0, float(np.max(np.abs(H.diag))), float(np.max(np.abs(H.upper), initial=0.0)))
    return bool(
        np.max(np.abs(H.lower - np.conj(H.upper)), initial=0.0) <= tol * scale
        and np.max(np.abs(np.imag(H.diag)), initial=0.0) <= tol * scale
    )


def eigensolve(H: Tridiagonal, k: int = 1, residual_tol: float = 1e-8) -> list[tuple[float, np.ndarray]]:
    """The ``k`` lowest eigenpairs of a real symmetric tridiagonal matrix.

    Eigenvectors are unit vectors in the plain Euclidean sense; use
    :meth:`Grid1D.normalized` for grid normalization.
    """
    if not is_hermitian(H) or not H.is_real:
        raise GridError("matrix is not real symmetric")
    if not 1 <= k <= H.size:
        raise GridError(f"k must lie in 1..{H.size}")
    Hr = H.real()
    w, v = _kernels.eigh_lowest(Hr.diag, Hr.lower, k)
    out = []
    for j in range(k):
        psi = v[:, j]
        res = np.linalg.norm(Hr.matvec(psi) - w[j] * psi)
        if res > residual_tol * max(1.0, abs(w[j])) * np.linalg.norm(psi):
            raise GridError(f"eigenpair {j} did not converge (residual {res:.3e})")
        out.append((float(w[j]), psi))
    return out


@dataclass
class Evolution:
    times: np.ndarray
    norms: np.ndarray
    overlaps: np.ndarray
    xmean: np.ndarray
    psi: np.ndarray

    @property
    def norm_drift(self) -> float:
        return float(np.max(np.abs(self.norms - self.norms[0])))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "time", "norm", "re_overlap", "im_overlap", "<x>"])
            for s in range(len(self.times)):
                ov = self.overlaps[s]
                w.writerow(
                    [s] + [f"{v:.12e}" for v in (self.times[s], self.norms[s], ov.real, ov.imag, self.xmean[s])]
                )


def evolve_cn(H: Tridiagonal, psi0, dt: float, steps: int, grid: Grid1D, hbar: float = 1.0) -> Evolution:
    """Crank-Nicolson evolution ``(1 + i dt H / 2hbar) psi' = (1 - i dt H / 2hbar) psi``.

    Overlaps are ``<psi0 | psi(t)>`` with the grid inner product.
    """
    if dt <= 0:
        raise GridError("dt must be positive")
    if steps < 0:
        raise GridError("steps must be non-negative")
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (H.size,):
        raise GridError("wave function does not match the matrix size")
    try:
        psi, norms, overlaps, xmean = _kernels.cn_evolve(
            H.lower, H.diag, H.upper, psi0, dt, hbar, steps, grid.interior, grid.h
        )
    except (ZeroDivisionError, np.linalg.LinAlgError) as exc:
        raise GridError(f"linear solve failed: {exc}") from exc
    return Evolution(np.arange(steps + 1) * dt, norms, overlaps, xmean, psi)


@dataclass
class PhaseReport:
    energy: float
    hbar: float
    bound: bool
    T_classical: float | None = None
    tau_cycle: float | None = None
    t0_cycle: float | None = None
    quantum_phase: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def phase_report(
    system: MechSystem, hbar: float, E: float, x0=None, direction=None, max_span: float = 1e4
) -> PhaseReport:
    """Classical cycle times and the quantum phase advance ``E T / hbar mod 2 pi``.

    Nothing is asserted about the phase; unbound levels (no return within
    ``max_span``) are flagged.
    """
    n = system.n
    if x0 is None:
        x0 = np.zeros(n)
        if n > 1:
            x0[0] = 1.0
    if direction is None:
        direction = np.zeros(n)
        direction[-1] = 1.0
    try:
        s0 = system.state_at_energy(x0, direction, E)
        cyc = cycle_action(system, E, s0, max_span=max_span)
    except OrbitNotClosed as exc:
        return PhaseReport(E, hbar, False, note=f"unbound at this level: {exc}")
    except ValueError as exc:
        return PhaseReport(E, hbar, False, note=str(exc))
    phase = math.fmod(E * cyc.T / hbar, 2 * math.pi)
    if phase < 0:
        phase += 2 * math.pi
    return PhaseReport(E, hbar, True, cyc.T, cyc.tau, cyc.t0, phase)
