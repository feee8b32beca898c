"""
Quantization of symmetric contravariant tensor fields through the
Levi-Civita connection, and its inverse.

    quantize(Phi) f = sum_r (-i hbar)^r < Phi_r , nabla^r_sym f >

The contraction runs over all ordered index tuples, so a component stored
once per sorted multi-index ``m`` is weighted by the number of orderings of
``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import MechSystem, hertz_reduce
from .expr import Expression, add, as_expression, call, div, mul, symbol as sym
from .geometry import MetricError, MetricField, _sum, covariant_iterate, laplacian
from .operators import (
    DiffOperator,
    PhaseFunction,
    SymTensorField,
    indices_from_counts,
    multiplicity,
)

__all__ = [
    "MAX_ORDER",
    "QuantizeError",
    "nabla_operators",
    "quantize",
    "symbol",
    "dequantize",
    "hamiltonian_of",
    "schrodinger_operator",
    "kappa",
    "kappa_identity_residuals",
    "p0_squared",
    "commutator_value",
    "HertzSeparation",
    "hertz_separation",
]

MAX_ORDER = 3


class QuantizeError(ValueError):
    pass


def nabla_operators(g: MetricField, r: int) -> dict[tuple[int, ...], DiffOperator]:
    """Operators ``f -> (nabla^r_sym f)_m`` for each sorted multi-index ``m``."""
    cache = g.__dict__.setdefault("_nabla_ops", {})
    if r not in cache:
        n = g.n
        first = [DiffOperator.derivative(g.coords, tuple(int(i == j) for i in range(n))) for j in range(n)]
        cache[r] = covariant_iterate(
            first,
            r,
            g.christoffel,
            diff=lambda op, i: op.left_partial(i),
            scale=lambda e, op: op.mul_expr(e),
            plus=lambda a, b: a + b,
            minus=lambda a, b: a - b,
        )
    return cache[r]


def quantize(phi: SymTensorField, g: MetricField, hbar: float | None = None) -> DiffOperator:
    """Differential operator of a tensor field (degrees up to :data:`MAX_ORDER`)."""
    if tuple(phi.coords) != tuple(g.coords):
        raise QuantizeError("tensor and metric use different coordinates")
    if phi.max_degree > MAX_ORDER:
        raise QuantizeError(f"degree {phi.max_degree} above the cap {MAX_ORDER}")
    hbar = phi.hbar if hbar is None else hbar
    out = DiffOperator(g.coords, hbar=hbar)
    zero_alpha = (0,) * g.n
    for (k, m), c in phi.terms.items():
        r = len(m)
        if r == 0:
            out._accumulate(k, zero_alpha, c)
            continue
        weighted = mul(as_expression(float(multiplicity(m))), c)
        for (kk, alpha), d in nabla_operators(g, r)[m].terms.items():
            out._accumulate(k + r + kk, alpha, mul(weighted, d))
    return out


def symbol(P: DiffOperator, r: int, strip: bool = True) -> SymTensorField:
    """Order-``r`` symbol of ``P`` as a homogeneous tensor.

    With ``strip`` the ``(-i hbar)^r`` factor is removed, so
    ``symbol(quantize(Phi_r), r) == Phi_r``; otherwise the grading is kept as
    is.  Orders above that of ``P`` give the zero tensor.
    """
    if r < 0 or r > MAX_ORDER:
        raise QuantizeError(f"order {r} outside 0..{MAX_ORDER}")
    shift = r if strip else 0
    out = SymTensorField(P.coords, hbar=P.hbar)
    for (k, alpha), c in P.terms.items():
        if sum(alpha) != r:
            continue
        m = indices_from_counts(alpha)
        mult = multiplicity(m)
        out._accumulate(k - shift, m, c if mult == 1 else div(c, as_expression(float(mult))))
    return out


def dequantize(P: DiffOperator, g: MetricField, hbar: float | None = None) -> SymTensorField:
    """Tensor field whose quantization is ``P`` (orders up to :data:`MAX_ORDER`)."""
    if P.order > MAX_ORDER:
        raise QuantizeError(f"order {P.order} above the cap {MAX_ORDER}")
    hbar = P.hbar if hbar is None else hbar
    rest = P.with_hbar(hbar)
    total = SymTensorField(P.coords, hbar=hbar)
    for r in range(P.order, -1, -1):
        phi_r = symbol(rest, r)
        total = total + phi_r
        lower = quantize(phi_r, g, hbar) if phi_r.terms else DiffOperator(P.coords, hbar=hbar)
        # the order-r part cancels identically; keep only what is below it
        diff = rest - lower
        rest = DiffOperator(
            P.coords, {key: c for key, c in diff.terms.items() if sum(key[1]) < r}, hbar
        )
    return total


def hamiltonian_of(P: DiffOperator, g: MetricField, hbar: float | None = None) -> PhaseFunction:
    """Fibre polynomial obtained by substituting momenta into ``dequantize(P)``."""
    return PhaseFunction.from_tensor(dequantize(P, g, hbar))


def schrodinger_operator(system: MechSystem, hbar: float) -> DiffOperator:
    """``-(hbar^2/2) Laplacian + U``."""
    if not system.conservative:
        raise QuantizeError("the system is not conservative")
    lap = laplacian(system.metric)
    op = lap.times_hbar_power(2).scaled(0.5).with_hbar(hbar)
    if system.potential is not None:
        op = op + DiffOperator.multiplication(system.coords, system.potential, hbar)
    return op


def _adapted_index(g: MetricField, time_coordinate: str | None) -> int:
    t = time_coordinate or g.coords[0]
    if t not in g.coords:
        raise MetricError(f"unknown coordinate {t!r}")
    i0 = g.coords.index(t)
    for mu in range(g.n):
        if mu != i0 and not g.g[i0][mu].is_zero():
            raise MetricError(f"metric is not adapted: g[{t}][{g.coords[mu]}] = {g.g[i0][mu]}")
    return i0


def _kappa_parts(g: MetricField, i0: int) -> tuple[Expression, Expression, Expression]:
    """``(Delta t, grad(t)(log sqrt|g00|), g^{mu nu} Gamma^0_{mu nu})``."""
    n = g.n
    t = g.coords[i0]
    lap_t_re, _ = laplacian(g).apply(sym(t))
    log_term = call("log", call("sqrt", call("abs", g.g[i0][i0])))
    grad_t = g.inverse[i0][i0]
    grad_term = mul(grad_t, log_term.partial(t))
    gam = g.christoffel.second[i0]
    inv = g.inverse
    spatial = [mu for mu in range(n) if mu != i0]
    trace = _sum(mul(inv[a][b], gam[a][b]) for a in spatial for b in spatial)
    return lap_t_re, grad_term, trace


def kappa_identity_residuals(g: MetricField, points, time_coordinate: str | None = None) -> np.ndarray:
    """``g^{mu nu}Gamma^0_{mu nu} + Delta t + grad(t)(log sqrt|g00|)`` at each point."""
    i0 = _adapted_index(g, time_coordinate)
    lap_t, grad_term, trace = _kappa_parts(g, i0)
    res = add(trace, add(lap_t, grad_term))
    return np.array([res.evaluate(g.binding(p)) for p in points])


def kappa(g: MetricField, sample_points=None, time_coordinate: str | None = None, tol: float = 1e-10) -> Expression:
    """``-(1/2) [Delta t + grad(t)(log sqrt|g00|)]`` for an adapted metric.

    The identity with ``g^{mu nu} Gamma^0_{mu nu}`` is checked at the sample
    points (the metric's own when none are given).
    """
    i0 = _adapted_index(g, time_coordinate)
    lap_t, grad_term, trace = _kappa_parts(g, i0)
    points = sample_points if sample_points is not None else (g.regular_points or g.sample_points)
    for p in points or []:
        b = g.binding(p)
        lhs = trace.evaluate(b)
        rhs = -lap_t.evaluate(b) - grad_term.evaluate(b)
        if abs(lhs - rhs) > tol * (1 + abs(lhs)):
            raise QuantizeError(f"kappa identity fails at {list(p)}: {lhs} vs {rhs}")
    return mul(as_expression(-0.5), add(lap_t, grad_term))


def p0_squared(g: MetricField, hbar: float, time_coordinate: str | None = None) -> DiffOperator:
    """Quantization of the tensor ``d_0 (x) d_0``."""
    i0 = _adapted_index(g, time_coordinate)
    phi = SymTensorField(g.coords, {(0, (i0, i0)): 1.0}, hbar)
    return quantize(phi, g, hbar)


def commutator_value(A: DiffOperator, B: DiffOperator, f, point) -> complex:
    """``([A, B] f)(point)``."""
    ab = A.value(B.apply(f), point)
    ba = B.value(A.apply(f), point)
    return ab - ba


@dataclass
class HertzSeparation:
    """``Psi = exp(exponent * x0) Phi`` with ``operator Phi = E Phi`` on M."""

    exponent: complex
    operator: DiffOperator
    reduced: MechSystem
    P0: float
    c: float
    E: float | None

    @property
    def required_P0(self) -> float | None:
        return None if self.E is None else -self.E / self.c

    @property
    def time_equation_residual(self) -> float | None:
        """``i hbar d/dt0 Psi - E Psi`` divided by ``Psi`` (zero iff ``P0 = -E/c``)."""
        return None if self.E is None else -self.c * self.P0 - self.E

    @property
    def holds(self) -> bool | None:
        r = self.time_equation_residual
        return None if r is None else abs(r) <= 1e-12 * (1 + abs(self.E))


def hertz_separation(
    ext: MechSystem,
    P0: float,
    E: float | None = None,
    hbar: float = 1.0,
    c: float = 1.0,
    time_coordinate: str | None = None,
) -> HertzSeparation:
    """Separate the extended wave equation at momentum ``P0``."""
    reduced = hertz_reduce(ext, P0, time_coordinate)
    op = schrodinger_operator(reduced, hbar)
    return HertzSeparation(complex(0.0, P0 / hbar), op, reduced, float(P0), float(c), E)
