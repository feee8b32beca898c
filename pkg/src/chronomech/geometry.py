"""
Metric-derived objects on a single coordinate chart.

Everything here is symbolic (built from :class:`~chronomech.expr.Expression`)
and checked numerically at points.  Dimensions are capped at 4 so inverses
can be taken with the closed-form adjugate.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Mapping, Sequence
from functools import cached_property

import numpy as np

from .expr import ZERO, DomainError, Expression, add, as_expression, compile_many, div, mul, neg, parse, sub
from .operators import DiffOperator, counts_from_indices, sorted_multi_indices

__all__ = [
    "EPS_REG",
    "MetricError",
    "SingularMetricError",
    "RegularityError",
    "MetricField",
    "Christoffel",
    "CovariantTensor",
    "inverse_metric",
    "christoffel",
    "gradient",
    "covariant_diff_sym",
    "covariant_iterate",
    "laplacian",
    "second_fundamental_form",
    "metric_compatibility_residual",
]

#: regularity threshold for divisions by squared norms
EPS_REG = 1e-12

MAX_DIM = 4


class MetricError(ValueError):
    pass


class SingularMetricError(MetricError):
    pass


class RegularityError(ArithmeticError):
    """A quantity that must stay away from zero fell below the regularity threshold."""


def _as_expr(value, coords) -> Expression:
    if isinstance(value, str):
        return parse(value, coords)
    return as_expression(value)


def _det(m: list[list[Expression]]) -> Expression:
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return sub(mul(m[0][0], m[1][1]), mul(m[0][1], m[1][0]))
    total: Expression = ZERO
    for j in range(n):
        if m[0][j].is_zero():
            continue
        minor = [row[:j] + row[j + 1 :] for row in m[1:]]
        term = mul(m[0][j], _det(minor))
        total = add(total, term) if j % 2 == 0 else sub(total, term)
    return total


class MetricField:
    """Symmetric (pseudo-)Riemannian metric ``g_ij`` on named coordinates.

    ``matrix`` entries may be expression strings, numbers or Expressions.  The
    lower triangle is checked against the upper one (as printed text after
    parsing) and then shares its storage.  If ``sample_points`` are given, the
    metric is rejected when it is singular at all of them.
    """

    def __init__(self, coords: Sequence[str], matrix, sample_points=None):
        self.coords = tuple(coords)
        n = len(self.coords)
        if n == 0 or n > MAX_DIM:
            raise MetricError(f"dimension must be between 1 and {MAX_DIM}, got {n}")
        if len(set(self.coords)) != n:
            raise MetricError("duplicate coordinate names")
        if len(matrix) != n or any(len(row) != n for row in matrix):
            raise MetricError(f"metric must be a {n}x{n} matrix")
        parsed = [[_as_expr(matrix[i][j], self.coords) for j in range(n)] for i in range(n)]
        g: list[list[Expression]] = [[ZERO] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                if j > i and str(parsed[i][j]) != str(parsed[j][i]):
                    raise MetricError(
                        f"metric is not symmetric: g[{i}][{j}] = {parsed[i][j]} but g[{j}][{i}] = {parsed[j][i]}"
                    )
                g[i][j] = g[j][i] = parsed[i][j]
        self.g = tuple(tuple(row) for row in g)
        self.sample_points = [np.asarray(p, dtype=float) for p in (sample_points or [])]
        if self.sample_points:
            regular = [p for p in self.sample_points if self._is_regular(p)]
            if not regular:
                raise SingularMetricError("metric is singular at every sample point")
            self.regular_points = regular
        else:
            self.regular_points = []

    @property
    def n(self) -> int:
        return len(self.coords)

    def __repr__(self) -> str:
        return f"MetricField({list(self.coords)}, n={self.n})"

    def binding(self, point) -> dict[str, float]:
        if isinstance(point, Mapping):
            return dict(point)
        return {c: float(v) for c, v in zip(self.coords, point)}

    def _is_regular(self, point) -> bool:
        try:
            return abs(np.linalg.det(self.values(point))) > EPS_REG
        except DomainError:
            return False

    # pointwise values -----------------------------------------------------------
    @cached_property
    def _g_fn(self):
        return compile_many([self.g[i][j] for i in range(self.n) for j in range(self.n)], self.coords)

    @cached_property
    def _ginv_fn(self):
        inv = self.inverse
        return compile_many([inv[i][j] for i in range(self.n) for j in range(self.n)], self.coords)

    def values(self, point) -> np.ndarray:
        """``g_ij`` at a point (sequence in coordinate order or mapping)."""
        b = self.binding(point)
        return np.array(self._g_fn(*(b[c] for c in self.coords))).reshape(self.n, self.n)

    def inverse_values(self, point) -> np.ndarray:
        b = self.binding(point)
        return np.array(self._ginv_fn(*(b[c] for c in self.coords))).reshape(self.n, self.n)

    # derived symbolic objects ---------------------------------------------------------
    @cached_property
    def det(self) -> Expression:
        return _det([list(row) for row in self.g])

    @cached_property
    def inverse(self) -> tuple[tuple[Expression, ...], ...]:
        return inverse_metric(self)

    @cached_property
    def christoffel(self) -> Christoffel:
        return christoffel(self)

    def lower(self, u: Sequence[Expression]) -> list[Expression]:
        return [_sum(mul(self.g[i][j], u[j]) for j in range(self.n)) for i in range(self.n)]

    def raise_index(self, w: Sequence[Expression]) -> list[Expression]:
        inv = self.inverse
        return [_sum(mul(inv[i][j], w[j]) for j in range(self.n)) for i in range(self.n)]

    def norm2_covector(self, w: Sequence[Expression]) -> Expression:
        inv = self.inverse
        terms = []
        for i in range(self.n):
            for j in range(self.n):
                terms.append(mul(inv[i][j], mul(w[i], w[j])))
        return _sum(terms)

    def scaled(self, factor: Expression) -> MetricField:
        """Conformally rescaled metric ``factor * g``."""
        factor = as_expression(factor)
        return MetricField(self.coords, [[mul(factor, gij) for gij in row] for row in self.g])


def _sum(terms) -> Expression:
    out: Expression = ZERO
    for t in terms:
        out = add(out, t)
    return out


def inverse_metric(g: MetricField) -> tuple[tuple[Expression, ...], ...]:
    """Closed-form inverse ``g^ij`` (adjugate over determinant)."""
    n = g.n
    m = [list(row) for row in g.g]
    if all(m[i][j].is_zero() for i in range(n) for j in range(n) if i != j):
        if any(m[i][i].is_zero() for i in range(n)):
            raise SingularMetricError("metric determinant vanishes identically")
        return tuple(
            tuple(div(as_expression(1.0), m[i][i]) if i == j else ZERO for j in range(n)) for i in range(n)
        )
    det = g.det
    if det.is_zero():
        raise SingularMetricError("metric determinant vanishes identically")
    inv: list[list[Expression]] = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            # cofactor C_ji (symmetric matrix: C_ij = C_ji)
            minor = [row[:i] + row[i + 1 :] for k, row in enumerate(m) if k != j]
            cof = _det(minor)
            if (i + j) % 2:
                cof = neg(cof)
            inv[i][j] = inv[j][i] = div(cof, det)
    return tuple(tuple(row) for row in inv)


class Christoffel:
    """Levi-Civita symbols of both kinds.

    ``first[k][l][i]`` is ``Gamma_{kl,i}`` and ``second[j][k][l]`` is
    ``Gamma^j_{kl}``; the ``(k, l)`` slots share storage.
    """

    def __init__(self, metric: MetricField, first, second):
        self.metric = metric
        self.first = first
        self.second = second

    @cached_property
    def _second_fn(self):
        n = self.metric.n
        exprs = [self.second[j][k][l] for j in range(n) for k in range(n) for l in range(n)]
        return compile_many(exprs, self.metric.coords)

    @cached_property
    def _first_fn(self):
        n = self.metric.n
        exprs = [self.first[k][l][i] for k in range(n) for l in range(n) for i in range(n)]
        return compile_many(exprs, self.metric.coords)

    def second_values(self, point) -> np.ndarray:
        b = self.metric.binding(point)
        n = self.metric.n
        return np.array(self._second_fn(*(b[c] for c in self.metric.coords))).reshape(n, n, n)

    def first_values(self, point) -> np.ndarray:
        b = self.metric.binding(point)
        n = self.metric.n
        return np.array(self._first_fn(*(b[c] for c in self.metric.coords))).reshape(n, n, n)


def christoffel(g: MetricField) -> Christoffel:
    """``Gamma_{kl,i} = (d_k g_il + d_l g_ik - d_i g_kl) / 2`` and ``Gamma^j_{kl} = g^{ji} Gamma_{kl,i}``."""
    n, x = g.n, g.coords
    half = as_expression(0.5)
    first = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for l in range(k, n):
            for i in range(n):
                s = sub(add(g.g[i][l].partial(x[k]), g.g[i][k].partial(x[l])), g.g[k][l].partial(x[i]))
                first[k][l][i] = first[l][k][i] = mul(half, s)
    inv = g.inverse
    second = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    for j in range(n):
        for k in range(n):
            for l in range(k, n):
                val = _sum(mul(inv[j][i], first[k][l][i]) for i in range(n))
                second[j][k][l] = second[j][l][k] = val
    return Christoffel(g, first, second)


def gradient(f, g: MetricField) -> list[Expression]:
    """``(grad f)^i = g^{ij} d_j f``."""
    f = _as_expr(f, g.coords)
    return g.raise_index([f.partial(c) for c in g.coords])


class CovariantTensor:
    """Symmetric covariant tensor stored per sorted multi-index."""

    def __init__(self, coords: Sequence[str], order: int, components: dict[tuple[int, ...], Expression]):
        self.coords = tuple(coords)
        self.order = order
        self.components = components

    def __getitem__(self, index) -> Expression:
        return self.components[tuple(sorted(index))]

    def value(self, index, point) -> float:
        b = point if isinstance(point, Mapping) else dict(zip(self.coords, point))
        return self[index].evaluate(b)

    def contract(self, phi: Mapping[tuple[int, ...], Expression]) -> Expression:
        """Full contraction with a symmetric contravariant tensor of the same
        order given per sorted multi-index."""
        from .operators import multiplicity

        terms = []
        for m, c in self.components.items():
            if m in phi:
                terms.append(mul(as_expression(float(multiplicity(m))), mul(as_expression(phi[m]), c)))
        return _sum(terms)


def covariant_iterate(
    first: Sequence,
    r: int,
    gamma: Christoffel,
    diff: Callable,
    scale: Callable,
    plus: Callable,
    minus: Callable,
) -> dict[tuple[int, ...], object]:
    """Symmetrized ``r``-th iterated covariant differential.

    Works on any component type: ``first`` holds the order-1 components
    (``d_j f``), ``diff(c, i)`` differentiates a component, ``scale(e, c)``
    multiplies by an Expression.  Returns components per sorted multi-index.
    """
    n = len(first)
    tensor: dict[tuple[int, ...], object] = {(j,): first[j] for j in range(n)}
    for _ in range(r - 1):
        new: dict[tuple[int, ...], object] = {}
        for idx, comp in tensor.items():
            for b in range(n):
                out = diff(comp, b)
                for s, a_s in enumerate(idx):
                    for l in range(n):
                        gam = gamma.second[l][b][a_s]
                        if gam.is_zero():
                            continue
                        moved = idx[:s] + (l,) + idx[s + 1 :]
                        out = minus(out, scale(gam, tensor[moved]))
                new[idx + (b,)] = out
        tensor = new
    sym: dict[tuple[int, ...], object] = {}
    for m in sorted_multi_indices(n, r):
        perms = sorted(set(itertools.permutations(m)))
        total = tensor[perms[0]]
        for p in perms[1:]:
            total = plus(total, tensor[p])
        if len(perms) > 1:
            total = scale(as_expression(1.0 / len(perms)), total)
        sym[m] = total
    return sym


def covariant_diff_sym(f, r: int, g: MetricField) -> CovariantTensor:
    """Symmetrized ``r``-th covariant iterated differential of the function ``f``."""
    if r < 1:
        raise ValueError("order must be >= 1")
    f = _as_expr(f, g.coords)
    comps = covariant_iterate(
        [f.partial(c) for c in g.coords],
        r,
        g.christoffel,
        diff=lambda e, i: e.partial(g.coords[i]),
        scale=mul,
        plus=add,
        minus=sub,
    )
    return CovariantTensor(g.coords, r, comps)


def laplacian(g: MetricField) -> DiffOperator:
    """Laplace-Beltrami operator ``g^{jk} (d_j d_k - Gamma^l_{jk} d_l)`` (no hbar factor)."""
    n = g.n
    inv = g.inverse
    gam = g.christoffel.second
    terms: dict = {}

    def put(alpha, c):
        if c.is_zero():
            return
        terms[(0, alpha)] = add(terms[(0, alpha)], c) if (0, alpha) in terms else c

    for j in range(n):
        for k in range(n):
            put(counts_from_indices((j, k), n), inv[j][k])
    for l in range(n):
        c = _sum(mul(inv[j][k], gam[l][j][k]) for j in range(n) for k in range(n) if not gam[l][j][k].is_zero())
        put(counts_from_indices((l,), n), neg(c))
    return DiffOperator(g.coords, terms, None)


def second_fundamental_form(u: Sequence, g: MetricField) -> list[list[Expression]]:
    """``II_u(X, Y) = [T2(nabla_X u, Y) + T2(nabla_Y u, X)] / 2`` as a matrix ``II_ij``."""
    n, x = g.n, g.coords
    u = [_as_expr(c, x) for c in u]
    gam = g.christoffel.second
    # nabla_j u^k
    nab = [
        [add(u[k].partial(x[j]), _sum(mul(gam[k][j][l], u[l]) for l in range(n))) for k in range(n)]
        for j in range(n)
    ]
    # (nabla_j u)_i lowered
    low = [[_sum(mul(g.g[i][k], nab[j][k]) for k in range(n)) for i in range(n)] for j in range(n)]
    half = as_expression(0.5)
    return [[mul(half, add(low[j][i], low[i][j])) for j in range(n)] for i in range(n)]


def metric_compatibility_residual(g: MetricField, point) -> np.ndarray:
    """``nabla_k g_ij = d_k g_ij - Gamma^l_{ki} g_lj - Gamma^l_{kj} g_il`` at a point."""
    n, x = g.n, g.coords
    b = g.binding(point)
    dg = np.array([[[g.g[i][j].partial(x[k]).evaluate(b) for k in range(n)] for j in range(n)] for i in range(n)])
    gv = g.values(b)
    gam = g.christoffel.second_values(b)
    res = dg - np.einsum("lki,lj->ijk", gam, gv) - np.einsum("lkj,il->ijk", gam, gv)
    return res
