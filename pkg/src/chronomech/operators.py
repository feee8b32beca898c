"""
Differential operators, symmetric contravariant tensor fields and fibre
polynomials on T*M.

All three carry real :class:`~chronomech.expr.Expression` coefficients.  Powers
of ``(-i*hbar)`` are kept as integer bookkeeping next to each coefficient, so a
term ``(k, alpha) -> c`` of a :class:`DiffOperator` stands for

    (-i*hbar)**k * c(x) * d^alpha

and complex numbers only appear once an operator is evaluated at a point.
The same grading is used for tensors produced by dequantization, whose
components can pick up odd powers of ``-i*hbar``.
"""

from __future__ import annotations

import itertools
import math
import re
from collections.abc import Mapping, Sequence

import numpy as np

from .expr import ZERO, Expression, add, as_expression, mul, neg, parse, sub

__all__ = [
    "DiffOperator",
    "SymTensorField",
    "PhaseFunction",
    "hbar_factor",
    "counts_from_indices",
    "indices_from_counts",
    "multiplicity",
    "sorted_multi_indices",
]


def hbar_factor(k: int, hbar: float | None) -> complex:
    """Return ``(-i*hbar)**k`` (``k`` may be negative)."""
    if k == 0:
        return 1.0 + 0.0j
    if hbar is None:
        raise ValueError("operator carries powers of hbar but no hbar value is set")
    unit = (1.0, -1j, -1.0, 1j)[k % 4]
    return unit * float(hbar) ** k


def _split_factor(k: int, hbar: float | None) -> tuple[float, float]:
    z = hbar_factor(k, hbar)
    return z.real, z.imag


def counts_from_indices(indices: Sequence[int], n: int) -> tuple[int, ...]:
    counts = [0] * n
    for i in indices:
        counts[i] += 1
    return tuple(counts)


def indices_from_counts(counts: Sequence[int]) -> tuple[int, ...]:
    return tuple(i for i, c in enumerate(counts) for _ in range(c))


def multiplicity(indices: Sequence[int]) -> int:
    """Number of distinct orderings of a multi-index."""
    counts = counts_from_indices(indices, max(indices, default=-1) + 1)
    out = math.factorial(len(indices))
    for c in counts:
        out //= math.factorial(c)
    return out


def sorted_multi_indices(n: int, r: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations_with_replacement(range(n), r))


def _point_binding(coords: Sequence[str], point) -> dict[str, float]:
    if isinstance(point, Mapping):
        return dict(point)
    return {c: float(v) for c, v in zip(coords, point)}


def _nth_partial(f: Expression, coords: Sequence[str], alpha: Sequence[int]) -> Expression:
    out = f
    for name, count in zip(coords, alpha):
        for _ in range(count):
            out = out.partial(name)
    return out


class DiffOperator:
    """Linear differential operator ``sum (-i*hbar)^k c_{k,alpha}(x) d^alpha``.

    Parameters
    ----------
    coords:
        coordinate names; multi-indices ``alpha`` are count tuples over them
    terms:
        mapping ``(k, alpha) -> Expression``
    hbar:
        value of hbar used when the operator is evaluated; ``None`` for a purely
        classical operator (all ``k == 0``)
    """

    def __init__(self, coords: Sequence[str], terms=None, hbar: float | None = None):
        self.coords = tuple(coords)
        self.hbar = hbar
        self.terms: dict[tuple[int, tuple[int, ...]], Expression] = {}
        for (k, alpha), coeff in (terms or {}).items():
            self._accumulate(int(k), tuple(int(a) for a in alpha), as_expression(coeff))

    def _accumulate(self, k: int, alpha: tuple[int, ...], coeff: Expression) -> None:
        if len(alpha) != len(self.coords):
            raise ValueError(f"multi-index {alpha} does not match {len(self.coords)} coordinates")
        if coeff.is_zero():
            return
        key = (k, alpha)
        if key in self.terms:
            coeff = add(self.terms[key], coeff)
        self.terms[key] = coeff

    # constructors ------------------------------------------------------------
    @classmethod
    def multiplication(cls, coords, f, hbar=None) -> DiffOperator:
        n = len(coords)
        return cls(coords, {(0, (0,) * n): f}, hbar)

    @classmethod
    def derivative(cls, coords, alpha, coeff=1.0, k: int = 0, hbar=None) -> DiffOperator:
        return cls(coords, {(k, tuple(alpha)): coeff}, hbar)

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def order(self) -> int:
        return max((sum(alpha) for _, alpha in self.terms), default=0)

    def __repr__(self) -> str:
        return f"DiffOperator({len(self.terms)} terms, order={self.order}, hbar={self.hbar})"

    # algebra ------------------------------------------------------------------
    def _merged_hbar(self, other: DiffOperator):
        if self.coords != other.coords:
            raise ValueError("operators act on different coordinates")
        if self.hbar is None:
            return other.hbar
        if other.hbar is not None and other.hbar != self.hbar:
            raise ValueError("operators carry different hbar values")
        return self.hbar

    def __add__(self, other: DiffOperator) -> DiffOperator:
        out = DiffOperator(self.coords, self.terms, self._merged_hbar(other))
        for (k, alpha), c in other.terms.items():
            out._accumulate(k, alpha, c)
        return out

    def __sub__(self, other: DiffOperator) -> DiffOperator:
        out = DiffOperator(self.coords, self.terms, self._merged_hbar(other))
        for (k, alpha), c in other.terms.items():
            key = (k, alpha)
            if key in out.terms:
                diff = sub(out.terms[key], c)
                if diff.is_zero():
                    del out.terms[key]
                else:
                    out.terms[key] = diff
            else:
                out.terms[key] = neg(c)
        return out

    def __neg__(self) -> DiffOperator:
        return DiffOperator(self.coords, {key: neg(c) for key, c in self.terms.items()}, self.hbar)

    def scaled(self, factor: float) -> DiffOperator:
        """Multiply by a real number."""
        return self.mul_expr(as_expression(float(factor)))

    def mul_expr(self, f: Expression) -> DiffOperator:
        """Left multiplication by the function ``f``."""
        return DiffOperator(self.coords, {key: mul(f, c) for key, c in self.terms.items()}, self.hbar)

    def times_hbar_power(self, k: int) -> DiffOperator:
        """Multiply by ``(-i*hbar)**k``."""
        return DiffOperator(
            self.coords, {(kk + k, alpha): c for (kk, alpha), c in self.terms.items()}, self.hbar
        )

    def with_hbar(self, hbar: float | None) -> DiffOperator:
        return DiffOperator(self.coords, self.terms, hbar)

    def left_partial(self, i: int) -> DiffOperator:
        """The operator ``d_i o P``."""
        out = DiffOperator(self.coords, hbar=self.hbar)
        name = self.coords[i]
        for (k, alpha), c in self.terms.items():
            out._accumulate(k, alpha, c.partial(name))
            raised = list(alpha)
            raised[i] += 1
            out._accumulate(k, tuple(raised), c)
        return out

    def part(self, order: int) -> DiffOperator:
        """Terms whose derivative order is exactly ``order``."""
        return DiffOperator(
            self.coords, {key: c for key, c in self.terms.items() if sum(key[1]) == order}, self.hbar
        )

    # evaluation ----------------------------------------------------------------
    def coefficient_value(self, alpha, point) -> complex:
        """Complex coefficient of ``d^alpha`` at ``point``."""
        binding = _point_binding(self.coords, point)
        alpha = tuple(alpha)
        total = 0.0 + 0.0j
        for (k, a), c in self.terms.items():
            if a == alpha:
                total += hbar_factor(k, self.hbar) * c.evaluate(binding)
        return total

    def multi_indices(self) -> list[tuple[int, ...]]:
        return sorted({alpha for _, alpha in self.terms}, key=lambda a: (sum(a), indices_from_counts(a)))

    def apply(self, f) -> tuple[Expression, Expression]:
        """Apply to ``f`` (an Expression or a ``(re, im)`` pair); returns ``(re, im)``."""
        if isinstance(f, tuple):
            u, v = as_expression(f[0]), as_expression(f[1])
        else:
            u, v = as_expression(f), ZERO
        re_out: Expression = ZERO
        im_out: Expression = ZERO
        for (k, alpha), c in self.terms.items():
            a, b = _split_factor(k, self.hbar)
            du = mul(c, _nth_partial(u, self.coords, alpha))
            dv = mul(c, _nth_partial(v, self.coords, alpha))
            # (a + ib)(du + i dv)
            re_out = add(re_out, sub(mul(as_expression(a), du), mul(as_expression(b), dv)))
            im_out = add(im_out, add(mul(as_expression(a), dv), mul(as_expression(b), du)))
        return re_out, im_out

    def value(self, f, point) -> complex:
        """``(P f)(point)`` as a complex number."""
        binding = _point_binding(self.coords, point)
        re_part, im_part = self.apply(f)
        return complex(re_part.evaluate(binding), im_part.evaluate(binding))

    # text format ------------------------------------------------------------------
    def format(self) -> str:
        """One term per line: ``(-i*hbar)^k * <coeff> * d[x]^a d[y]^b``."""
        lines = []
        keys = sorted(self.terms, key=lambda key: (sum(key[1]), indices_from_counts(key[1]), key[0]))
        for k, alpha in keys:
            if all(a == 0 for a in alpha):
                dpart = "1"
            else:
                dpart = " ".join(f"d[{name}]^{a}" for name, a in zip(self.coords, alpha) if a)
            lines.append(f"(-i*hbar)^{k} * {self.terms[(k, alpha)]} * {dpart}")
        return "\n".join(lines) + ("\n" if lines else "")

    _LINE = re.compile(
        r"^\(-i\*hbar\)\^(-?\d+) \* (.+) \* "
        r"(1|d\[[A-Za-z_]\w*\]\^\d+(?: d\[[A-Za-z_]\w*\]\^\d+)*)$"
    )
    _DPART = re.compile(r"d\[([A-Za-z_]\w*)\]\^(\d+)")

    @classmethod
    def parse_text(cls, text: str, coords: Sequence[str], hbar: float | None = None) -> DiffOperator:
        """Inverse of :meth:`format`."""
        coords = tuple(coords)
        out = cls(coords, hbar=hbar)
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            m = cls._LINE.match(line)
            if m is None:
                raise ValueError(f"line {lineno}: not an operator term: {line!r}")
            k = int(m.group(1))
            coeff = parse(m.group(2), coords)
            alpha = [0] * len(coords)
            if m.group(3) != "1":
                for name, a in cls._DPART.findall(m.group(3)):
                    if name not in coords:
                        raise ValueError(f"line {lineno}: unknown coordinate {name!r}")
                    alpha[coords.index(name)] += int(a)
            out._accumulate(k, tuple(alpha), coeff)
        return out

    def __str__(self) -> str:
        return self.format()


class SymTensorField:
    """Inhomogeneous symmetric contravariant tensor field.

    Components are stored once per sorted multi-index ``m`` (a nondecreasing
    tuple of coordinate positions, whose length is the degree); ``terms`` maps
    ``(k, m) -> Expression`` with the same ``(-i*hbar)**k`` grading as
    :class:`DiffOperator`.  Real tensors only use ``k == 0``.
    """

    def __init__(self, coords: Sequence[str], terms=None, hbar: float | None = None):
        self.coords = tuple(coords)
        self.hbar = hbar
        self.terms: dict[tuple[int, tuple[int, ...]], Expression] = {}
        for (k, m), c in (terms or {}).items():
            self._accumulate(int(k), tuple(sorted(m)), as_expression(c))

    def _accumulate(self, k, m, coeff) -> None:
        if any(i < 0 or i >= len(self.coords) for i in m):
            raise ValueError(f"multi-index {m} out of range")
        if coeff.is_zero():
            return
        key = (k, m)
        if key in self.terms:
            coeff = add(self.terms[key], coeff)
        self.terms[key] = coeff

    @classmethod
    def from_components(cls, coords, components: Mapping, hbar=None) -> SymTensorField:
        """Build a real tensor from ``{index tuple: expression}``.

        Index tuples may be given in any order; permutations of the same
        multi-index must not be repeated.
        """
        coords = tuple(coords)
        terms = {}
        for m, c in components.items():
            key = (0, tuple(sorted(m)))
            if key in terms:
                raise ValueError(f"component {m} given twice")
            terms[key] = parse(c, coords) if isinstance(c, str) else c
        return cls(coords, terms, hbar)

    @classmethod
    def metric(cls, g) -> SymTensorField:
        """Contravariant form ``g^{rs} d_r (x) d_s`` of a metric."""
        ginv = g.inverse
        return cls(g.coords, {(0, m): ginv[m[0]][m[1]] for m in sorted_multi_indices(g.n, 2)})

    @property
    def degrees(self) -> list[int]:
        return sorted({len(m) for _, m in self.terms})

    @property
    def max_degree(self) -> int:
        return max(self.degrees, default=0)

    def homogeneous(self, r: int) -> SymTensorField:
        return SymTensorField(
            self.coords, {key: c for key, c in self.terms.items() if len(key[1]) == r}, self.hbar
        )

    def __add__(self, other: SymTensorField) -> SymTensorField:
        out = SymTensorField(self.coords, self.terms, self.hbar if self.hbar is not None else other.hbar)
        for (k, m), c in other.terms.items():
            out._accumulate(k, m, c)
        return out

    def scaled(self, factor: float) -> SymTensorField:
        f = as_expression(float(factor))
        return SymTensorField(self.coords, {key: mul(f, c) for key, c in self.terms.items()}, self.hbar)

    def component_value(self, m, point) -> complex:
        binding = _point_binding(self.coords, point)
        m = tuple(sorted(m))
        total = 0.0 + 0.0j
        for (k, mm), c in self.terms.items():
            if mm == m:
                total += hbar_factor(k, self.hbar) * c.evaluate(binding)
        return total

    def multi_indices(self) -> list[tuple[int, ...]]:
        return sorted({m for _, m in self.terms}, key=lambda m: (len(m), m))

    def values(self, point) -> dict[tuple[int, ...], complex]:
        return {m: self.component_value(m, point) for m in self.multi_indices()}

    def __repr__(self) -> str:
        return f"SymTensorField(degrees={self.degrees}, {len(self.terms)} terms)"

    def format(self) -> str:
        lines = []
        for k, m in sorted(self.terms, key=lambda key: (len(key[1]), key[1], key[0])):
            slots = " ".join(f"d[{self.coords[i]}]" for i in m) or "1"
            lines.append(f"(-i*hbar)^{k} * {self.terms[(k, m)]} * {slots}")
        return "\n".join(lines) + ("\n" if lines else "")


class PhaseFunction:
    """Polynomial along the fibres of T*M: ``sum (-i*hbar)^k c(x) p^alpha``."""

    def __init__(self, coords: Sequence[str], terms=None, hbar: float | None = None):
        self.coords = tuple(coords)
        self.hbar = hbar
        self.terms: dict[tuple[int, tuple[int, ...]], Expression] = {}
        for (k, alpha), c in (terms or {}).items():
            key = (int(k), tuple(alpha))
            c = as_expression(c)
            self.terms[key] = add(self.terms[key], c) if key in self.terms else c

    @classmethod
    def from_tensor(cls, phi: SymTensorField) -> PhaseFunction:
        n = len(phi.coords)
        terms: dict = {}
        for (k, m), c in phi.terms.items():
            key = (k, counts_from_indices(m, n))
            coeff = mul(as_expression(float(multiplicity(m))), c)
            terms[key] = add(terms[key], coeff) if key in terms else coeff
        return cls(phi.coords, terms, phi.hbar)

    @property
    def degree(self) -> int:
        return max((sum(a) for _, a in self.terms), default=0)

    def __call__(self, x, p) -> complex:
        binding = _point_binding(self.coords, x)
        p = np.asarray(p, dtype=float)
        total = 0.0 + 0.0j
        for (k, alpha), c in self.terms.items():
            mono = float(np.prod(p ** np.asarray(alpha, dtype=float)))
            total += hbar_factor(k, self.hbar) * c.evaluate(binding) * mono
        return total
