"""Geometric mechanics on Riemannian manifolds and the quantization of tensor fields."""

from .expr import DomainError, Expression, ExpressionSyntaxError, parse
from .geometry import MetricField, christoffel, covariant_diff_sym, gradient, laplacian, second_fundamental_form
from .dynamics import MechSystem, State, Trajectory, hertz_reduce, integrate, newton_field, time_constrained_field
from .operators import DiffOperator, PhaseFunction, SymTensorField
from .quantize import dequantize, hamiltonian_of, kappa, quantize, schrodinger_operator, symbol

__version__ = "0.1.0"

__all__ = [
    "DiffOperator",
    "DomainError",
    "Expression",
    "ExpressionSyntaxError",
    "MechSystem",
    "MetricField",
    "PhaseFunction",
    "State",
    "SymTensorField",
    "Trajectory",
    "christoffel",
    "covariant_diff_sym",
    "dequantize",
    "gradient",
    "hamiltonian_of",
    "hertz_reduce",
    "integrate",
    "kappa",
    "laplacian",
    "newton_field",
    "parse",
    "quantize",
    "schrodinger_operator",
    "second_fundamental_form",
    "symbol",
    "time_constrained_field",
]
