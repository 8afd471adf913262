"""Symbolic expressions, vector fields and the structure DSL."""
from .expr import (Abs, Add, Const, Cos, Div, Expr, Mul, Pow, Sin, Sqrt, Sub, Var,
                   diff, evaluate, simplify)
from .fields import (NONZERO, NUMERIC_ZERO, SYMBOLIC_ZERO, VectorField, coordinate_field,
                     is_identically_zero, lie_bracket, linear_combination, zero_field, zero_test)
from .parser import parse_expr, parse_expr_list
from .printer import to_string
from .structure import Domain, SRStructure, format_structure, parse_structure

__all__ = [
    "Abs", "Add", "Const", "Cos", "Div", "Expr", "Mul", "Pow", "Sin", "Sqrt", "Sub", "Var",
    "diff", "evaluate", "simplify", "to_string",
    "VectorField", "lie_bracket", "linear_combination", "coordinate_field", "zero_field",
    "zero_test", "is_identically_zero", "SYMBOLIC_ZERO", "NUMERIC_ZERO", "NONZERO",
    "parse_expr", "parse_expr_list",
    "Domain", "SRStructure", "parse_structure", "format_structure",
]
