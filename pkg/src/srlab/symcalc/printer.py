"""Infix printing; output is accepted back by :func:`srlab.symcalc.parse_expr`."""
from __future__ import annotations

from .expr import Abs, Add, Const, Cos, Div, Expr, Mul, Pow, Sin, Sqrt, Sub, Unary, Var

_NEG = 3


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, Const) and e.value < 0:
        return _NEG
    if isinstance(e, Mul) and isinstance(e.factors[0], Const) and e.factors[0].value < 0:
        return _NEG if len(e.factors) == 1 else Mul.precedence
    return e.precedence


def _wrap(e: Expr, min_prec: int) -> str:
    s = to_string(e)
    return f"({s})" if _prec(e) < min_prec else s


def _mul_body(factors) -> str:
    return "*".join(_wrap(f, Mul.precedence) for f in factors)


def to_string(e: Expr) -> str:
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Add):
        out = to_string(e.terms[0]) if _prec(e.terms[0]) >= Add.precedence else f"({to_string(e.terms[0])})"
        for t in e.terms[1:]:
            if isinstance(t, Const) and t.value < 0:
                out += f" - {_num(-t.value)}"
            elif isinstance(t, Mul) and isinstance(t.factors[0], Const) and t.factors[0].value < 0:
                c = -t.factors[0].value
                rest = t.factors[1:]
                body = _mul_body(rest)
                out += f" - {body}" if c == 1.0 else f" - {_num(c)}*{body}"
            else:
                out += f" + {_wrap(t, Add.precedence + 1) if isinstance(t, (Add, Sub)) else to_string(t)}"
        return out
    if isinstance(e, Sub):
        return f"{_wrap(e.left, Add.precedence)} - {_wrap(e.right, Add.precedence + 1)}"
    if isinstance(e, Mul):
        fs = e.factors
        if isinstance(fs[0], Const) and fs[0].value == -1.0 and len(fs) > 1:
            return "-" + _mul_body(fs[1:])
        if isinstance(fs[0], Const) and fs[0].value < 0:
            return f"-{_num(-fs[0].value)}*" + _mul_body(fs[1:])
        return _mul_body(fs)
    if isinstance(e, Div):
        return f"{_wrap(e.num, Mul.precedence)}/{_wrap(e.den, Pow.precedence)}"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, Pow.precedence + 1)}^{e.exponent}"
    if isinstance(e, (Sin, Cos, Sqrt, Abs)):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Unary):  # pragma: no cover
        return f"{e.name}({to_string(e.arg)})"
    raise TypeError(e)
