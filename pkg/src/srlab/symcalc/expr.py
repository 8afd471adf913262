"""Immutable expression trees with exact differentiation.

Nodes are hash-consed-by-value: two trees compare equal iff they have the same
shape and the same leaves. Hashes are cached because bracket tables hash
deep trees repeatedly.

The smart constructors (:func:`add`, :func:`mul`, ...) return normalized
nodes; :func:`simplify` rebuilds a tree through them, so it is idempotent.
Normalization does constant folding, 0/1 identities, flattening of nested
sums and products, and collection of like terms/factors. It is deliberately
not a canonical form.
"""
from __future__ import annotations

import math
from numbers import Real

import numpy as np

from ..errors import EvaluationError

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Pow",
    "Sin", "Cos", "Sqrt", "Abs",
    "const", "add", "sub", "mul", "div", "power", "neg",
    "simplify", "diff", "evaluate", "ZERO", "ONE",
]


class Expr:
    __slots__ = ("_hash", "_fv")
    precedence = 5

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented if not isinstance(other, Expr) else False
        return hash(self) == hash(other) and self._key() == other._key()

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__, self._key()))
            object.__setattr__(self, "_hash", h)
            return h

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    # operators build normalized nodes
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(map(repr, self._key()))})"

    def __str__(self):
        from .printer import to_string
        return to_string(self)

    @property
    def free_vars(self) -> frozenset:
        try:
            return self._fv
        except AttributeError:
            fv = self._compute_free_vars()
            object.__setattr__(self, "_fv", fv)
            return fv

    def _compute_free_vars(self):
        out = frozenset()
        for c in self.children():
            out |= c.free_vars
        return out

    def children(self):
        return ()

    @property
    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", float(value))

    def _key(self):
        return (self.value,)


class Var(Expr):
    __slots__ = ("index",)

    def __init__(self, index: int):
        if index < 0:
            raise ValueError("variable index must be non-negative")
        object.__setattr__(self, "index", int(index))

    def _key(self):
        return (self.index,)

    def _compute_free_vars(self):
        return frozenset((self.index,))


class Add(Expr):
    __slots__ = ("terms",)
    precedence = 1

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))

    def _key(self):
        return self.terms

    def children(self):
        return self.terms


class Sub(Expr):
    __slots__ = ("left", "right")
    precedence = 1

    def __init__(self, left, right):
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def _key(self):
        return (self.left, self.right)

    def children(self):
        return (self.left, self.right)


class Mul(Expr):
    __slots__ = ("factors",)
    precedence = 2

    def __init__(self, factors):
        object.__setattr__(self, "factors", tuple(factors))

    def _key(self):
        return self.factors

    def children(self):
        return self.factors


class Div(Expr):
    __slots__ = ("num", "den")
    precedence = 2

    def __init__(self, num, den):
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def _key(self):
        return (self.num, self.den)

    def children(self):
        return (self.num, self.den)


class Pow(Expr):
    """Integer power, exponent >= 0."""

    __slots__ = ("base", "exponent")
    precedence = 4

    def __init__(self, base, exponent: int):
        if int(exponent) != exponent or exponent < 0:
            raise ValueError("only non-negative integer exponents are supported")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", int(exponent))

    def _key(self):
        return (self.base, self.exponent)

    def children(self):
        return (self.base,)


class Unary(Expr):
    __slots__ = ("arg",)
    name = ""

    def __init__(self, arg):
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.arg,)

    def children(self):
        return (self.arg,)


class Sin(Unary):
    __slots__ = ()
    name = "sin"


class Cos(Unary):
    __slots__ = ()
    name = "cos"


class Sqrt(Unary):
    __slots__ = ()
    name = "sqrt"


class Abs(Unary):
    __slots__ = ()
    name = "abs"


ZERO = Const(0.0)
ONE = Const(1.0)
MINUS_ONE = Const(-1.0)


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, Real):
        return Const(x)
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


def const(value) -> Const:
    return Const(value)


# ---------------------------------------------------------------- normalizing


def _split_coef(e: Expr):
    """Return (coefficient, rest) with rest None for a pure constant."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        rest = e.factors[1:]
        return e.factors[0].value, (rest[0] if len(rest) == 1 else Mul(rest))
    return 1.0, e


def add(*terms) -> Expr:
    flat = []
    for t in terms:
        t = _lift(t)
        if isinstance(t, Add):
            flat.extend(t.terms)
        elif isinstance(t, Sub):
            flat.append(t.left)
            flat.append(mul(MINUS_ONE, t.right))
        else:
            flat.append(t)
    constant = 0.0
    coefs: dict = {}
    order = []
    for t in flat:
        c, rest = _split_coef(t)
        if rest is None:
            constant += c
            continue
        if rest in coefs:
            coefs[rest] += c
        else:
            coefs[rest] = c
            order.append(rest)
    out = []
    for rest in order:
        c = coefs[rest]
        if c == 0.0:
            continue
        out.append(rest if c == 1.0 else mul(Const(c), rest))
    if constant != 0.0:
        out.append(Const(constant))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    return Add(out)


def neg(e) -> Expr:
    return mul(MINUS_ONE, e)


def sub(a, b) -> Expr:
    return add(a, neg(_lift(b)))


def _base_exp(e: Expr):
    if isinstance(e, Pow):
        return e.base, e.exponent
    return e, 1


def mul(*factors) -> Expr:
    flat = []
    for f in factors:
        f = _lift(f)
        if isinstance(f, Mul):
            flat.extend(f.factors)
        else:
            flat.append(f)
    coef = 1.0
    exps: dict = {}
    order = []
    for f in flat:
        if isinstance(f, Const):
            coef *= f.value
            continue
        b, k = _base_exp(f)
        if b in exps:
            exps[b] += k
        else:
            exps[b] = k
            order.append(b)
    if coef == 0.0:
        return ZERO
    out = []
    for b in order:
        k = exps[b]
        if k == 0:
            continue
        out.append(b if k == 1 else Pow(b, k))
    if not out:
        return Const(coef)
    if coef != 1.0:
        out.insert(0, Const(coef))
    if len(out) == 1:
        return out[0]
    return Mul(out)


def div(a, b) -> Expr:
    a, b = _lift(a), _lift(b)
    if isinstance(b, Const):
        if b.value == 0.0:
            return Div(a, b)
        if b.value == 1.0:
            return a
        return mul(Const(1.0 / b.value), a)
    if a.is_zero:
        return ZERO
    c, rest = _split_coef(a)
    if rest is not None and c != 1.0:
        return mul(Const(c), Div(rest, b))
    return Div(a, b)


def power(base, n) -> Expr:
    base = _lift(base)
    if int(n) != n or n < 0:
        raise ValueError("only non-negative integer exponents are supported")
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value ** n)
    if isinstance(base, Pow):
        return Pow(base.base, base.exponent * n)
    return Pow(base, n)


_FOLD = {
    Sin: math.sin,
    Cos: math.cos,
    Abs: abs,
}


def unary(cls, arg) -> Expr:
    arg = _lift(arg)
    if isinstance(arg, Const):
        if cls is Sqrt:
            if arg.value >= 0.0:
                return Const(math.sqrt(arg.value))
            return Sqrt(arg)
        return Const(_FOLD[cls](arg.value))
    if cls is Abs and isinstance(arg, Abs):
        return arg
    return cls(arg)


def sin(e):
    return unary(Sin, e)


def cos(e):
    return unary(Cos, e)


def sqrt(e):
    return unary(Sqrt, e)


def absolute(e):
    return unary(Abs, e)


def simplify(e: Expr) -> Expr:
    memo: dict = {}

    def go(node):
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, (Const, Var)):
            out = node
        elif isinstance(node, Add):
            out = add(*[go(t) for t in node.terms])
        elif isinstance(node, Sub):
            out = sub(go(node.left), go(node.right))
        elif isinstance(node, Mul):
            out = mul(*[go(f) for f in node.factors])
        elif isinstance(node, Div):
            out = div(go(node.num), go(node.den))
        elif isinstance(node, Pow):
            out = power(go(node.base), node.exponent)
        elif isinstance(node, Unary):
            out = unary(type(node), go(node.arg))
        else:  # pragma: no cover
            raise TypeError(node)
        memo[key] = out
        return out

    return go(e)


# ----------------------------------------------------------- differentiation


def diff(e: Expr, k: int) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``x_k``, simplified."""
    if k < 0:
        raise ValueError("variable index must be non-negative")
    memo: dict = {}

    def d(node):
        if k not in node.free_vars:
            return ZERO
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            out = ONE
        elif isinstance(node, Add):
            out = add(*[d(t) for t in node.terms])
        elif isinstance(node, Sub):
            out = sub(d(node.left), d(node.right))
        elif isinstance(node, Mul):
            fs = node.factors
            parts = []
            for i, f in enumerate(fs):
                df = d(f)
                if df.is_zero:
                    continue
                parts.append(mul(*fs[:i], df, *fs[i + 1:]))
            out = add(*parts)
        elif isinstance(node, Div):
            a, b = node.num, node.den
            da, db = d(a), d(b)
            if db.is_zero:
                out = div(da, b)
            else:
                out = div(sub(mul(da, b), mul(a, db)), power(b, 2))
        elif isinstance(node, Pow):
            n = node.exponent
            out = mul(Const(n), power(node.base, n - 1), d(node.base))
        elif isinstance(node, Sin):
            out = mul(cos(node.arg), d(node.arg))
        elif isinstance(node, Cos):
            out = neg(mul(sin(node.arg), d(node.arg)))
        elif isinstance(node, Sqrt):
            out = div(d(node.arg), mul(Const(2.0), node))
        elif isinstance(node, Abs):
            # sign(u) u' written as u u'/|u|: undefined (and reported) at u = 0
            out = div(mul(node.arg, d(node.arg)), node)
        else:  # pragma: no cover
            raise TypeError(node)
        memo[key] = out
        return out

    return simplify(d(e))


# ---------------------------------------------------------------- evaluation


def _first_bad(mask, x):
    mask = np.broadcast_to(mask, x.shape[:-1]) if x.ndim > 1 else mask
    if x.ndim == 1:
        return tuple(float(v) for v in x)
    idx = np.argwhere(mask)[0]
    return tuple(float(v) for v in x[tuple(idx)])


def evaluate(e: Expr, x):
    """Evaluate at a point (shape ``(d,)``) or a batch of points (``(..., d)``).

    Division by zero, square roots of negative numbers and ``abs`` derivatives
    at the kink raise :class:`EvaluationError` instead of producing NaN.
    """
    x = np.asarray(x, dtype=float)
    memo: dict = {}

    def ev(node):
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Const):
            out = node.value
        elif isinstance(node, Var):
            if node.index >= x.shape[-1]:
                raise EvaluationError(f"variable x{node.index} out of range for a {x.shape[-1]}-dimensional point")
            out = x[..., node.index]
        elif isinstance(node, Add):
            out = ev(node.terms[0])
            for t in node.terms[1:]:
                out = out + ev(t)
        elif isinstance(node, Sub):
            out = ev(node.left) - ev(node.right)
        elif isinstance(node, Mul):
            out = ev(node.factors[0])
            for f in node.factors[1:]:
                out = out * ev(f)
        elif isinstance(node, Div):
            den = ev(node.den)
            bad = np.asarray(den) == 0.0
            if np.any(bad):
                raise EvaluationError(f"division by zero in {node} at {_first_bad(bad, x)}")
            out = ev(node.num) / den
        elif isinstance(node, Pow):
            out = ev(node.base) ** node.exponent
        elif isinstance(node, Sin):
            out = np.sin(ev(node.arg))
        elif isinstance(node, Cos):
            out = np.cos(ev(node.arg))
        elif isinstance(node, Sqrt):
            a = ev(node.arg)
            bad = np.asarray(a) < 0.0
            if np.any(bad):
                raise EvaluationError(f"square root of a negative number in {node} at {_first_bad(bad, x)}")
            out = np.sqrt(a)
        elif isinstance(node, Abs):
            out = np.abs(ev(node.arg))
        else:  # pragma: no cover
            raise TypeError(node)
        memo[key] = out
        return out

    with np.errstate(all="ignore"):
        val = ev(e)
    if x.ndim == 1:
        return float(val)
    return np.array(np.broadcast_to(val, x.shape[:-1]), dtype=float)
