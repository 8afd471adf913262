"""Tokenizer and recursive-descent parser for coefficient expressions.

Grammar (standard precedence, ``^`` binds tightest and takes a non-negative
integer literal)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' INT)?
    atom   := NUMBER | 'pi' | VAR | FUNC '(' expr ')' | '(' expr ')'

``VAR`` is ``x0`` .. ``x{d-1}``; ``FUNC`` is one of sin, cos, sqrt, abs.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from ..errors import DSLSyntaxError
from . import expr as E

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

FUNCTIONS = {"sin": E.Sin, "cos": E.Cos, "sqrt": E.Sqrt, "abs": E.Abs}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    col: int  # 1-based column within the source line


def tokenize(text: str, line: int | None = None, col0: int = 1) -> list[Token]:
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(), col0 + pos))
        pos = m.end()
    out.append(Token("end", "", col0 + len(text)))
    return out


class _Parser:
    def __init__(self, tokens, dim, line):
        self.toks = tokens
        self.i = 0
        self.dim = dim
        self.line = line

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return DSLSyntaxError(msg, self.line, tok.col)

    def eat(self, text):
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        self.i += 1

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            rhs = self.term()
            node = E.Add((node, rhs)) if op == "+" else E.Sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            rhs = self.unary()
            node = E.Mul((node, rhs)) if op == "*" else E.Div(node, rhs)
        return node

    def unary(self):
        if self.tok.text == "-":
            self.i += 1
            return E.Mul((E.MINUS_ONE, self.unary()))
        if self.tok.text == "+":
            self.i += 1
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            self.i += 1
            t = self.tok
            if t.kind != "number" or not t.text.isdigit():
                raise self.error("exponent must be a non-negative integer literal")
            self.i += 1
            return E.Pow(base, int(t.text))
        return base

    def atom(self):
        t = self.tok
        if t.kind == "number":
            self.i += 1
            return E.Const(float(t.text))
        if t.kind == "name":
            self.i += 1
            if t.text == "pi":
                return E.Const(math.pi)
            if t.text in FUNCTIONS:
                self.eat("(")
                arg = self.expr()
                self.eat(")")
                return FUNCTIONS[t.text](arg)
            m = re.fullmatch(r"x(\d+)", t.text)
            if m:
                k = int(m.group(1))
                if self.dim is not None and k >= self.dim:
                    raise self.error(f"variable {t.text} exceeds declared dimension {self.dim}", t)
                return E.Var(k)
            raise self.error(f"unknown name {t.text!r}", t)
        if t.text == "(":
            self.i += 1
            node = self.expr()
            self.eat(")")
            return node
        raise self.error(f"unexpected {t.text or 'end of input'!r}")


def parse_expr(text: str, dim: int | None = None, *, line: int | None = None,
               col0: int = 1, simplified: bool = True) -> E.Expr:
    """Parse a single expression. Variables beyond ``dim`` are rejected."""
    p = _Parser(tokenize(text, line, col0), dim, line)
    node = p.expr()
    if p.tok.kind != "end":
        raise p.error(f"unexpected {p.tok.text!r}")
    return E.simplify(node) if simplified else node


def parse_expr_list(text: str, dim: int | None = None, *, line: int | None = None,
                    col0: int = 1) -> list[E.Expr]:
    """Parse a comma separated list of expressions."""
    p = _Parser(tokenize(text, line, col0), dim, line)
    items = [p.expr()]
    while p.tok.text == ",":
        p.i += 1
        items.append(p.expr())
    if p.tok.kind != "end":
        raise p.error(f"unexpected {p.tok.text!r}")
    return [E.simplify(n) for n in items]
