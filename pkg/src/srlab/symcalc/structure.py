"""Sub-Riemannian structures and the line-based structure DSL.

A structure file looks like::

    # Heisenberg group
    dim 3
    domain box -1 1 -1 1 -1 1
    rmax 2
    field 1, 0, 0
    field 0, 1, x0
    volume 1

Statements may also be separated by ``;`` on a single line. ``domain`` is
either ``torus p1 ... pd`` (the torus ``prod [0, p_k)``) or ``box lo1 hi1 ...``;
periods and bounds may be constant expressions such as ``2*pi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from ..errors import DSLSyntaxError, EvaluationError, StructureError
from . import expr as E
from .fields import VectorField
from .parser import parse_expr, parse_expr_list

DEFAULT_RMAX = 2


@dataclass(frozen=True)
class Domain:
    kind: str  # "torus" or "box"
    lower: tuple
    upper: tuple

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def periods(self) -> tuple:
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    def sample(self, n: int = 200, seed: int = 0) -> np.ndarray:
        """Scrambled Sobol points (reproducible for a given seed)."""
        sob = qmc.Sobol(self.dim, scramble=True, seed=seed)
        m = max(1, math.ceil(math.log2(max(n, 1))))
        pts = sob.random_base2(m)[:n]
        return qmc.scale(pts, self.lower, self.upper)

    def grid(self, n: int) -> np.ndarray:
        """Tensor grid with ``n`` points per axis, row-major, shape ``(n**d, d)``."""
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            if self.is_torus:
                axes.append(lo + (hi - lo) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo, hi, n))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def describe(self) -> str:
        if self.is_torus:
            return "torus " + " ".join(repr(p) for p in self.periods)
        return "box " + " ".join(f"{l!r} {u!r}" for l, u in zip(self.lower, self.upper))


@dataclass
class SRStructure:
    d: int
    domain: Domain
    generators: list
    r_max: int = DEFAULT_RMAX
    omega_density: E.Expr = E.ONE
    name: str = ""
    source: str = field(default="", repr=False)

    def __post_init__(self):
        if not self.generators:
            raise StructureError("a structure needs at least one generator")
        if self.r_max < 0:
            raise StructureError("rmax must be >= 0")
        for g in self.generators:
            if g.dim != self.d:
                raise StructureError(f"generator {g.label} has {g.dim} components, expected {self.d}")

    @property
    def N0(self) -> int:
        return len(self.generators)

    def omega(self, points) -> np.ndarray:
        return np.broadcast_to(E.evaluate(self.omega_density, np.atleast_2d(points)), (np.atleast_2d(points).shape[0],))

    def check_volume(self, points=None):
        pts = self.domain.sample(64) if points is None else np.atleast_2d(points)
        vals = self.omega(pts)
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise StructureError("volume density must be strictly positive on the domain")

    def with_generators(self, generators) -> "SRStructure":
        return SRStructure(self.d, self.domain, list(generators), self.r_max, self.omega_density, self.name, self.source)


def _contains(e: E.Expr, cls) -> bool:
    if isinstance(e, cls):
        return True
    return any(_contains(c, cls) for c in e.children())


def _statements(text):
    """Yield (line_no, col, statement_text) with comments stripped."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        pos = 0
        for chunk in line.split(";"):
            stripped = chunk.strip()
            if stripped:
                col = pos + (len(chunk) - len(chunk.lstrip())) + 1
                yield ln, col, stripped
            pos += len(chunk) + 1


def _const_value(tok: str, ln: int, col: int) -> float:
    e = parse_expr(tok, 0, line=ln, col0=col)
    if not isinstance(e, E.Const):
        raise DSLSyntaxError(f"expected a constant, found {tok!r}", ln, col)
    return e.value


def _words(body: str, col0: int):
    out = []
    pos = 0
    for w in body.split():
        i = body.index(w, pos)
        out.append((w, col0 + i))
        pos = i + len(w)
    return out


def parse_structure(text: str, name: str = "") -> SRStructure:
    """Parse the structure DSL; see the module docstring for the format."""
    d = None
    domain = None
    rmax = DEFAULT_RMAX
    volume = E.ONE
    gens = []
    gen_lines = []
    for ln, col, stmt in _statements(text):
        kw = stmt.split(None, 1)[0]
        rest = stmt[len(kw):]
        body = rest.strip()
        body_col = col + len(kw) + (len(rest) - len(rest.lstrip()))
        if kw == "dim":
            if d is not None:
                raise DSLSyntaxError("dimension declared twice", ln, col)
            try:
                d = int(body)
            except ValueError:
                raise DSLSyntaxError(f"dim expects a positive integer, found {body!r}", ln, body_col) from None
            if d < 1:
                raise DSLSyntaxError("dim must be >= 1", ln, body_col)
        elif kw == "name":
            name = body
        elif kw == "rmax":
            try:
                rmax = int(body)
            except ValueError:
                raise DSLSyntaxError(f"rmax expects an integer, found {body!r}", ln, body_col) from None
            if rmax < 0:
                raise DSLSyntaxError("rmax must be >= 0", ln, body_col)
        elif kw == "domain":
            if d is None:
                raise DSLSyntaxError("'dim' must come before 'domain'", ln, col)
            words = _words(body, body_col)
            if not words:
                raise DSLSyntaxError("domain expects 'torus' or 'box'", ln, body_col)
            kind, vals = words[0][0], [_const_value(w, ln, c) for w, c in words[1:]]
            if kind == "torus":
                if len(vals) != d:
                    raise StructureError(f"line {ln}: torus needs {d} periods, got {len(vals)}")
                if any(p <= 0 for p in vals):
                    raise StructureError(f"line {ln}: torus periods must be positive")
                domain = Domain("torus", (0.0,) * d, tuple(vals))
            elif kind == "box":
                if len(vals) != 2 * d:
                    raise StructureError(f"line {ln}: box needs {2 * d} bounds, got {len(vals)}")
                lo, hi = tuple(vals[0::2]), tuple(vals[1::2])
                if any(h <= l for l, h in zip(lo, hi)):
                    raise StructureError(f"line {ln}: box bounds must satisfy lo < hi")
                domain = Domain("box", lo, hi)
            else:
                raise DSLSyntaxError(f"unknown domain kind {kind!r}", ln, words[0][1])
        elif kw == "field":
            if d is None:
                raise DSLSyntaxError("'dim' must come before 'field'", ln, col)
            comps = parse_expr_list(body, d, line=ln, col0=body_col)
            if len(comps) != d:
                raise StructureError(f"line {ln}: field has {len(comps)} components but dim is {d}")
            if any(_contains(c, E.Abs) for c in comps):
                raise StructureError(f"line {ln}: abs() is not allowed in generator fields (fields must be smooth)")
            gens.append(VectorField(tuple(comps), f"X^{{0{len(gens) + 1}}}"))
            gen_lines.append(ln)
        elif kw == "volume":
            if d is None:
                raise DSLSyntaxError("'dim' must come before 'volume'", ln, col)
            volume = parse_expr(body, d, line=ln, col0=body_col)
            if isinstance(volume, E.Const) and volume.value <= 0:
                raise StructureError(f"line {ln}: volume density must be positive, got {volume.value}")
        else:
            raise DSLSyntaxError(f"unknown statement {kw!r}", ln, col)
    if d is None:
        raise DSLSyntaxError("missing 'dim' statement")
    if not gens:
        raise StructureError("no 'field' statements")
    if domain is None:
        domain = Domain("box", (-1.0,) * d, (1.0,) * d)
    s = SRStructure(d, domain, gens, rmax, volume, name, text)
    try:
        s.check_volume()
    except EvaluationError as exc:
        raise StructureError(f"volume density is singular on the domain: {exc}") from None
    return s


def format_structure(s: SRStructure) -> str:
    lines = []
    if s.name:
        lines.append(f"name {s.name}")
    lines.append(f"dim {s.d}")
    lines.append(f"domain {s.domain.describe()}")
    lines.append(f"rmax {s.r_max}")
    for g in s.generators:
        lines.append("field " + ", ".join(str(c) for c in g.components))
    lines.append(f"volume {s.omega_density}")
    return "\n".join(lines) + "\n"
