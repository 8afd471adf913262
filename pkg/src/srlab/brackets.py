"""Iterated bracket layers, growth vectors and Hörmander scans.

Layer ``i`` holds the right-nested brackets
``[X^{0 i1}, [X^{0 i2}, ... [X^{0 i_i}, X^{0 i_{i+1}}]]]`` indexed by 1-based
multi-indices of length ``i + 1``, in lexicographic order. Brackets that vanish
identically are left out; repeated vector fields coming from different
multi-indices are kept.
"""
from __future__ import annotations

import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import HormanderError
from .symcalc.fields import NONZERO, NUMERIC_ZERO, VectorField, lie_bracket, zero_test
from .symcalc.structure import SRStructure

RANK_TOL = 1e-9
ZERO_TOL = 1e-10
ZERO_SAMPLES = 200


@dataclass(frozen=True)
class BracketEntry:
    index: tuple  # 1-based multi-index
    field: VectorField
    layer: int
    position: int  # 1-based j within the layer

    @property
    def label(self) -> str:
        sep = "," if self.position > 9 or self.layer > 9 else ""
        return f"X^{{{self.layer}{sep}{self.position}}}"


@dataclass
class BracketTable:
    structure: SRStructure
    layers: list
    numerically_zero: list = field(default_factory=list)
    seed: int = 0

    @property
    def N(self) -> list:
        return [len(layer) for layer in self.layers]

    @property
    def r(self) -> int:
        """Deepest non-empty layer."""
        r = 0
        for i, layer in enumerate(self.layers):
            if layer:
                r = i
        return r

    @property
    def r_max(self) -> int:
        return self.structure.r_max

    @property
    def d(self) -> int:
        return self.structure.d

    def entries(self, upto=None):
        upto = self.r if upto is None else upto
        for i in range(upto + 1):
            yield from self.layers[i]

    def matrices(self, points):
        """A_0 .. A_r evaluated at a point ``(d,)`` or at points ``(P, d)``.

        Returns a list of arrays of shape ``(N_i, d)`` (single point) or
        ``(P, N_i, d)``.
        """
        pts = np.asarray(points, dtype=float)
        out = []
        for i in range(self.r + 1):
            rows = [e.field.evaluate(pts) for e in self.layers[i]]
            if pts.ndim == 1:
                out.append(np.array(rows).reshape(len(rows), self.d))
            else:
                out.append(np.stack(rows, axis=-2) if rows else np.zeros(pts.shape[:-1] + (0, self.d)))
        return out

    @cached_property
    def reference_Q(self) -> int:
        """Minimum of Q over quasi-random domain samples (the global Hausdorff dimension)."""
        pts = self.structure.domain.sample(ZERO_SAMPLES, self.seed)
        Qs = [g.Q for g in growth_many(self, pts, RANK_TOL, skip_failures=True) if g is not None]
        if not Qs:
            raise HormanderError("Hörmander's condition fails on every reference sample")
        return min(Qs)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "r": self.r,
            "r_max": self.r_max,
            "layers": [
                [{"label": e.label, "index": list(e.index), "components": [str(c) for c in e.field.components]}
                 for e in layer]
                for layer in self.layers
            ],
            "numerically_zero": [list(ix) for ix in self.numerically_zero],
        }


def enumerate_brackets(s: SRStructure, *, tol: float = ZERO_TOL, samples=None, seed: int = 0) -> BracketTable:
    """All non-vanishing right-nested brackets up to depth ``s.r_max``."""
    if samples is None:
        samples = s.domain.sample(ZERO_SAMPLES, seed)
    gens = s.generators
    layer0 = [BracketEntry((j + 1,), g.relabel(f"X^{{0{j + 1}}}"), 0, j + 1) for j, g in enumerate(gens)]
    layers = [layer0]
    numeric = []
    prev = layer0
    for i in range(1, s.r_max + 1):
        cur = []
        # first index outermost and tails in lexicographic order -> lexicographic overall
        for a, g in enumerate(gens, start=1):
            for tail in prev:
                br = lie_bracket(g, tail.field)
                tag = zero_test(br, samples, tol)
                if tag == NONZERO:
                    entry = BracketEntry((a,) + tail.index, br, i, len(cur) + 1)
                    cur.append(BracketEntry(entry.index, br.relabel(entry.label), i, entry.position))
                elif tag == NUMERIC_ZERO:
                    numeric.append((a,) + tail.index)
        layers.append(cur)
        prev = cur
        if not cur:
            # every deeper bracket is a bracket with a vanishing field
            layers.extend([] for _ in range(i + 1, s.r_max + 1))
            break
    return BracketTable(s, layers, numeric, seed)


@dataclass(frozen=True)
class GrowthData:
    point: tuple
    n: tuple
    step: int
    sigma: int
    Q: int
    singular: bool

    def to_row(self) -> dict:
        return {"point": list(self.point), "n": list(self.n), "step": self.step,
                "sigma": self.sigma, "Q": self.Q, "singular": self.singular}


def sigma_and_Q(n):
    """Return (ς, Q) for a growth vector n_0..n_r."""
    sigma = Q = 0
    prev = 0
    for i, ni in enumerate(n):
        Q += (i + 1) * (ni - prev)
        sigma += i * (ni - prev)
        prev = ni
    return sigma, Q


def _ranks(mats, tol):
    """Numerical ranks of the cumulative row stacks for a batch of points.

    ``mats[i]`` has shape (P, N_i, d). Returns an int array (P, r+1).
    """
    P = mats[0].shape[0]
    ranks = []
    stack = np.zeros((P, 0, mats[0].shape[-1]))
    for Ai in mats:
        stack = np.concatenate([stack, Ai], axis=1)
        if stack.shape[1] == 0:
            ranks.append(np.zeros(P, dtype=int))
            continue
        sv = np.linalg.svd(stack, compute_uv=False)
        smax = sv[:, :1]
        ranks.append(np.sum(sv > tol * np.maximum(smax, np.finfo(float).tiny), axis=1))
    return np.stack(ranks, axis=1)


def growth_many(t: BracketTable, points, tol: float = RANK_TOL, *, Q_ref=None, skip_failures=False):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mats = t.matrices(pts)
    ranks = _ranks(mats, tol)
    d = t.d
    out = []
    for p, rk in zip(pts, ranks):
        full = np.nonzero(rk == d)[0]
        if full.size == 0:
            if skip_failures:
                out.append(None)
                continue
            raise HormanderError(
                f"Hörmander's condition fails at {tuple(float(v) for v in p)} within depth {t.r} "
                f"(ranks {rk.tolist()})", tuple(float(v) for v in p))
        r_m = int(full[0])
        n = tuple(int(v) for v in rk[: r_m + 1])
        sigma, Q = sigma_and_Q(n)
        out.append((tuple(float(v) for v in p), n, r_m + 1, sigma, Q))
    if Q_ref is None:
        # avoid recursion while computing the reference itself
        Q_ref = min((o[4] for o in out if o is not None), default=0) if skip_failures else t.reference_Q
    return [None if o is None else GrowthData(*o, singular=o[4] > Q_ref) for o in out]


def growth_at(t: BracketTable, m, tol: float = RANK_TOL, *, Q_ref=None) -> GrowthData:
    """Growth vector, step, ς and Q at a point.

    ``singular`` compares Q(m) with ``Q_ref`` (default: the table's reference Q,
    the minimum over quasi-random domain samples).
    """
    return growth_many(t, [m], tol, Q_ref=Q_ref)[0]


@dataclass
class ScanReport:
    rows: list
    failures: list
    Q_global: int | None
    growth_vectors: dict
    may_be_underexplored: bool

    @property
    def equiregular(self) -> bool:
        return len(self.growth_vectors) == 1 and not self.failures

    @property
    def singular_points(self) -> list:
        return [g.point for g in self.rows if g.singular]

    def to_dict(self) -> dict:
        return {
            "Q_global": self.Q_global,
            "equiregular": self.equiregular,
            "growth_vectors": {",".join(map(str, k)): v for k, v in self.growth_vectors.items()},
            "failures": [list(p) for p in self.failures],
            "singular_sample": [list(p) for p in self.singular_points[:20]],
            "may_be_underexplored": self.may_be_underexplored,
        }


def hormander_scan(t: BracketTable, grid, tol: float = RANK_TOL, *, workers: int = 1,
                   chunk: int = 4096) -> ScanReport:
    """Growth data over a grid; failing points are listed but do not stop the scan."""
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("empty grid")
    chunks = [pts[i:i + chunk] for i in range(0, pts.shape[0], chunk)]

    def work(c):
        return growth_many(t, c, tol, Q_ref=0, skip_failures=True)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    raw = [g for part in parts for g in part]
    failures = [tuple(float(v) for v in p) for p, g in zip(pts, raw) if g is None]
    ok = [g for g in raw if g is not None]
    Q_global = min((g.Q for g in ok), default=None)
    rows = [GrowthData(g.point, g.n, g.step, g.sigma, g.Q, g.Q > Q_global) for g in ok]
    counts = Counter(g.n for g in rows)
    under = any(g.step - 1 >= t.r_max for g in rows) and t.r_max > 0
    if under:
        warnings.warn(f"layer rmax={t.r_max} was still needed somewhere; a deeper rmax may change the result",
                      RuntimeWarning)
    if failures:
        warnings.warn(f"Hörmander's condition fails at {len(failures)} grid point(s)", RuntimeWarning)
    return ScanReport(rows, failures, Q_global, dict(sorted(counts.items())), under)
