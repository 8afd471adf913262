"""Adapted frames, structure constants and Popp's volume at equiregular points.

The first ``n_0`` frame fields are constant-coefficient combinations of the
generators, chosen g^0-orthonormal at the base point. Modulo lower layers the
iterated brackets of a frame only depend on the frame's values at the point,
so constant coefficients give the same structure constants as any smooth
extension would. Higher frame fields are bracket fields taken from the table.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .branches import limit_density
from .brackets import BracketTable, growth_at, growth_many
from .errors import EquiregularityError, PoppError
from .symcalc.fields import VectorField, lie_bracket, linear_combination

PROBE_RADIUS = 1e-3
PROBE_POINTS = 24


@dataclass
class AdaptedFrame:
    point: tuple
    fields: list  # Z_1..Z_d
    n: tuple  # growth vector at the point
    F: np.ndarray  # row k = Z_k(m) in coordinates
    sources: list  # where each Z_k comes from
    method: str
    layer0_coefficients: np.ndarray  # Z_k = sum_l c[k, l] X^{0 p_l}, k < n_0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return len(self.fields)

    @property
    def n0(self) -> int:
        return self.n[0]

    def layer_slice(self, j: int) -> slice:
        lo = 0 if j == 0 else self.n[j - 1]
        return slice(lo, self.n[j])

    def nested(self, idx: tuple) -> VectorField:
        """[Z_{i1},[Z_{i2},...,[Z_{ik},Z_{ik+1}]]] for 1-based indices, memoized by suffix."""
        if idx in self._cache:
            return self._cache[idx]
        if len(idx) == 1:
            out = self.fields[idx[0] - 1]
        else:
            out = lie_bracket(self.fields[idx[0] - 1], self.nested(idx[1:]))
        self._cache[idx] = out
        return out

    def to_dict(self) -> dict:
        return {"point": list(self.point), "n": list(self.n), "method": self.method,
                "sources": self.sources, "F": self.F.tolist(),
                "fields": [[str(c) for c in z.components] for z in self.fields]}


def check_equiregular(t: BracketTable, m, radius=PROBE_RADIUS, count=PROBE_POINTS, seed=0):
    m = np.asarray(m, dtype=float)
    base = growth_at(t, m, Q_ref=0)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, m.size))
    dirs *= (radius * rng.uniform(0, 1, size=(count, 1)) ** (1 / m.size)) / np.linalg.norm(dirs, axis=1, keepdims=True)
    for g in growth_many(t, m + dirs, Q_ref=0, skip_failures=True):
        if g is None or g.n != base.n:
            raise EquiregularityError(
                f"growth vector is not locally constant near {tuple(m.tolist())} "
                f"({base.n} at the point, {None if g is None else g.n} nearby); adapted frames and "
                "Popp's volume are only available at equiregular points")
    return base


def _g0_pinv(A0):
    return np.linalg.pinv(A0.T @ A0, rcond=1e-12, hermitian=True)


def adapted_frame(t: BracketTable, m, *, method: str = "greedy", selection=None,
                  probe: bool = True) -> AdaptedFrame:
    """Adapted frame at an equiregular point.

    ``method`` picks the layer-0 construction: ``"greedy"`` (max-volume subset of
    generators, then g^0 Gram-Schmidt) or ``"spectral"`` (scaled eigenvectors of
    ``A_0^T A_0``). ``selection`` optionally maps a layer to 1-based positions of
    the bracket fields to use there.
    """
    m = np.asarray(m, dtype=float)
    gr = check_equiregular(t, m) if probe else growth_at(t, m, Q_ref=0)
    n = gr.n
    A = t.matrices(m)
    A0 = A[0]
    n0 = n[0]
    gens = [e.field for e in t.layers[0]]
    Pinv = _g0_pinv(A0)

    if method == "greedy":
        _, _, piv = sla.qr(A0.T, pivoting=True, mode="economic")
        chosen = sorted(piv[:n0].tolist())
        basis = []  # coefficient vectors over all generators
        for p in chosen:
            c = np.zeros(len(gens))
            c[p] = 1.0
            for b in basis:
                c = c - ((A0.T @ c) @ Pinv @ (A0.T @ b)) * b
            c = c / np.sqrt((A0.T @ c) @ Pinv @ (A0.T @ c))
            basis.append(c)
        C = np.array(basis)
        src = [f"g0-orthonormalized from X^{{0{p + 1}}}" for p in chosen]
    elif method == "spectral":
        mu, W = np.linalg.eigh(A0.T @ A0)
        top = np.argsort(mu)[::-1][:n0]
        C = np.array([A0 @ W[:, k] / np.sqrt(mu[k]) for k in top])
        src = [f"spectral {k + 1}" for k in range(n0)]
    else:
        raise ValueError(f"unknown layer-0 method {method!r}")

    fields = [linear_combination(gens, C[k], f"Z{k + 1}") for k in range(n0)]
    rows = [C[k] @ A0 for k in range(n0)]
    for j in range(1, len(n)):
        need = n[j] - n[j - 1]
        picks = (selection or {}).get(j)
        layer = t.layers[j]
        if picks is not None:
            picks = list(picks)
            if len(picks) != need:
                raise PoppError(f"layer {j} needs {need} fields, selection has {len(picks)}")
        else:
            picks = []
            cur = list(rows)
            for _ in range(need):
                Q = np.linalg.qr(np.array(cur).T)[0] if cur else np.zeros((t.d, 0))
                res = [np.linalg.norm(A[j][q] - Q @ (Q.T @ A[j][q])) if q + 1 not in picks else -1.0
                       for q in range(len(layer))]
                best = int(np.argmax(res))
                picks.append(best + 1)
                cur.append(A[j][best])
        for q in picks:
            e = layer[q - 1]
            fields.append(e.field.relabel(f"Z{len(fields) + 1}"))
            rows.append(A[j][q - 1])
            src.append(e.label)
    F = np.array(rows)
    if F.shape != (t.d, t.d) or abs(np.linalg.det(F)) < 1e-12 * max(1.0, np.abs(F).max()) ** t.d:
        raise PoppError(f"selected fields do not form a frame at {tuple(m.tolist())}")
    return AdaptedFrame(tuple(m.tolist()), fields, n, F, src, method, C)


def structure_constants(fr: AdaptedFrame, j: int, zero_tol: float = 1e-13) -> dict:
    """Layer-j constants: {(i_1..i_{j+1}): {l: b}} with 1-based indices, l in the layer-j block."""
    if not 1 <= j < len(fr.n):
        raise ValueError(f"layer {j} outside 1..{len(fr.n) - 1}")
    sl = fr.layer_slice(j)
    lu = sla.lu_factor(fr.F.T)
    out = {}
    for idx in itertools.product(range(1, fr.n0 + 1), repeat=j + 1):
        vec = fr.nested(idx).evaluate(np.array(fr.point))
        c = sla.lu_solve(lu, vec)
        comp = {l + 1: float(c[l]) for l in range(sl.start, sl.stop) if abs(c[l]) > zero_tol}
        if comp:
            out[idx] = comp
    return out


def B_matrices(fr: AdaptedFrame, constants=None) -> list:
    """B_0 = I and [B_j]^{hl} = sum over index tuples of b^h b^l."""
    Bs = [np.eye(fr.n0)]
    for j in range(1, len(fr.n)):
        sl = fr.layer_slice(j)
        consts = structure_constants(fr, j) if constants is None else constants[j]
        k = sl.stop - sl.start
        B = np.zeros((k, k))
        for comp in consts.values():
            v = np.zeros(k)
            for l, b in comp.items():
                v[l - 1 - sl.start] = b
            B += np.outer(v, v)
        Bs.append(B)
    return Bs


def M_matrices(t: BracketTable, fr: AdaptedFrame) -> list:
    """Nonzero blocks of the layer matrices rewritten in the adapted frame."""
    A = t.matrices(np.array(fr.point))
    Finv = np.linalg.inv(fr.F)
    Ms = []
    for i in range(len(fr.n)):
        sl = fr.layer_slice(i)
        Abar = A[i] @ Finv
        Abar[:, : sl.start] = 0.0
        Ms.append((Abar.T @ Abar)[sl, sl])
    return Ms


def det_ratio(t: BracketTable, fr: AdaptedFrame, Ms, h_grid=(1e-1, 1e-2, 1e-3)) -> list:
    """det(frame-Ginv(h)) / (h^{2 sigma} prod det M_i) along the grid; tends to 1."""
    A = t.matrices(np.array(fr.point))
    sigma = sum(j * (fr.n[j] - (fr.n[j - 1] if j else 0)) for j in range(len(fr.n)))
    prodM = float(np.prod([np.linalg.det(M) for M in Ms]))
    detF = np.linalg.det(fr.F)
    out = []
    for h in h_grid:
        S = np.vstack([h ** i * a for i, a in enumerate(A)])
        s = np.linalg.svd(S, compute_uv=False)
        out.append(float(np.prod(s ** 2) / detF ** 2 / (h ** (2 * sigma) * prodM)))
    return out


@dataclass
class PoppData:
    frame: AdaptedFrame
    structure_constants: dict  # layer -> sparse constants
    B: list
    M: list
    popp_density: float
    det_ratios: list

    def to_dict(self) -> dict:
        return {
            "frame": self.frame.to_dict(),
            "structure_constants": {
                str(j): [{"indices": list(k), "components": {str(l): b for l, b in v.items()}}
                         for k, v in c.items()]
                for j, c in self.structure_constants.items()},
            "B": [b.tolist() for b in self.B],
            "M": [m.tolist() for m in self.M],
            "popp_density": self.popp_density,
            "det_ratios": self.det_ratios,
        }


def popp(t: BracketTable, m, *, method: str = "greedy", selection=None, probe: bool = True) -> PoppData:
    fr = adapted_frame(t, m, method=method, selection=selection, probe=probe)
    consts = {j: structure_constants(fr, j) for j in range(1, len(fr.n))}
    Bs = B_matrices(fr, consts)
    for j, B in enumerate(Bs):
        if B.size and np.linalg.eigvalsh(B).min() <= 1e-14 * max(1.0, np.abs(B).max()):
            raise PoppError(f"B_{j} is not positive definite at {fr.point}; the frame is not adapted")
    dens = float(np.prod([np.linalg.det(B) for B in Bs]) ** -0.5 / abs(np.linalg.det(fr.F)))
    Ms = M_matrices(t, fr)
    for i, M in enumerate(Ms):
        if np.linalg.matrix_rank(M, 1e-10 * max(1.0, np.abs(M).max())) != M.shape[0]:
            raise PoppError(f"M_{i} is rank deficient at {fr.point}")
    return PoppData(fr, consts, Bs, Ms, dens, det_ratio(t, fr, Ms))


def popp_density(t: BracketTable, m, **kw) -> float:
    return popp(t, m, **kw).popp_density


@dataclass
class VolumeComparison:
    point: tuple
    popp_density: float
    limit_density: float
    relative_gap: float
    ok: bool
    popp: PoppData = field(repr=False)
    branches: object = field(repr=False)

    def to_dict(self) -> dict:
        return {"point": list(self.point), "popp_density": self.popp_density,
                "limit_density": self.limit_density, "relative_gap": self.relative_gap, "ok": self.ok,
                "popp": self.popp.to_dict(), "branches": self.branches.to_dict()}


def compare_volumes(t: BracketTable, m, rtol: float = 1e-6, **kw) -> VolumeComparison:
    pd = popp(t, m, **kw)
    br = limit_density(t, m)
    gap = abs(pd.popp_density - br.density_SR) / br.density_SR
    return VolumeComparison(tuple(float(v) for v in m), pd.popp_density, br.density_SR, float(gap),
                            bool(gap <= rtol), pd, br)
