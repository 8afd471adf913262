"""Pointwise bracket matrices and the inverse Gram matrix of the h-metrics.

``Ginv(h) = sum_i h^(2i) A_i^T A_i`` where row ``j`` of ``A_i`` holds the
coordinates of the ``j``-th layer-``i`` bracket at the point. Two independent
evaluation paths for the metric are provided: a Cholesky solve against
``Ginv`` and a weighted least-norm problem solved by QR.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations

import mpmath
import numpy as np
import scipy.linalg as sla

from .brackets import RANK_TOL, BracketTable
from .errors import HormanderError, SRError

COND_LIMIT = 1e8


@dataclass(frozen=True)
class GramData:
    point: tuple
    A: tuple  # A_0..A_r, each (N_i, d)
    frame: str = "coordinate"

    @property
    def d(self) -> int:
        return self.A[0].shape[1]

    @property
    def r(self) -> int:
        return len(self.A) - 1

    def Ginv(self, h: float) -> np.ndarray:
        out = np.zeros((self.d, self.d))
        for i, Ai in enumerate(self.A):
            if Ai.shape[0]:
                out += h ** (2 * i) * (Ai.T @ Ai)
        return out

    def stacked(self, h: float = 1.0) -> np.ndarray:
        """Rows ``h^i A_i`` stacked; ``Ginv(h) = S^T S``."""
        return np.vstack([h ** i * Ai for i, Ai in enumerate(self.A)])

    def det(self, h: float) -> float:
        """det Ginv(h) as the product of squared singular values of the stacked rows.

        Avoids the cancellation of a direct determinant when h is small.
        """
        sv = np.linalg.svd(self.stacked(h), compute_uv=False)
        return float(np.prod(sv[: self.d] ** 2)) if sv.size >= self.d else 0.0

    def layer_ranks(self, tol: float = RANK_TOL) -> list:
        return [int(np.linalg.matrix_rank(Ai, tol * max(1.0, np.abs(Ai).max()))) if Ai.size else 0
                for Ai in self.A]

    def to_dict(self, h=None) -> dict:
        out = {"point": list(self.point), "frame": self.frame, "A": [Ai.tolist() for Ai in self.A]}
        if h is not None:
            out["h"] = h
            out["Ginv"] = self.Ginv(h).tolist()
        return out


def assemble(t: BracketTable, m, tol: float = RANK_TOL) -> GramData:
    m = np.asarray(m, dtype=float)
    A = tuple(np.asarray(a, dtype=float) for a in t.matrices(m))
    S = np.vstack(A)
    sv = np.linalg.svd(S, compute_uv=False)
    if sv.size < t.d or sv[t.d - 1] <= tol * sv[0]:
        raise HormanderError(f"brackets up to depth {t.r} do not span the tangent space at {tuple(m.tolist())}",
                             tuple(m.tolist()))
    return GramData(tuple(float(v) for v in m), A)


def _check_h(h):
    if not h > 0:
        raise SRError(f"h must be positive, got {h}")


def metric_eval(g: GramData, h: float, v) -> float:
    """``v^T Ginv(h)^{-1} v`` via a Cholesky solve (pseudo-inverse fallback)."""
    _check_h(h)
    v = np.asarray(v, dtype=float)
    G = g.Ginv(h)
    try:
        c = sla.cho_factor(G, check_finite=True)
        x = sla.cho_solve(c, v)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        x = np.linalg.pinv(G, rcond=1e-15, hermitian=True) @ v
        if not np.allclose(G @ x, v, atol=1e-8 * (1 + np.abs(v).max())):
            raise HormanderError(f"metric solve failed at {g.point} for h={h}", g.point) from None
    return float(v @ x)


def metric_eval_oracle(g: GramData, h: float, v) -> float:
    """Independent path: least ``|delta_h u|^2`` subject to ``sum u_ij X^ij(m) = v``.

    With ``w = delta_h u`` the constraint reads ``S_h^T w = v`` for the stacked
    ``S_h = [h^i A_i]``. Writing ``S_h = QR`` the minimum is ``|R^{-T} v|^2``.
    """
    _check_h(h)
    v = np.asarray(v, dtype=float)
    S = g.stacked(h)
    _, R = np.linalg.qr(S, mode="reduced")
    if np.min(np.abs(np.diag(R))) <= 1e-300:
        raise HormanderError(f"weighted bracket matrix is rank deficient at {g.point}", g.point)
    y = sla.solve_triangular(R, v, trans="T")
    return float(y @ y)


def horizontal_norm(g: GramData, v, tol: float = 1e-10) -> float:
    """g^0(v): least ``|u|^2`` over layer-0 coefficients with ``A_0^T u = v``; inf if v is not horizontal."""
    v = np.asarray(v, dtype=float)
    u, *_ = np.linalg.lstsq(g.A[0].T, v, rcond=None)
    if np.linalg.norm(g.A[0].T @ u - v) > tol * (1 + np.linalg.norm(v)):
        return float("inf")
    return float(u @ u)


def degree_bound(g: GramData) -> int:
    """Largest possible power of h^2 in det Ginv(h).

    By Cauchy-Binet every term picks d independent rows; at most rank(A_i)
    of them come from layer i, so filling from the deepest layer bounds the degree.
    """
    ranks = g.layer_ranks()
    left, deg = g.d, 0
    for i in range(len(ranks) - 1, -1, -1):
        take = min(ranks[i], left)
        deg += i * take
        left -= take
    return deg


@dataclass
class DetExpansion:
    coefficients: list  # a_k, det Ginv(h) = sum_k a_k h^(2k)
    leading_index: int  # smallest k with a_k != 0
    condition: float
    nodes: list  # h values used

    @property
    def leading_order(self) -> int:
        """Vanishing order in h (twice the leading index)."""
        return 2 * self.leading_index

    @property
    def leading_coefficient(self) -> float:
        return self.coefficients[self.leading_index]

    def __call__(self, h):
        t = np.asarray(h, dtype=float) ** 2
        return sum(a * t ** k for k, a in enumerate(self.coefficients))

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients, "leading_index": self.leading_index,
                "leading_order": self.leading_order, "condition": self.condition, "nodes": self.nodes}


def _default_nodes(count):
    return [2.0 ** (-k / 2) for k in range(count)]  # h^2 = 1, 1/2, 1/4, ...


def det_expansion(g: GramData, h_grid=None, *, zero_tol: float = 1e-11) -> DetExpansion:
    """Coefficients of det Ginv(h) as a polynomial in h^2, from a Vandermonde solve."""
    D = degree_bound(g)
    nodes = _default_nodes(D + 1) if h_grid is None else sorted({float(h) for h in h_grid}, reverse=True)
    if any(not (0 < h <= 1) for h in nodes):
        raise SRError("det expansion nodes must lie in (0, 1]")
    if len(nodes) < D + 1:
        raise SRError(f"need at least {D + 1} distinct nodes for a degree-{D} fit in h^2, got {len(nodes)}")
    t = np.array(nodes) ** 2
    V = np.vander(t, D + 1, increasing=True)
    vals = np.array([g.det(h) for h in nodes])
    cond = float(np.linalg.cond(V))
    if cond > COND_LIMIT:
        warnings.warn(f"Vandermonde condition number {cond:.2e}; refitting in extended precision",
                      RuntimeWarning)
        coef = _mp_fit(g, nodes, D)
    else:
        coef = np.linalg.lstsq(V, vals, rcond=None)[0]
    scale = max(np.abs(coef).max(), 1e-300)
    coef = [0.0 if abs(c) <= zero_tol * scale else float(c) for c in coef]
    nz = [k for k, c in enumerate(coef) if c != 0.0]
    lead = nz[0] if nz else 0
    return DetExpansion(coef, lead, cond, nodes)


def _mp_fit(g, nodes, D, dps=50):
    with mpmath.workdps(dps):
        rows, rhs = [], []
        for h in nodes:
            G = mpmath.matrix(g.d, g.d)
            hh = mpmath.mpf(h)
            for i, Ai in enumerate(g.A):
                W = mpmath.matrix(Ai.tolist()) if Ai.size else None
                if W is not None:
                    G += hh ** (2 * i) * (W.T * W)
            rows.append([(hh ** 2) ** k for k in range(D + 1)])
            rhs.append(mpmath.det(G))
        sol = mpmath.lu_solve(mpmath.matrix(rows), mpmath.matrix(rhs)) if len(nodes) == D + 1 else \
            mpmath.qr_solve(mpmath.matrix(rows), mpmath.matrix(rhs))[0]
        return [float(c) for c in sol]


def det_coefficients_exact(g: GramData) -> list:
    """Cauchy-Binet expansion: a_k = sum of det(rows)^2 over d-row subsets of total depth k."""
    rows = [(i, a) for i, Ai in enumerate(g.A) for a in Ai]
    coef = [0.0] * (degree_bound(g) + 1)
    for S in combinations(range(len(rows)), g.d):
        k = sum(rows[s][0] for s in S)
        val = np.linalg.det(np.array([rows[s][1] for s in S])) ** 2
        if k < len(coef):
            coef[k] += val
    return coef
