"""Eigenvalue branches of Ginv(h) as h -> 0 and the induced limit density.

Two routes to the same numbers:

* :func:`nested_hats` works at h = 0 directly. It projects each layer's
  ``A_j^T A_j`` onto the orthogonal complement of the span built so far and
  reads off the nonzero eigenvalues (the limiting prefactors of the order-h^{2j}
  branches).
* :func:`branch_fit` diagonalizes Ginv(h) on a geometric h grid, tracks the
  eigenvalues across the grid and fits their order and prefactor.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .brackets import BracketTable, growth_at
from .errors import HormanderError
from .gram import GramData, assemble

HAT_TOL = 1e-9
DEFAULT_HGRID = tuple(2.0 ** -k for k in range(3, 11))


@dataclass
class NestedHats:
    bases: list  # V_j as (d, n_j) orthonormal columns
    prefactors: list  # per order j, sorted nonzero eigenvalues of the projected layer-j block
    cutoff: float

    @property
    def n(self) -> list:
        return [b.shape[1] for b in self.bases]

    @property
    def f(self) -> float:
        return float(np.prod([np.prod(p) for p in self.prefactors if len(p)]))

    @property
    def sigma(self) -> int:
        return sum(j * len(p) for j, p in enumerate(self.prefactors))


def nested_hats(A, tol: float = HAT_TOL) -> NestedHats:
    """Nested subspaces V_j and prefactors of order 2j (see module docstring)."""
    A = [np.asarray(a, dtype=float) for a in A]
    d = A[0].shape[1]
    trace = sum(float(np.sum(a * a)) for a in A)
    if trace == 0.0:
        raise HormanderError("all bracket fields vanish at this point")
    cutoff = tol * trace
    V = np.zeros((d, 0))
    bases, prefs = [], []
    for j, Aj in enumerate(A):
        P = np.eye(d) - V @ V.T
        M = P @ (Aj.T @ Aj) @ P if Aj.size else np.zeros((d, d))
        mu, W = np.linalg.eigh((M + M.T) / 2)
        keep = mu > cutoff
        close = (mu > cutoff / 10) & (mu < cutoff * 10)
        if np.any(close):
            warnings.warn(f"layer {j}: eigenvalue {mu[close][0]:.3e} within a factor 10 of the cutoff "
                          f"{cutoff:.3e}; the point may be near a singular stratum", RuntimeWarning)
        if np.any(keep):
            Q, _ = np.linalg.qr(np.hstack([V, W[:, keep]]))
            V = Q[:, : V.shape[1] + int(keep.sum())]
        bases.append(V.copy())
        prefs.append(np.sort(mu[keep]))
        if V.shape[1] == d:
            break
    if V.shape[1] < d:
        raise HormanderError(f"nested spans reach dimension {V.shape[1]} < {d}")
    return NestedHats(bases, prefs, cutoff)


@dataclass
class BranchReport:
    point: tuple
    n: list
    subspaces: list
    prefactors: list
    f: float  # local leading coefficient, det Ginv(h) ~ f h^(2 sigma)
    sigma: int
    singular: bool
    density_local: float  # f^{-1/2}
    f_global: float  # coefficient of h^(2 sigma_global); 0 on the singular set
    density_SR: float  # inf on the singular set

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "n": self.n,
            "subspaces": [b.tolist() for b in self.subspaces],
            "prefactors": [p.tolist() for p in self.prefactors],
            "f": self.f,
            "sigma": self.sigma,
            "singular": self.singular,
            "density_local": self.density_local,
            "f_global": self.f_global,
            "density_SR": self.density_SR,
        }


def limit_density(t: BracketTable, m, *, tol: float = HAT_TOL, Q_ref=None) -> BranchReport:
    """f(m), sigma(m) and the coordinate density of the limit volume at m."""
    gr = growth_at(t, m, Q_ref=Q_ref)
    g = assemble(t, m)
    nh = nested_hats(g.A, tol)
    f = nh.f
    Q_glob = t.reference_Q if Q_ref is None else Q_ref
    sing = gr.Q > Q_glob
    dens = f ** -0.5
    return BranchReport(g.point, nh.n, nh.bases, nh.prefactors, f, nh.sigma, sing, dens,
                        0.0 if sing else f, math.inf if sing else dens)


@dataclass
class BranchFit:
    h_grid: list
    eigenvalues: np.ndarray  # (len(h_grid), d), column b = branch b
    slopes: list
    orders: list
    prefactors: list
    flagged: list = field(default_factory=list)  # branches whose slope is not near an even integer
    unmatched: list = field(default_factory=list)
    refinements: int = 0

    def by_order(self) -> dict:
        out = {}
        for o, p in zip(self.orders, self.prefactors):
            out.setdefault(o, []).append(p)
        return {o: sorted(v) for o, v in sorted(out.items())}

    def to_dict(self) -> dict:
        return {"h_grid": self.h_grid, "orders": self.orders, "prefactors": self.prefactors,
                "slopes": self.slopes, "flagged": self.flagged, "unmatched": self.unmatched,
                "refinements": self.refinements}


def _spectrum(g: GramData, h: float):
    # singular values of the stacked rows keep small eigenvalues accurate
    _, s, Vt = np.linalg.svd(g.stacked(h), full_matrices=False)
    order = np.argsort(s)[::-1]
    return s[order] ** 2, Vt[order].T


def _match(prev_vecs, pred_log, vecs, lam):
    cost = (1.0 - np.abs(prev_vecs.T @ vecs)) + 0.1 * np.abs(np.log(lam)[None, :] - pred_log[:, None])
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    ambiguous = False
    loglam = np.log(lam)
    k = len(perm)
    for a in range(k):
        for b in range(a + 1, k):
            p, q = perm[a], perm[b]
            delta = cost[a, q] + cost[b, p] - cost[a, p] - cost[b, q]
            if delta < 0.05 and abs(loglam[p] - loglam[q]) > 1e-6:
                ambiguous = True
    return perm, ambiguous


def branch_fit(g: GramData, h_grid=DEFAULT_HGRID, *, slope_tol: float = 0.2) -> BranchFit:
    """Track eigenvalues of Ginv(h) over a decreasing h grid and fit order and prefactor."""
    hs = sorted((float(h) for h in h_grid), reverse=True)
    if len(hs) < 4:
        raise ValueError("branch_fit needs at least four grid values")
    lam0, vec0 = _spectrum(g, hs[0])
    d = lam0.size
    track = [lam0]
    vecs = vec0
    slopes_now = np.zeros(d)
    unmatched = set()
    refinements = 0
    for k in range(1, len(hs)):
        h_prev, h = hs[k - 1], hs[k]
        lam, V = _spectrum(g, h)
        pred = np.log(track[-1]) + slopes_now * math.log(h / h_prev)
        perm, amb = _match(vecs, pred, V, lam)
        if amb:
            refinements += 1
            hm = math.sqrt(h_prev * h)
            lm, Vm = _spectrum(g, hm)
            pm, amb1 = _match(vecs, np.log(track[-1]) + slopes_now * math.log(hm / h_prev), Vm, lm)
            lm, Vm = lm[pm], Vm[:, pm]
            sl_mid = (np.log(lm) - np.log(track[-1])) / math.log(hm / h_prev)
            perm, amb2 = _match(Vm, np.log(lm) + sl_mid * math.log(h / hm), V, lam)
            if amb1 or amb2:
                unmatched.update(range(d))
        lam, V = lam[perm], V[:, perm]
        # align eigenvector signs for the next overlap test
        V = V * np.where(np.sum(V * vecs, axis=0) < 0, -1.0, 1.0)
        slopes_now = (np.log(lam) - np.log(track[-1])) / math.log(h / h_prev)
        track.append(lam)
        vecs = V
    E = np.array(track)
    logh = np.log(hs)
    half = len(hs) // 2
    slopes, orders, prefs, flagged = [], [], [], []
    for b in range(d):
        sl = float(np.polyfit(logh[half:], np.log(E[half:, b]), 1)[0])
        o = 2 * int(round(sl / 2))
        if abs(sl - o) > slope_tol:
            flagged.append(b)
        h1, h2 = hs[-2], hs[-1]
        e1, e2 = E[-2, b] / h1 ** o, E[-1, b] / h2 ** o
        eta = (h1 ** 2 * e2 - h2 ** 2 * e1) / (h1 ** 2 - h2 ** 2)
        slopes.append(sl)
        orders.append(o)
        prefs.append(float(eta))
    idx = np.lexsort((np.array(prefs), np.array(orders)))
    return BranchFit(hs, E[:, idx], [slopes[i] for i in idx], [orders[i] for i in idx],
                     [prefs[i] for i in idx], sorted(int(np.where(idx == b)[0][0]) for b in flagged),
                     sorted(int(np.where(idx == b)[0][0]) for b in unmatched), refinements)


def compare_fit(fit: BranchFit, nh: NestedHats, rtol: float = 1e-4) -> tuple[bool, float]:
    """Check the fitted prefactors against nested_hats; returns (ok, worst relative gap)."""
    want = {2 * j: sorted(p.tolist()) for j, p in enumerate(nh.prefactors) if len(p)}
    got = fit.by_order()
    if set(want) != set(got) or any(len(want[o]) != len(got[o]) for o in want):
        return False, math.inf
    worst = max(abs(a - b) / abs(b) for o in want for a, b in zip(got[o], want[o]))
    return worst <= rtol, worst
