"""Grid discretization of the sub-Laplacian and its h-approximations on tori.

Operators are built from their quadratic forms: with ``D_ij`` the difference
matrix of the bracket field ``X^{ij}`` and ``W`` the diagonal volume weights,

    A(h) = sum_i h^(2i) sum_j D_ij^T W D_ij,

and eigenvalues are those of the generalized problem ``A v = lambda W v``.
Symmetry, semi-definiteness and constants in the kernel hold by construction.

The default ``"compact"`` scheme averages forward and backward differences,
``(D+^T W D+ + D-^T W D-) / 2``. Pure centered differences are available but
decouple odd and even grid points, which leaves spurious zero modes.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .branches import nested_hats
from .brackets import BracketTable, RANK_TOL, growth_many
from .errors import ConvergenceError, EquiregularityError, PeriodicityError, SRError
from .symcalc.fields import VectorField
from .symcalc.structure import SRStructure

FIXED = "fixed"
RIEMANNIAN = "riemannian"
SCHEMES = ("compact", "centered", "forward", "backward")
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class Grid:
    n: int
    periods: tuple
    lower: tuple = None

    def __post_init__(self):
        if self.n < 4:
            raise SRError("grid needs at least 4 points per axis")
        if self.lower is None:
            object.__setattr__(self, "lower", (0.0,) * len(self.periods))

    @classmethod
    def for_structure(cls, s: SRStructure, n: int) -> "Grid":
        if not s.domain.is_torus:
            raise SRError("spectral computations need a periodic (torus) domain")
        return cls(n, s.domain.periods, s.domain.lower)

    @property
    def d(self) -> int:
        return len(self.periods)

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def spacing(self) -> tuple:
        return tuple(p / self.n for p in self.periods)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def points(self) -> np.ndarray:
        """Node coordinates, row-major (last axis fastest)."""
        axes = [lo + h * np.arange(self.n) for lo, h in zip(self.lower, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def shift(self, axis: int, step: int) -> sp.csr_matrix:
        """(S u)(p) = u(p + step e_axis) with periodic wrap."""
        one = sp.diags([np.ones(self.n)], [0], shape=(self.n, self.n), format="csr")
        roll = sp.csr_matrix((np.ones(self.n), ((np.arange(self.n)), (np.arange(self.n) + step) % self.n)),
                             shape=(self.n, self.n))
        out = sp.csr_matrix(np.ones((1, 1)))
        for a in range(self.d):
            out = sp.kron(out, roll if a == axis else one, format="csr")
        return out


def _difference(grid: Grid, axis: int, scheme: str) -> sp.csr_matrix:
    dx = grid.spacing[axis]
    I = sp.identity(grid.size, format="csr")
    if scheme == "centered":
        return (grid.shift(axis, 1) - grid.shift(axis, -1)) / (2 * dx)
    if scheme == "forward":
        return (grid.shift(axis, 1) - I) / dx
    if scheme == "backward":
        return (I - grid.shift(axis, -1)) / dx
    raise ValueError(f"unknown difference scheme {scheme!r}")


def check_periodic(X: VectorField, grid: Grid, samples: int = 64, seed: int = 0, tol: float = 1e-9):
    rng = np.random.default_rng(seed)
    pts = np.array(grid.lower) + rng.uniform(size=(samples, grid.d)) * np.array(grid.periods)
    base = X.evaluate(pts)
    for axis in range(grid.d):
        moved = pts.copy()
        moved[:, axis] += grid.periods[axis]
        gap = np.abs(X.evaluate(moved) - base)
        if np.any(gap > tol * (1 + np.abs(base))):
            raise PeriodicityError(f"coefficients of {X.label or 'field'} are not periodic along axis {axis} "
                                   f"(period {grid.periods[axis]!r})", axis)


def discretize_field(X: VectorField, grid: Grid, scheme: str = "centered", *, check: bool = True) -> sp.csr_matrix:
    """First-order difference operator ``sum_l diag(X^l(p)) D_l``."""
    if X.dim != grid.d:
        raise SRError(f"field has {X.dim} components, grid is {grid.d}-dimensional")
    if check:
        check_periodic(X, grid)
    coef = X.evaluate(grid.points())
    out = sp.csr_matrix((grid.size, grid.size))
    for l in range(grid.d):
        if np.any(coef[:, l] != 0.0):
            out = out + sp.diags(coef[:, l]) @ _difference(grid, l, scheme)
    return out.tocsr()


@dataclass
class DiscreteOperator:
    matrix: sp.csr_matrix
    weights: np.ndarray  # diagonal of W
    h: float
    mode: str
    grid: Grid
    scheme: str

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def asymmetry(self) -> float:
        A = self.matrix
        return float(abs(A - A.T).max() / max(abs(A).max(), 1e-300))


class _Forms:
    """Difference matrices of every bracket field, reused across h values."""

    def __init__(self, t: BracketTable, grid: Grid, scheme: str):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        self.grid, self.scheme = grid, scheme
        parts = ("forward", "backward") if scheme == "compact" else (scheme,)
        self.layers = []
        for i, layer in enumerate(t.layers[: t.r + 1]):
            mats = []
            for e in layer:
                check_periodic(e.field, grid)
                mats.append([discretize_field(e.field, grid, p, check=False) for p in parts])
            self.layers.append(mats)
        self._cache = {}

    def layer_form(self, i: int, w: np.ndarray, key=None) -> sp.csr_matrix:
        if key is not None and (i, key) in self._cache:
            return self._cache[(i, key)]
        W = sp.diags(w)
        out = sp.csr_matrix((self.grid.size, self.grid.size))
        for mats in self.layers[i]:
            for D in mats:
                out = out + (D.T @ W @ D) / len(mats)
        out = ((out + out.T) / 2).tocsr()
        if key is not None:
            self._cache[(i, key)] = out
        return out

    def operator(self, h: float, w: np.ndarray, key=None) -> sp.csr_matrix:
        depth = 0 if h == 0 else len(self.layers) - 1
        A = sp.csr_matrix((self.grid.size, self.grid.size))
        for i in range(depth + 1):
            A = A + (h ** (2 * i) if i else 1.0) * self.layer_form(i, w, key)
        return A.tocsr()


@dataclass
class NodeGeometry:
    """Per-node data needed by the Riemannian-volume mode."""

    popp: np.ndarray  # f^{-1/2}, the coordinate density of the limit volume
    f: np.ndarray
    sigma: int
    A: list  # per layer, (P, N_i, d)

    def riemannian_density(self, h: float) -> np.ndarray:
        """h^{Q-d} sqrt(det G_h) at every node; the h -> 0 limit is the Popp density."""
        if h == 0:
            return self.popp.copy()
        S = np.concatenate([h ** i * a for i, a in enumerate(self.A)], axis=1)
        s = np.linalg.svd(S, compute_uv=False)
        # h^sigma / prod(s), grouped to avoid underflow
        return np.exp(self.sigma * math.log(h) - np.sum(np.log(s), axis=1))

    def psi(self, h: float) -> np.ndarray:
        return self.riemannian_density(h) / self.popp


def node_geometry(t: BracketTable, grid: Grid) -> NodeGeometry:
    pts = grid.points()
    growth = growth_many(t, pts, RANK_TOL, Q_ref=0, skip_failures=True)
    kinds = {None if g is None else g.n for g in growth}
    if len(kinds) != 1 or None in kinds:
        raise EquiregularityError(f"growth vector varies over the grid ({sorted(map(str, kinds))}); "
                                  "the Riemannian-volume mode needs an equiregular structure")
    A = t.matrices(pts)
    f = np.array([nested_hats([a[p] for a in A]).f for p in range(pts.shape[0])])
    return NodeGeometry(f ** -0.5, f, growth[0].sigma, A)


def _weights(s: SRStructure, grid: Grid) -> np.ndarray:
    w = s.omega(grid.points())
    if np.any(w <= 0):
        raise SRError("volume density must be positive at every grid node")
    return np.asarray(w, dtype=float) * grid.cell_volume


def assemble(s: SRStructure, t: BracketTable, grid: Grid, h: float, mode: str = FIXED, *,
             scheme: str = "compact", forms: _Forms = None, geometry: NodeGeometry = None) -> DiscreteOperator:
    """Discrete Delta_h (fixed volume) or the Riemannian-volume operator at h; h = 0 gives Delta_0."""
    if h < 0:
        raise SRError("h must be >= 0")
    forms = forms or _Forms(t, grid, scheme)
    if mode == FIXED:
        w = _weights(s, grid)
        key = "fixed"
    elif mode == RIEMANNIAN:
        geometry = geometry or node_geometry(t, grid)
        w = geometry.riemannian_density(h) * grid.cell_volume
        key = None
    else:
        raise ValueError(f"unknown volume mode {mode!r}")
    return DiscreteOperator(forms.operator(h, w, key), w, float(h), mode, grid, forms.scheme)


def lowest_eigs(op: DiscreteOperator, k: int, *, dense_limit: int = DENSE_LIMIT, tol: float = 1e-12,
                residual_tol: float = 1e-8, return_vectors: bool = False):
    """k smallest eigenvalues of ``A v = lambda W v`` in ascending order."""
    N = op.size
    if not 1 <= k <= N:
        raise SRError(f"k must be in 1..{N}")
    A = op.matrix
    w = op.weights
    if N <= dense_limit:
        lam, V = sla.eigh(A.toarray(), np.diag(w), subset_by_index=[0, k - 1])
    else:
        scale = float(np.max(A.diagonal() / w))
        sigma = -1e-3 * scale
        try:
            lam, V = spla.eigsh(A.tocsc(), k=k, M=sp.diags(w).tocsc(), sigma=sigma, which="LM",
                                tol=tol, ncv=min(N, max(2 * k + 1, 40)), maxiter=20 * N)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"shift-invert Lanczos did not converge ({len(exc.eigenvalues)} of {k} "
                                   "eigenpairs found)") from None
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
    R = A @ V - (V * w[:, None]) * lam[None, :]
    scale = max(abs(A).max(), 1.0) * np.linalg.norm(V * np.sqrt(w)[:, None], axis=0)
    res = float(np.max(np.linalg.norm(R, axis=0) / scale)) if k else 0.0
    if res > residual_tol:
        raise ConvergenceError(f"eigenpair residual {res:.2e} exceeds {residual_tol:.0e}", res)
    return (lam, V) if return_vectors else lam


def flat_torus_symbol(grid: Grid, scheme: str = "compact", count=None) -> np.ndarray:
    """Exact eigenvalues of the discrete Laplacian of {d/dx_l} for the given scheme, ascending."""
    freqs = np.arange(grid.n)
    per_axis = []
    for dx, p in zip(grid.spacing, grid.periods):
        theta = 2 * np.pi * freqs / grid.n
        if scheme == "centered":
            per_axis.append(np.sin(theta) ** 2 / dx ** 2)
        else:  # compact, forward and backward share the symbol
            per_axis.append(4 * np.sin(theta / 2) ** 2 / dx ** 2)
    total = per_axis[0]
    for ax in per_axis[1:]:
        total = np.add.outer(total, ax).ravel()
    total = np.sort(total)
    return total if count is None else total[:count]


@dataclass
class SpectrumTable:
    rows: list  # (h, k, lambda, mode)
    metadata: dict
    diagnostics: dict = field(default_factory=dict)

    def values(self, mode: str = None) -> dict:
        """{h: array of eigenvalues} for one mode (default: the study's main mode)."""
        mode = mode or self.metadata["mode"]
        out = {}
        for h, k, lam, md in self.rows:
            if md == mode:
                out.setdefault(h, []).append((k, lam))
        return {h: np.array([v for _, v in sorted(r)]) for h, r in out.items()}

    def to_dict(self) -> dict:
        return {"metadata": self.metadata,
                "rows": [{"h": h, "k": k, "lambda": lam, "mode": md} for h, k, lam, md in self.rows],
                "diagnostics": self.diagnostics}


def _decrements(hs, vals):
    out = {}
    for kk in range(len(vals[hs[0]])):
        seq = [abs(vals[hs[i + 1]][kk] - vals[hs[i]][kk]) for i in range(len(hs) - 1)]
        ratios = [seq[i + 1] / seq[i] if seq[i] > 0 else None for i in range(len(seq) - 1)]
        out[kk] = {"decrements": seq, "ratios": ratios}
    return out


def convergence_study(s: SRStructure, t: BracketTable, grid: Grid, h_list, k: int, mode: str = FIXED, *,
                      scheme: str = "compact", workers: int = 1, atol: float = 1e-9,
                      dense_limit: int = DENSE_LIMIT) -> SpectrumTable:
    """Lowest ``k`` eigenvalues (indices 0..k-1) for each h plus convergence diagnostics."""
    hs = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise SRError("h_list must be strictly decreasing")
    if mode == FIXED and hs[-1] != 0.0:
        raise SRError("the fixed-volume study must end at h = 0")
    forms = _Forms(t, grid, scheme)
    rows = []
    diag = {}
    if mode == FIXED:
        w = _weights(s, grid)

        def solve(h):
            op = DiscreteOperator(forms.operator(h, w, "fixed"), w, h, FIXED, grid, scheme)
            return lowest_eigs(op, k, dense_limit=dense_limit)

        # warm the per-layer cache before fanning out
        forms.operator(hs[0], w, "fixed")
        vals = _fan_out(solve, hs, workers)
        for h in hs:
            rows += [(h, kk, float(v), FIXED) for kk, v in enumerate(vals[h])]
    elif mode == RIEMANNIAN:
        geo = node_geometry(t, grid)
        wp = geo.popp * grid.cell_volume
        forms.operator(hs[0], wp, "popp")

        def solve(h):
            base = lowest_eigs(DiscreteOperator(forms.operator(h, wp, "popp"), wp, h, FIXED, grid, scheme),
                               k, dense_limit=dense_limit)
            wr = geo.riemannian_density(h) * grid.cell_volume
            tilde = lowest_eigs(DiscreteOperator(forms.operator(h, wr), wr, h, RIEMANNIAN, grid, scheme),
                                k, dense_limit=dense_limit)
            return base, tilde

        both = _fan_out(solve, hs, workers)
        vals = {h: both[h][1] for h in hs}
        base = {h: both[h][0] for h in hs}
        for h in hs:
            rows += [(h, kk, float(v), FIXED) for kk, v in enumerate(base[h])]
            rows += [(h, kk, float(v), RIEMANNIAN) for kk, v in enumerate(vals[h])]
        a = {}
        sandwich = []
        ratios = {}
        for h in hs:
            psi = geo.psi(h)
            a[h] = float((1 + np.max(np.abs(psi - 1))) * (1 + np.max(np.abs(1 / psi - 1))))
            ratios[h] = [float(vt / vb) if vb > atol else None for vt, vb in zip(vals[h], base[h])]
            for kk, (vt, vb) in enumerate(zip(vals[h], base[h])):
                if not (vb / a[h] - atol <= vt <= a[h] * vb + atol):
                    sandwich.append({"h": h, "k": kk, "tilde": float(vt), "fixed": float(vb), "a": a[h]})
        diag.update({"a": {repr(h): v for h, v in a.items()},
                     "ratio_tilde_over_fixed": {repr(h): r for h, r in ratios.items()},
                     "sandwich_violations": sandwich})
        # monotonicity/barrier apply to the nested forms with identical weights
        vals_for_checks = base
    else:
        raise ValueError(f"unknown volume mode {mode!r}")
    checks = vals if mode == FIXED else vals_for_checks
    mono = []
    for a_h, b_h in zip(hs, hs[1:]):
        for kk, (x, y) in enumerate(zip(checks[a_h], checks[b_h])):
            if y > x + atol:
                mono.append({"k": kk, "h_from": a_h, "h_to": b_h, "increase": float(y - x)})
    barrier = []
    if 0.0 in checks:
        for h in hs:
            for kk, (x, x0) in enumerate(zip(checks[h], checks[0.0])):
                if x < x0 - atol:
                    barrier.append({"k": kk, "h": h, "gap": float(x0 - x)})
    diag.update({"monotonicity_violations": mono, "barrier_violations": barrier,
                 "decrements": _decrements(hs, checks)})
    meta = {"grid_n": grid.n, "mode": mode, "scheme": scheme, "k": k, "h_list": hs,
            "structure_sha256": hashlib.sha256(s.source.encode()).hexdigest()}
    return SpectrumTable(rows, meta, diag)


def _fan_out(fn, hs, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(fn, hs))
    else:
        res = [fn(h) for h in hs]
    return dict(zip(hs, res))
