"""Vector fields with symbolic coefficients and their Lie brackets."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import EvaluationError
from . import expr as E


@dataclass(frozen=True)
class VectorField:
    """``sum_k components[k] * d/dx_k``."""

    components: tuple
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(E.simplify(E._lift(c)) for c in self.components))
        if not self.components:
            raise ValueError("a vector field needs at least one component")

    @property
    def dim(self) -> int:
        return len(self.components)

    def evaluate(self, points) -> np.ndarray:
        """Coefficients at a point ``(d,)`` -> ``(d,)``, or at ``(P, d)`` -> ``(P, d)``."""
        points = np.asarray(points, dtype=float)
        cols = [E.evaluate(c, points) for c in self.components]
        return np.stack(cols, axis=-1) if points.ndim > 1 else np.array(cols)

    @property
    def is_symbolically_zero(self) -> bool:
        return all(c.is_zero for c in self.components)

    def relabel(self, label: str) -> "VectorField":
        return VectorField(self.components, label)

    def scaled(self, c, label: str = "") -> "VectorField":
        return VectorField(tuple(E.mul(c, comp) for comp in self.components), label)

    def __neg__(self):
        return self.scaled(-1.0, f"-{self.label}" if self.label else "")

    def __str__(self):
        terms = [f"({c})*d{k}" for k, c in enumerate(self.components) if not c.is_zero]
        body = " + ".join(terms) if terms else "0"
        return f"{self.label} = {body}" if self.label else body


def zero_field(d: int, label: str = "0") -> VectorField:
    return VectorField((E.ZERO,) * d, label)


def coordinate_field(d: int, k: int, label: str = "") -> VectorField:
    return VectorField(tuple(E.ONE if i == k else E.ZERO for i in range(d)), label or f"d{k}")


def linear_combination(fields, coeffs, label: str = "") -> VectorField:
    """Constant-coefficient combination ``sum_j coeffs[j] * fields[j]``."""
    d = fields[0].dim
    comps = []
    for k in range(d):
        comps.append(E.add(*[E.mul(float(c), f.components[k]) for c, f in zip(coeffs, fields) if c != 0.0]))
    return VectorField(tuple(comps), label)


def lie_bracket(X: VectorField, Y: VectorField, label: str = "") -> VectorField:
    """``[X, Y]^k = sum_l (X^l d_l Y^k - Y^l d_l X^k)``, simplified."""
    if X.dim != Y.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {Y.dim}")
    d = X.dim
    comps = []
    for k in range(d):
        terms = []
        for l in range(d):
            if not X.components[l].is_zero:
                dy = E.diff(Y.components[k], l)
                if not dy.is_zero:
                    terms.append(E.mul(X.components[l], dy))
            if not Y.components[l].is_zero:
                dx = E.diff(X.components[k], l)
                if not dx.is_zero:
                    terms.append(E.neg(E.mul(Y.components[l], dx)))
        comps.append(E.add(*terms))
    return VectorField(tuple(comps), label)


# result tags of zero_test
SYMBOLIC_ZERO = "symbolic"
NUMERIC_ZERO = "numeric"
NONZERO = "nonzero"


def zero_test(X: VectorField, samples, tol: float = 1e-10) -> str:
    """Classify ``X`` as symbolically zero, numerically zero, or nonzero.

    Samples where a coefficient is singular are skipped with a warning; if every
    sample is skipped an :class:`EvaluationError` is raised.
    """
    if X.is_symbolically_zero:
        return SYMBOLIC_ZERO
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("zero test needs at least one sample point")
    try:
        vals = X.evaluate(samples)
    except EvaluationError:
        rows, skipped = [], 0
        for p in samples:
            try:
                rows.append(X.evaluate(p))
            except EvaluationError:
                skipped += 1
        if not rows:
            raise EvaluationError(f"every sample point is singular for {X.label or X}")
        warnings.warn(f"zero test for {X.label or 'field'}: skipped {skipped} singular sample(s)", RuntimeWarning)
        vals = np.array(rows)
    return NUMERIC_ZERO if np.max(np.abs(vals)) < tol else NONZERO


def is_identically_zero(X: VectorField, samples, tol: float = 1e-10) -> bool:
    return zero_test(X, samples, tol) != NONZERO
