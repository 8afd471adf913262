import math

import numpy as np
import pytest

from srlab.branches import limit_density
from srlab.errors import EquiregularityError, PoppError
from srlab.popp import (B_matrices, M_matrices, adapted_frame, compare_volumes, det_ratio, popp,
                        structure_constants)


def test_heisenberg_frame(table):
    fr = adapted_frame(table("heisenberg"), [0.4, 0, 0])
    assert fr.sources[2] == "X^{11}" and "X^{01}" in fr.sources[0] and "X^{02}" in fr.sources[1]
    # generators are already g0-orthonormal, so Gram-Schmidt leaves them alone
    assert np.allclose(fr.layer0_coefficients, np.eye(2))


def test_martinet_frame(table):
    fr = adapted_frame(table("martinet"), [0.8, 0, 0])
    assert fr.n == (2, 3) and fr.sources[2] == "X^{11}"


def test_r4_frame(table):
    fr = adapted_frame(table("r4"), [2.0, 0.5, 0, 0])
    assert fr.n == (3, 4)
    assert np.allclose(fr.layer0_coefficients, np.eye(3))
    assert fr.sources[3] in ("X^{11}", "X^{12}")


@pytest.mark.parametrize("name,m", [("heisenberg", [1, 2, 0]), ("martinet", [0.5, 0, 0]),
                                    ("r4", [1.0, -1.0, 0, 0]), ("torus_equiregular", [0.3, 0, 0])])
@pytest.mark.parametrize("method", ["greedy", "spectral"])
def test_frame_invariants(table, name, m, method):
    t = table(name)
    fr = adapted_frame(t, m, method=method)
    A0 = t.matrices(np.array(m, dtype=float))[0]
    F0 = fr.F[: fr.n0]
    G0 = F0 @ np.linalg.pinv(A0.T @ A0) @ F0.T
    assert np.allclose(G0, np.eye(fr.n0), atol=1e-12)
    assert abs(np.linalg.det(fr.F)) > 1e-8
    rng = np.random.default_rng(0)
    for p in np.array(m) + 1e-3 * rng.normal(size=(5, len(m))):
        Z = np.array([z.evaluate(p) for z in fr.fields])
        A = t.matrices(p)
        for i, ni in enumerate(fr.n):
            span = np.vstack(A[: i + 1])
            assert np.linalg.matrix_rank(Z[:ni], 1e-9) == ni
            assert np.linalg.matrix_rank(np.vstack([span, Z[:ni]]), 1e-9) == ni


def test_heisenberg_structure_constants(table):
    fr = adapted_frame(table("heisenberg"), [0.0, 0, 0])
    b = structure_constants(fr, 1)
    assert b.keys() == {(1, 2), (2, 1)}
    assert b[(1, 2)][3] == pytest.approx(1.0) and b[(2, 1)][3] == pytest.approx(-1.0)


def test_r4_structure_constants(table):
    x, y = 2.0, 0.5
    fr = adapted_frame(table("r4"), [x, y, 0, 0], selection={1: [2]})  # fourth field = d/dt
    b = structure_constants(fr, 1)
    assert b[(2, 3)][4] == pytest.approx(1.0)
    assert b[(1, 3)][4] == pytest.approx(-y / x)
    B = B_matrices(fr)
    assert B[1] == pytest.approx(np.array([[2 * (x * x + y * y) / (x * x)]]))
    assert popp(t := table("r4"), [x, y, 0, 0], selection={1: [2]}).popp_density == pytest.approx(
        1 / math.sqrt(2 * (x * x + y * y)), rel=1e-12)
    assert t is not None


def test_abelian_structure(table):
    pd = popp(table("flat_torus"), [1.0, 2.0])
    assert len(pd.B) == 1 and np.array_equal(pd.B[0], np.eye(2))
    assert pd.structure_constants == {} and pd.popp_density == pytest.approx(1.0)


def test_heisenberg_popp(table):
    pd = popp(table("heisenberg"), [1.5, -1, 0])
    assert pd.B[1] == pytest.approx(np.array([[2.0]]))
    assert pd.popp_density == pytest.approx(2 ** -0.5, rel=1e-12)
    assert pd.M[1] == pytest.approx(np.array([[2.0]]))
    assert det_ratio(table("heisenberg"), pd.frame, pd.M) == pytest.approx([1, 1, 1], rel=1e-12)


@pytest.mark.parametrize("name,m", [("heisenberg", [0.3, 0, 0]), ("martinet", [0.9, 0, 0]),
                                    ("martinet", [-0.2, 0.5, 0]), ("r4", [1.0, 1.0, 0, 0]),
                                    ("r4", [0.0, 1.5, 0, 0]), ("torus_equiregular", [2.0, 0, 0]),
                                    ("torus_fixed", [0.5, 0, 0])])
def test_M_equals_B(table, name, m):
    t = table(name)
    pd = popp(t, m)
    assert np.allclose(pd.M[0], np.eye(pd.frame.n0), atol=1e-12)
    for Mi, Bi in zip(pd.M, pd.B):
        assert np.allclose(Mi, Bi, atol=1e-8, rtol=1e-8)
    ratios = pd.det_ratios
    assert abs(ratios[-1] - 1) < abs(ratios[0] - 1) + 1e-12 and abs(ratios[-1] - 1) < 1e-4


@pytest.mark.parametrize("name,m,want", [
    ("heisenberg", [0.0, 0.0, 0.0], 2 ** -0.5),
    ("martinet", [1.0, 0.0, 0.0], 2 ** -0.5),
    ("r4", [1.0, 1.0, 0.0, 0.0], 0.5),
])
def test_compare_volumes(table, name, m, want):
    c = compare_volumes(table(name), m)
    assert c.ok and c.relative_gap <= 1e-6
    assert c.popp_density == pytest.approx(want, rel=1e-9) and c.limit_density == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("name,m,selections", [
    ("r4", [1.2, 0.7, 0, 0], [{1: [1]}, {1: [2]}, {1: [3]}, {1: [4]}]),
    ("martinet", [0.6, 0, 0], [{1: [1]}, {1: [2]}]),
    ("torus_equiregular", [0.4, 0, 0], [{1: [1]}, {1: [2]}]),
])
def test_frame_independence(table, name, m, selections):
    t = table(name)
    vals = [popp(t, m, method=meth, selection=sel).popp_density
            for meth in ("greedy", "spectral") for sel in selections]
    assert np.allclose(vals, vals[0], rtol=1e-8, atol=0)


def test_singular_points_rejected(table):
    with pytest.raises(EquiregularityError):
        adapted_frame(table("martinet"), [0.0, 0, 0])
    with pytest.raises(EquiregularityError):
        adapted_frame(table("torus_fixed"), [np.pi / 2, 0, 0])


def test_bad_selection(table):
    with pytest.raises(PoppError):
        adapted_frame(table("heisenberg"), [0.0, 0, 0], selection={1: [1, 2]})


def test_popp_matches_limit_density_on_samples(table, structure):
    for name in ("heisenberg", "martinet", "r4", "torus_equiregular", "torus_fixed"):
        t, s = table(name), structure(name)
        for p in s.domain.sample(16, seed=5):
            c = compare_volumes(t, p)
            assert c.ok, (name, p, c.relative_gap)
            assert c.limit_density == pytest.approx(limit_density(t, p).density_SR)


def test_M_matrices_directly(table):
    t = table("martinet")
    fr = adapted_frame(t, [0.5, 0, 0])
    Ms = M_matrices(t, fr)
    assert [M.shape for M in Ms] == [(2, 2), (1, 1)]
