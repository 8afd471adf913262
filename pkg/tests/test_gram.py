import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from srlab.errors import HormanderError, SRError
from srlab.gram import (assemble, degree_bound, det_coefficients_exact, det_expansion, horizontal_norm,
                        metric_eval, metric_eval_oracle)


def heis_metric(x, h, v):
    a, b, c = v
    return a * a + b * b + (c - x * b) ** 2 / (2 * h * h)


def mart_metric(x, h, v):
    a, b, c = v
    return a * a + b * b + (2 * c - b * x * x) ** 2 / (8 * h * h * (h * h + x * x))


def test_heisenberg_matrices(table):
    x = 0.7
    g = assemble(table("heisenberg"), [x, 0.2, -1.0])
    assert np.allclose(g.A[0], [[1, 0, 0], [0, 1, x]]) and np.allclose(g.A[1], [[0, 0, 1], [0, 0, -1]])
    for h in (1.0, 0.5, 0.1):
        assert np.allclose(g.Ginv(h), [[1, 0, 0], [0, 1, x], [0, x, 2 * h * h + x * x]], atol=1e-15)


def test_riemannian_identity(table):
    g = assemble(table("flat_torus"), [0.3, 0.4])
    for h in (1.0, 0.2, 1e-3):
        assert np.array_equal(g.Ginv(h), np.eye(2))


def test_martinet_ginv(table):
    x = -0.6
    g = assemble(table("martinet"), [x, 0.0, 0.0])
    for h in (1.0, 0.3):
        want = [[1, 0, 0], [0, 1, x * x / 2], [0, x * x / 2, 2 * h ** 4 + 2 * h * h * x * x + x ** 4 / 4]]
        assert np.allclose(g.Ginv(h), want, atol=1e-15)


def test_ginv_against_sympy_assembly(table):
    # independent: assemble Sigma h^{2i} A_i^T A_i from hand-written bracket fields
    x, y, h = sympy.symbols("x y h")
    rows = [(0, [1, 0, 0, 0]), (0, [0, 1, 0, 0]), (0, [0, 0, x, y]),
            (1, [0, 0, 1, 0]), (1, [0, 0, 0, 1]), (1, [0, 0, -1, 0]), (1, [0, 0, 0, -1])]
    G = sympy.zeros(4, 4)
    for i, r in rows:
        v = sympy.Matrix(r)
        G += h ** (2 * i) * v * v.T
    assert sympy.expand(G.det()) == sympy.expand(2 * h ** 2 * (x ** 2 + y ** 2) + 4 * h ** 4)
    g = assemble(table("r4"), [1.5, -0.5, 0, 0])
    num = np.array(G.subs({x: 1.5, y: -0.5, h: 0.3}).tolist(), dtype=float)
    assert np.allclose(g.Ginv(0.3), num, atol=1e-15)


def test_assemble_rejects_hormander_failure():
    from srlab.brackets import enumerate_brackets
    from srlab.symcalc import parse_structure
    t = enumerate_brackets(parse_structure("dim 2; rmax 1; field 1,0; field 0,x0^3"))
    with pytest.raises(HormanderError):
        assemble(t, [0.0, 1.0])


@pytest.mark.parametrize("x,h", [(0.0, 0.5), (0.7, 1.0), (-1.2, 0.1), (2.0, 1e-3)])
def test_heisenberg_metric(table, x, h):
    g = assemble(table("heisenberg"), [x, 0, 0])
    rng = np.random.default_rng(3)
    for v in rng.normal(size=(5, 3)):
        want = heis_metric(x, h, v)
        assert metric_eval_oracle(g, h, v) == pytest.approx(want, rel=1e-11)
        assert metric_eval(g, h, v) == pytest.approx(want, rel=1e-8)
    assert metric_eval(g, h, np.zeros(3)) == 0.0


def test_oracle_example_values(table):
    g = assemble(table("heisenberg"), [0, 0, 0])
    assert metric_eval_oracle(g, 0.5, [0, 0, 1]) == pytest.approx(2.0, rel=1e-14)
    g = assemble(table("martinet"), [1, 0, 0])
    assert metric_eval_oracle(g, 1.0, [0, 0, 1]) == pytest.approx(0.25, rel=1e-14)
    assert metric_eval(g, 1.0, [0, 0, 1]) == pytest.approx(0.25, rel=1e-14)
    # horizontal vectors stay finite as h grows
    assert np.isfinite(metric_eval_oracle(g, 1e6, [1.0, 1.0, 0.5]))


@pytest.mark.parametrize("x", [1.0, -0.5, 0.2])
def test_martinet_metric(table, x):
    g = assemble(table("martinet"), [x, 0, 0])
    for h in (1.0, 0.3, 0.05):
        v = np.array([0.3, -1.0, 2.0])
        assert metric_eval(g, h, v) == pytest.approx(mart_metric(x, h, v), rel=1e-9)


def test_non_positive_h_rejected(table):
    g = assemble(table("heisenberg"), [0, 0, 0])
    for h in (0.0, -1.0):
        with pytest.raises(SRError):
            metric_eval(g, h, [1, 0, 0])
        with pytest.raises(SRError):
            metric_eval_oracle(g, h, [1, 0, 0])


def test_ginv_symmetric_and_positive(table):
    for name, m in [("heisenberg", [1, 2, 3]), ("martinet", [0.0, 0, 0]), ("r4", [0.0, 0, 1, 1]),
                    ("torus_fixed", [np.pi / 2, 0, 0])]:
        g = assemble(table(name), m)
        for h in (1.0, 0.1, 0.01):
            G = g.Ginv(h)
            assert np.abs(G - G.T).max() <= 1e-14
            assert np.linalg.eigvalsh(G).min() > 0


names = st.sampled_from(["heisenberg", "martinet", "r4", "torus_fixed", "torus_equiregular"])
unit = st.floats(-1, 1)


def _point(s, raw):
    lo, hi = np.array(s.domain.lower), np.array(s.domain.upper)
    return lo + (np.array(raw[: s.d]) + 1) / 2 * (hi - lo)


@settings(max_examples=80, deadline=None)
@given(names, st.lists(unit, min_size=4, max_size=4), st.floats(0.05, 1.0), st.floats(0.05, 1.0),
       st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_metric_monotone_in_h(name, raw, h1, h2, v):
    from conftest import load_table
    s, t = load_table(name)
    g = assemble(t, _point(s, raw))
    lo, hi = sorted((h1, h2))
    v = np.array(v[: s.d])
    assert metric_eval_oracle(g, hi, v) <= metric_eval_oracle(g, lo, v) * (1 + 1e-12) + 1e-12


@pytest.mark.parametrize("name,m", [("heisenberg", [0.4, 0, 0]), ("martinet", [0.8, 0, 0]),
                                    ("r4", [1.0, 2.0, 0, 0]), ("torus_equiregular", [1.0, 0, 0])])
def test_horizontal_limit(table, name, m):
    g = assemble(table(name), m)
    rng = np.random.default_rng(11)
    for _ in range(5):
        u = rng.normal(size=g.A[0].shape[0])
        v = g.A[0].T @ u
        g0 = horizontal_norm(g, v)
        vals = [metric_eval_oracle(g, h, v) for h in (1.0, 0.1, 1e-2, 1e-4)]
        assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - g0) / g0 < 1e-6
    assert horizontal_norm(g, np.eye(g.d)[-1] + 0) == math.inf or g.d == 2


@pytest.mark.parametrize("name,m,want", [
    ("heisenberg", [0.3, 1, 1], [0, 2]),
    ("martinet", [0.5, 0, 0], [0, 0.5, 2, 0]),
    ("martinet", [-1.0, 0, 0], [0, 2, 2, 0]),
    ("martinet", [0.0, 0, 0], [0, 0, 2]),
    ("flat_torus", [1.0, 1.0], [1]),
    ("r4", [1.0, 1.0, 0, 0], [0, 4, 4]),
])
def test_det_expansion(table, name, m, want):
    g = assemble(table(name), m)
    de = det_expansion(g)
    assert np.allclose(de.coefficients, want, atol=1e-10, rtol=1e-10)
    assert min(de.coefficients) >= -1e-10
    assert np.allclose(det_coefficients_exact(g), want, atol=1e-12)


def test_det_expansion_leading_order_is_twice_sigma(table):
    from srlab.brackets import growth_at
    for name, m in [("martinet", [0.0, 0, 0]), ("martinet", [0.5, 0, 0]), ("r4", [0.0, 0.0, 0, 0]),
                    ("torus_fixed", [np.pi / 2, 0, 0])]:
        t = table(name)
        de = det_expansion(assemble(t, m))
        assert de.leading_order == 2 * growth_at(t, m).sigma


def test_det_expansion_custom_grid_and_errors(table):
    g = assemble(table("martinet"), [0.5, 0, 0])
    de = det_expansion(g, [1.0, 0.8, 0.6, 0.4, 0.2])
    assert np.allclose(de.coefficients, [0, 0.5, 2, 0], atol=1e-9)
    assert de(0.3) == pytest.approx(np.linalg.det(g.Ginv(0.3)), rel=1e-9)
    with pytest.raises(SRError):
        det_expansion(g, [1.0, 0.5])
    with pytest.raises(SRError):
        det_expansion(g, [2.0, 1.0, 0.5, 0.25])


def test_ill_conditioned_fit_warns_and_falls_back(table):
    g = assemble(table("martinet"), [0.5, 0, 0])
    grid = [1.0, 0.999, 0.998, 0.997]
    with pytest.warns(RuntimeWarning, match="condition"):
        de = det_expansion(g, grid)
    assert np.allclose(de.coefficients, [0, 0.5, 2, 0], atol=1e-8)


def test_degree_bound(table):
    assert degree_bound(assemble(table("martinet"), [0.5, 0, 0])) == 3
    assert degree_bound(assemble(table("heisenberg"), [0.5, 0, 0])) == 1


def test_det_is_accurate_at_small_h(table):
    g = assemble(table("heisenberg"), [1.8, -0.7, 0.3])
    for h in (1.0, 1e-2, 1e-4):
        assert g.det(h) == pytest.approx(2 * h * h, rel=1e-12)
    assert g.det(0.3) == pytest.approx(np.linalg.det(g.Ginv(0.3)), rel=1e-12)
