import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srlab.branches import branch_fit, compare_fit, limit_density, nested_hats
from srlab.brackets import enumerate_brackets, growth_at
from srlab.errors import HormanderError
from srlab.gram import GramData, assemble, det_expansion


def proj(B):
    return B @ B.T


@pytest.mark.parametrize("x", [0.0, 0.5, -2.0])
def test_heisenberg_nested(table, x):
    nh = nested_hats(assemble(table("heisenberg"), [x, 0, 0]).A)
    V0 = np.array([[1, 0, 0], [0, 1, x]], dtype=float).T
    V0 /= np.linalg.norm(V0, axis=0)
    assert np.allclose(proj(nh.bases[0]), proj(V0))
    assert nh.prefactors[1] == pytest.approx([2 / (1 + x * x)], rel=1e-12)
    assert nh.f == pytest.approx(2.0, rel=1e-12)


def test_riemannian_nested(table):
    nh = nested_hats(assemble(table("flat_torus"), [0.1, 0.2]).A)
    assert nh.n == [2] and nh.f == 1.0 and nh.sigma == 0


@pytest.mark.parametrize("x", [1.0, 0.5, -0.3])
def test_martinet_prefactors(table, x):
    nh = nested_hats(assemble(table("martinet"), [x, 0, 0]).A)
    q = 1 + x ** 4 / 4
    assert sorted(np.concatenate(nh.prefactors)) == pytest.approx(sorted([1, q, 2 * x * x / q]), rel=1e-10)
    assert nh.f == pytest.approx(2 * x * x, rel=1e-10)


def test_nested_hats_hormander_failure():
    with pytest.raises(HormanderError):
        nested_hats([np.array([[1.0, 0.0]])])


def test_near_cutoff_warning():
    A0 = np.array([[1.0, 0.0], [0.0, 0.0]])
    A1 = np.array([[0.0, math.sqrt(2e-9)]])
    with pytest.warns(RuntimeWarning, match="cutoff"):
        nested_hats([A0, A1])


POINTS = [("heisenberg", [0.3, -1, 0]), ("heisenberg", [0, 0, 0]), ("martinet", [0.7, 0, 0]),
          ("martinet", [0.0, 0.2, 0]), ("r4", [1.0, 1.0, 0, 0]), ("r4", [0.0, 0.0, 0, 0]),
          ("r4", [0.0, 1.0, 0, 0]), ("torus_fixed", [np.pi / 2, 0, 0]), ("torus_fixed", [1.0, 0, 0]),
          ("torus_equiregular", [2.0, 1, 1]), ("flat_torus", [0.0, 0.0])]


@pytest.mark.parametrize("name,m", POINTS)
def test_branch_count_law_and_two_paths(table, name, m):
    t = table(name)
    g = assemble(t, m)
    gr = growth_at(t, m)
    nh = nested_hats(g.A)
    assert nh.n == list(gr.n)
    counts = [n - (gr.n[j - 1] if j else 0) for j, n in enumerate(gr.n)]
    assert [len(p) for p in nh.prefactors] == counts
    assert nh.sigma == gr.sigma
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = branch_fit(g)
    want_orders = sorted(2 * j for j, c in enumerate(counts) for _ in range(c))
    assert sorted(fit.orders) == want_orders
    assert not fit.flagged and not fit.unmatched
    ok, gap = compare_fit(fit, nh)
    assert ok, gap
    de = det_expansion(g)
    assert de.leading_index == gr.sigma
    assert nh.f == pytest.approx(de.leading_coefficient, rel=1e-8)
    assert math.prod(fit.prefactors) == pytest.approx(nh.f, rel=1e-6)


def test_limit_density_examples(table):
    r = limit_density(table("heisenberg"), [0.2, 0.1, 0])
    assert r.f == pytest.approx(2) and r.density_SR == pytest.approx(2 ** -0.5, rel=1e-12) and not r.singular
    for x in (1.0, -0.25):
        r = limit_density(table("martinet"), [x, 0, 0])
        assert r.density_SR == pytest.approx(1 / (math.sqrt(2) * abs(x)), rel=1e-10)
    r = limit_density(table("martinet"), [0.0, 0.5, 0.5])
    assert r.singular and r.sigma == 2 and r.f == pytest.approx(2.0)
    assert r.density_SR == math.inf and r.f_global == 0.0 and r.density_local == pytest.approx(2 ** -0.5)


def test_martinet_density_blows_up_towards_singular_line(table):
    xs = [0.5, 0.1, 1e-2, 1e-3]
    rs = [limit_density(table("martinet"), [x, 0, 0]) for x in xs]
    assert all(b.density_SR > a.density_SR for a, b in zip(rs, rs[1:]))
    assert all(r.f == pytest.approx(2 * x * x, rel=1e-8) for r, x in zip(rs, xs))


def test_heisenberg_branches_against_closed_form(table):
    x = 1.0
    fit = branch_fit(assemble(table("heisenberg"), [x, 0, 0]))
    assert fit.orders == [0, 0, 2]
    assert fit.prefactors == pytest.approx([1.0, 2.0, 1.0], rel=1e-9)
    for h, lam in zip(fit.h_grid, fit.eigenvalues):
        T, D = 1 + x * x + 2 * h * h, 2 * h * h
        disc = math.sqrt(T * T - 4 * D)
        want = sorted([1.0, (T + disc) / 2, 2 * D / (T + disc)])
        assert sorted(lam) == pytest.approx(want, rel=1e-10)


def test_riemannian_slopes(table):
    fit = branch_fit(assemble(table("flat_torus"), [0.3, 0.3]))
    assert fit.orders == [0, 0] and np.allclose(fit.slopes, 0, atol=1e-12)


def test_martinet_singular_point_fit(table):
    fit = branch_fit(assemble(table("martinet"), [0.0, 0, 0]))
    assert fit.orders == [0, 0, 4] and fit.prefactors[2] == pytest.approx(2.0, rel=1e-9)


def test_crossing_branches_are_tracked():
    # lambda = 1, 1e-4 (order 0) and h^2 (order 2) cross near h = 1e-2
    g = GramData((0.0, 0.0, 0.0), (np.array([[1.0, 0, 0], [0, 1e-2, 0]]), np.array([[0, 0, 1.0]])))
    fit = branch_fit(g)
    assert fit.by_order() == {0: pytest.approx([1e-4, 1.0]), 2: pytest.approx([1.0])}
    assert compare_fit(fit, nested_hats(g.A))[0]


def test_branch_fit_needs_grid():
    g = GramData((0.0,), (np.array([[1.0]]),))
    with pytest.raises(ValueError):
        branch_fit(g, [0.5, 0.25])


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["martinet", "r4", "torus_fixed", "heisenberg"]), st.randoms(use_true_random=False),
       st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_f_invariant_under_generator_permutation(name, rnd, raw):
    from conftest import load_table
    s, t = load_table(name)
    perm = list(range(s.N0))
    rnd.shuffle(perm)
    s2 = s.with_generators([s.generators[i] for i in perm])
    t2 = enumerate_brackets(s2)
    lo, hi = np.array(s.domain.lower), np.array(s.domain.upper)
    m = lo + (np.array(raw[: s.d]) + 1) / 2 * (hi - lo)
    f1 = nested_hats(assemble(t, m).A).f
    f2 = nested_hats(assemble(t2, m).A).f
    assert f2 == pytest.approx(f1, rel=1e-9, abs=1e-14)
