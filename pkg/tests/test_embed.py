from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from channeltopo import embed
from channeltopo.embed import (
    AffinityError,
    AffinityMatrix,
    EmbeddingError,
    TsneParams,
    conditional_affinities,
    export_embedding,
    export_kl_log,
    kl_divergence,
    kl_gradient,
    optimizer_gradient,
    pca,
    squared_distances,
    tsne,
)

from oracles import bisect_row_perplexity, covariance_eigen_pca, finite_difference_gradient, tsne_kl


def _entropy_bits(row):
    p = row[row > 0]
    return float(-(p * np.log2(p)).sum())


def test_equilateral_triple_conditionals():
    aff = conditional_affinities(np.eye(3), perplexity=1.5)
    off = ~np.eye(3, dtype=bool)
    assert (aff.conditional[off] == 0.5).all()
    assert aff.P.sum() == pytest.approx(1.0, abs=1e-12)


def test_ten_points_against_long_bisection():
    X = np.random.default_rng(1).random((10, 4))
    aff = conditional_affinities(X, perplexity=5)
    D2 = squared_distances(X)
    for i in range(10):
        d = np.delete(D2[i], i)
        oracle = bisect_row_perplexity(d, 5.0)
        got = np.delete(aff.conditional[i], i)
        assert np.allclose(got, oracle, atol=1e-5)
        assert abs(2 ** _entropy_bits(got) - 5) < 1e-3


@given(hnp.arrays(np.float64, st.tuples(st.integers(6, 25), st.integers(1, 5)),
                  elements=st.floats(0, 1, allow_nan=False)),
       st.floats(1.5, 4.5))
def test_affinity_invariants(X, perplexity):
    aff = conditional_affinities(X, perplexity)
    P = aff.P
    assert np.array_equal(P, P.T)
    assert (P >= 0).all() and (np.diag(P) == 0).all()
    assert abs(P.sum() - 1.0) < 1e-9
    for i in np.flatnonzero(~aff.saturated):
        assert abs(2 ** _entropy_bits(aff.conditional[i]) - perplexity) < 1e-3


_DYADIC = st.integers(-320, 320).map(lambda k: k / 64)


@given(hnp.arrays(np.float64, (12, 3), elements=_DYADIC), hnp.arrays(np.float64, 3, elements=_DYADIC))
def test_translation_leaves_affinities_unchanged(X, shift):
    # dyadic grid: the shift is exact, so no two points merge or split
    a = conditional_affinities(X, 3.0).P
    b = conditional_affinities(X + shift, 3.0).P
    assert np.allclose(a, b, atol=1e-9)


def test_duplicates_get_maximal_affinity():
    rng = np.random.default_rng(2)
    X = rng.random((15, 3))
    X[7] = X[3]
    P = conditional_affinities(X, 4.0).P
    assert P[3, 7] == P[3].max()


def test_saturated_rows_take_limit_distribution():
    # five copies of one point plus two others: perplexity 6 is reachable, 1.2 is not
    X = np.array([[0.0]] * 5 + [[1.0], [2.0]])
    aff = conditional_affinities(X, 1.2)
    assert aff.saturated[:5].all()
    row = aff.conditional[0]
    assert np.allclose(row[1:5], 0.25) and row[5] == 0.0


def test_nonconvergence_reports_row(monkeypatch):
    monkeypatch.setattr(embed, "MAX_HALVINGS", 0)
    X = np.random.default_rng(0).random((8, 2))
    with pytest.raises(AffinityError) as info:
        conditional_affinities(X, 3.0, tol=1e-12)
    assert 0 <= info.value.row < 8


def test_affinity_preconditions():
    with pytest.raises(ValueError):
        conditional_affinities(np.zeros((2, 2)), 1.5)
    with pytest.raises(ValueError):
        conditional_affinities(np.random.rand(5, 2), 5)


def _random_P(n, seed):
    X = np.random.default_rng(seed).random((n, 4))
    return conditional_affinities(X, 5.0).P


def test_gradient_matches_finite_differences():
    P = _random_P(20, 3)
    Y = np.random.default_rng(4).normal(size=(20, 2))
    kl, grad = kl_gradient(P, Y)
    fd = finite_difference_gradient(lambda Z: kl_divergence(P, Z), Y, step=1e-5)
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-4
    assert kl == pytest.approx(tsne_kl(P, Y), rel=1e-10)


def test_compiled_gradient_matches_reference():
    P = _random_P(30, 5)
    Y = np.random.default_rng(6).normal(size=(30, 2))
    assert np.allclose(optimizer_gradient(P, Y), kl_gradient(P, Y)[1], rtol=1e-10, atol=1e-14)
    # exaggeration scales only the attractive term
    _, g = kl_gradient(3.0 * P, Y)
    assert np.allclose(optimizer_gradient(P, Y, 3.0), g, rtol=1e-9, atol=1e-14)


def test_tsne_is_deterministic_and_descends():
    X = np.random.default_rng(7).random((60, 5))
    params = TsneParams(perplexity=10, iterations=400, seed=11)
    a, b = tsne(X, params), tsne(X, params)
    assert np.array_equal(a.coords, b.coords)
    assert a.method == "tsne" and np.isfinite(a.coords).all() and a.coords.shape == (60, 2)
    assert a.final_objective <= a.diagnostics["kl_after_exaggeration"]
    its = [it for it, _ in a.diagnostics["kl_history"]]
    assert its == [0, 100, 200, 300, 400]
    assert a.final_objective == pytest.approx(kl_divergence(conditional_affinities(X, 10).P, a.coords))


def test_tsne_seed_changes_layout():
    X = np.random.default_rng(8).random((30, 3))
    a = tsne(X, TsneParams(perplexity=5, iterations=50, seed=1))
    b = tsne(X, TsneParams(perplexity=5, iterations=50, seed=2))
    assert not np.array_equal(a.coords, b.coords)


def test_tsne_aborts_on_non_finite_gradient():
    X = np.random.default_rng(0).random((10, 2))
    aff = conditional_affinities(X, 3.0)
    P = aff.P.copy()
    P[0, 1] = P[1, 0] = np.nan
    bad = AffinityMatrix(P, aff.conditional, aff.sigmas, aff.perplexities, aff.saturated)
    with pytest.raises(EmbeddingError) as info:
        tsne(X, TsneParams(perplexity=3.0, iterations=10), affinities=bad)
    assert info.value.iteration == 0


@pytest.mark.parametrize("kwargs", [dict(perplexity=1.0), dict(perplexity=50), dict(iterations=0),
                                    dict(learning_rate=0), dict(momentum_late=1.0), dict(exaggeration=0.5)])
def test_tsne_parameter_checks(kwargs):
    with pytest.raises(ValueError):
        TsneParams(**kwargs).check(40)


def test_tsne_input_checks():
    with pytest.raises(ValueError):
        tsne(np.zeros((2, 2)))


def test_pca_rank_one():
    x = np.linspace(0, 1, 9)
    res = pca(np.c_[x, 2 * x], 2)
    assert res.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)
    assert res.explained_variance_ratio[1] == pytest.approx(0.0, abs=1e-12)


def test_pca_full_rank_reconstructs():
    X = np.random.default_rng(9).random((12, 4))
    res = pca(X, 4)
    rebuilt = res.embedding.coords @ res.components + res.mean
    assert np.abs(rebuilt - X).max() < 1e-8
    assert res.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)


@given(hnp.arrays(np.float64, (5, 3), elements=st.floats(-10, 10, allow_nan=False)))
def test_pca_matches_covariance_oracle(X):
    vals, vecs, _ = covariance_eigen_pca(X, 3)
    if np.min(np.abs(np.diff(vals))) < 1e-6 * max(vals[0], 1e-12) or vals[0] < 1e-9:
        return  # repeated eigenvalues leave the axes undetermined
    res = pca(X, 3)
    for k in range(3):
        if vals[k] < 1e-9 * vals[0]:
            continue
        dot = abs(float(res.components[k] @ vecs[k]))
        assert dot == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(res.explained_variance, vals, atol=1e-8 * max(1.0, vals[0]))


def test_pca_sign_convention_and_errors():
    X = np.random.default_rng(10).random((20, 4))
    comps = pca(X, 3).components
    for row in comps:
        assert row[np.argmax(np.abs(row))] > 0
    assert np.allclose(comps @ comps.T, np.eye(3), atol=1e-10)
    with pytest.raises(ValueError):
        pca(X, 0)
    with pytest.raises(ValueError):
        pca(X, 5)


def test_exports(tmp_path):
    X = np.random.default_rng(12).random((8, 3))
    emb = tsne(X, TsneParams(perplexity=2, iterations=120))
    export_embedding(emb, [f"p{k}" for k in range(8)], tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "id,x,y" and len(lines) == 9
    export_kl_log(emb, tmp_path / "kl.csv")
    assert (tmp_path / "kl.csv").read_text().splitlines()[0] == "iteration,kl"
