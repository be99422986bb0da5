import warnings

import numpy as np
import pytest

from klrsc.config import SrConfig
from klrsc.pyramid import SelfDictionary
from klrsc.search import (assemble_problem, knn_dictionary, knn_dictionary_all, knn_nonlocal,
                          knn_nonlocal_all, knn_rows)


def brute(query, pool, k, skip=None):
    d = ((pool - query) ** 2).sum(axis=1)
    idx = [i for i in np.lexsort((np.arange(len(pool)), d)) if i != skip][:k]
    return np.array(idx), d[idx]


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def make_dict(rng, k, d=8, b=4):
    L = unit_rows(rng, k, d).T
    H = unit_rows(rng, k, b).T
    return SelfDictionary(np.asfortranarray(L), np.asfortranarray(H), np.ones(k), np.zeros(k))


def test_nonlocal_small_example():
    feats = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    ns = knn_nonlocal(0, feats, 1)
    assert ns.indices.tolist() == [1]
    assert ns.distances.tolist() == [1.0]


def test_duplicates_rank_first_with_lower_index_tiebreak():
    base = np.array([[1.0, 0.0], [0.0, 1.0]])
    feats = np.concatenate([base, base, base, [[0.6, 0.8]]])
    ns = knn_nonlocal(0, feats, 3)
    assert ns.indices.tolist() == [2, 4, 6]
    assert ns.distances[:2].tolist() == [0.0, 0.0]


def test_many_ties_beyond_shortlist():
    # 40 identical candidates: lower indices must win even past the shortlist margin
    feats = np.tile([[1.0, 0.0, 0.0]], (40, 1))
    idx, dist = knn_rows(feats[:1], feats, 20, exclude=np.array([0]))
    assert idx[0].tolist() == list(range(1, 21))
    assert np.all(dist == 0)


@pytest.mark.parametrize("k", [1, 5, 20, 60])
def test_nonlocal_matches_brute_force(rng, k):
    feats = unit_rows(rng, 500, 12)
    idx, dist = knn_nonlocal_all(feats, k, chunk=97)
    for q in range(0, 500, 37):
        bi, bd = brute(feats[q], feats, k, skip=q)
        assert idx[q].tolist() == bi.tolist()
        assert np.allclose(dist[q], bd, atol=1e-12)
        assert q not in idx[q]
        assert len(set(idx[q])) == k
        assert np.all(np.diff(dist[q]) >= 0)


def test_quantised_features_match_brute_force(rng):
    # coarse values produce plenty of exact distance ties
    feats = rng.integers(0, 3, size=(300, 4)).astype(float)
    idx, dist = knn_nonlocal_all(feats, 15)
    for q in range(0, 300, 13):
        bi, _ = brute(feats[q], feats, 15, skip=q)
        assert idx[q].tolist() == bi.tolist()


def test_dictionary_query_equal_to_atom(rng):
    d = make_dict(rng, 50)
    ns = knn_dictionary(d.learn_atoms[17], d, 5)
    assert ns.indices[0] == 17 and ns.distances[0] == pytest.approx(0.0, abs=1e-12)


def test_dictionary_k_equals_size_returns_all_sorted(rng):
    d = make_dict(rng, 30)
    q = unit_rows(rng, 1, 8)[0]
    ns = knn_dictionary(q, d, 30)
    assert sorted(ns.indices.tolist()) == list(range(30))
    assert np.all(np.diff(ns.distances) >= 0)


def test_dictionary_matches_brute_force(rng):
    d = make_dict(rng, 400)
    qs = unit_rows(rng, 50, 8)
    idx, _ = knn_dictionary_all(qs, d, 60)
    for i, q in enumerate(qs):
        assert idx[i].tolist() == brute(q, d.learn_atoms, 60)[0].tolist()


def test_too_few_candidates_warns_and_returns_all():
    feats = np.eye(4)
    with pytest.warns(UserWarning):
        ns = knn_nonlocal(0, feats, 10)
    assert sorted(ns.indices.tolist()) == [1, 2, 3]


def test_search_is_deterministic(rng):
    feats = unit_rows(rng, 200, 6)
    a = knn_nonlocal_all(feats, 20)
    b = knn_nonlocal_all(feats.copy(), 20)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_assemble_problem_shapes(rng):
    feats = unit_rows(rng, 100, 8)
    d = make_dict(rng, 200)
    cfg = SrConfig()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        prob = assemble_problem(3, feats, d, cfg)
    assert prob.Y_A.shape == (8, 21) and prob.Y_D.shape == (8, 60) and prob.X_D.shape == (4, 60)
    assert np.array_equal(prob.Y_A[:, 0], feats[3])
    assert np.allclose(np.linalg.norm(prob.Y_D, axis=0), 1.0)
    assert np.array_equal(prob.Y_D, d.L[:, prob.atom_indices])
    assert np.array_equal(prob.X_D, d.H[:, prob.atom_indices])


def test_exact_fallback_only_for_near_ties(rng, monkeypatch):
    from klrsc import search

    calls = []
    real = search._exact_row
    monkeypatch.setattr(search, "_exact_row", lambda *a: calls.append(1) or real(*a))
    pool = rng.normal(size=(500, 20))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    q = rng.normal(size=(100, 20))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    search.knn_rows(q, pool, 10)
    assert len(calls) < 5
