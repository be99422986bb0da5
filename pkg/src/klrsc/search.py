"""Exact nearest-neighbour selection over feature rows.

Distances are squared Euclidean.  Candidates are shortlisted with a BLAS
distance expansion, then re-ranked on directly computed distances with ties
broken by lower index, so results equal a brute-force full sort.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import SrConfig
from .pyramid import SelfDictionary

_MARGIN = 8


@dataclass(frozen=True)
class NeighborSet:
    indices: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class CodingProblem:
    """One patch's coding inputs.

    ``Y_A`` column 0 is the query feature, followed by its nonlocal
    neighbours; ``Y_D`` / ``X_D`` are the paired sub-dictionaries.
    """

    Y_A: np.ndarray
    Y_D: np.ndarray
    X_D: np.ndarray
    atom_indices: np.ndarray
    norm: float
    mean: float


def knn_rows(
    queries: np.ndarray,
    pool: np.ndarray,
    k: int,
    exclude: np.ndarray | None = None,
    chunk: int = 1024,
) -> tuple[np.ndarray, np.ndarray]:
    """k nearest pool rows for every query row.

    ``exclude[i]`` (if given) is a pool index query ``i`` may not return.
    Returns ``(indices, distances)`` of shape ``(Q, k')`` where ``k'`` is
    ``k`` clipped to the available candidates.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    n_pool = pool.shape[0]
    avail = n_pool - (1 if exclude is not None else 0)
    if k > avail:
        warnings.warn(f"requested {k} neighbours but only {avail} candidates exist", stacklevel=2)
        k = avail
    nq = queries.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_dist = np.empty((nq, k))
    if k <= 0:
        return out_idx, out_dist
    m = min(k + _MARGIN, avail)
    pool_sq = np.einsum("ij,ij->i", pool, pool)
    for lo in range(0, nq, chunk):
        hi = min(lo + chunk, nq)
        q = queries[lo:hi]
        d2 = pool_sq[None, :] - 2.0 * (q @ pool.T)
        if exclude is not None:
            d2[np.arange(hi - lo), exclude[lo:hi]] = np.inf
        if m < d2.shape[1]:
            cand = np.argpartition(d2, m - 1, axis=1)[:, :m]
        else:
            cand = np.broadcast_to(np.arange(n_pool), d2.shape).copy()
            if exclude is not None:
                cand = cand[d2 != np.inf].reshape(hi - lo, -1)
        diff = q[:, None, :] - pool[cand]
        exact = np.einsum("ijk,ijk->ij", diff, diff)
        order = np.lexsort((cand, exact), axis=1)[:, :k]
        idx = np.take_along_axis(cand, order, axis=1)
        dist = np.take_along_axis(exact, order, axis=1)
        if m < d2.shape[1]:
            # rows whose shortlist cutoff does not clear the k-th distance by
            # more than the expansion's rounding error are redone in full
            q_sq = np.einsum("ij,ij->i", q, q)
            cutoff = np.take_along_axis(d2, cand, axis=1).max(axis=1) + q_sq
            slack = 1e-9 * (1.0 + pool_sq.max() + q_sq)
            for r in np.flatnonzero(cutoff <= dist[:, -1] + slack):
                idx[r], dist[r] = _exact_row(q[r], pool, k, None if exclude is None else exclude[lo + r])
        out_idx[lo:hi] = idx
        out_dist[lo:hi] = dist
    return out_idx, out_dist


def _exact_row(q: np.ndarray, pool: np.ndarray, k: int, skip) -> tuple[np.ndarray, np.ndarray]:
    diff = pool - q
    exact = np.einsum("ij,ij->i", diff, diff)
    cand = np.arange(pool.shape[0])
    if skip is not None:
        keep = cand != skip
        cand, exact = cand[keep], exact[keep]
    order = np.lexsort((cand, exact))[:k]
    return cand[order], exact[order]


def knn_nonlocal(query_index: int, features: np.ndarray, k: int) -> NeighborSet:
    """k most similar in-layer features to ``features[query_index]``, self excluded."""
    idx, dist = knn_rows(features[query_index : query_index + 1], features, k,
                         exclude=np.array([query_index]))
    return NeighborSet(idx[0], dist[0])


def knn_nonlocal_all(features: np.ndarray, k: int, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    return knn_rows(features, features, k, exclude=np.arange(features.shape[0]), chunk=chunk)


def knn_dictionary(query: np.ndarray, dictionary: SelfDictionary, k: int) -> NeighborSet:
    vec = getattr(query, "vector", query)
    idx, dist = knn_rows(np.asarray(vec)[None, :], dictionary.learn_atoms, k)
    return NeighborSet(idx[0], dist[0])


def knn_dictionary_all(queries: np.ndarray, dictionary: SelfDictionary, k: int,
                       chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    return knn_rows(queries, dictionary.learn_atoms, k, chunk=chunk)


def assemble_problem(
    query_index: int,
    features: np.ndarray,
    dictionary: SelfDictionary,
    cfg: SrConfig,
    norms: np.ndarray | None = None,
    means: np.ndarray | None = None,
) -> CodingProblem:
    """Gather the data matrix and sub-dictionaries for one query feature."""
    query = features[query_index]
    cols = [query]
    if cfg.k_nonlocal > 0:
        nl = knn_nonlocal(query_index, features, cfg.k_nonlocal)
        cols.extend(features[nl.indices])
    atoms = knn_dictionary(query, dictionary, cfg.k_dict).indices
    return CodingProblem(
        Y_A=np.stack(cols, axis=1),
        Y_D=np.ascontiguousarray(dictionary.L[:, atoms]),
        X_D=np.ascontiguousarray(dictionary.H[:, atoms]),
        atom_indices=atoms,
        norm=float(norms[query_index]) if norms is not None else float(np.linalg.norm(query)),
        mean=float(means[query_index]) if means is not None else 0.0,
    )
