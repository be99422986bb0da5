"""Pure-numpy batched solver kernels.

Reference implementation of the hot loops; the compiled module
``_ckernels`` provides the same functions with identical semantics.
Every function operates on a batch of independent problems stacked along
axis 0 and never couples them, so results do not depend on batch
composition.
"""

from __future__ import annotations

import numpy as np


def soft_threshold(m: np.ndarray, tau) -> np.ndarray:
    return np.sign(m) * np.maximum(np.abs(m) - tau, 0.0)


def svt_batch(m: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Singular-value soft-thresholding of each ``m[i]`` at ``tau[i]``."""
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - np.asarray(tau)[:, None], 0.0)
    return np.matmul(u * s[:, None, :], vt)


def lipschitz_batch(gram: np.ndarray, n_iter: int = 50) -> np.ndarray:
    """Largest eigenvalue of each PSD ``gram[i]`` by power iteration."""
    b, k, _ = gram.shape
    v = np.full((b, k, 1), 1.0 / np.sqrt(k))
    lam = np.zeros(b)
    for _ in range(n_iter):
        w = np.matmul(gram, v)
        nrm = np.sqrt(np.einsum("bij,bij->b", w, w))
        nrm = np.where(nrm > 0, nrm, 1.0)
        v = w / nrm[:, None, None]
    w = np.matmul(gram, v)
    lam = np.einsum("bij,bij->b", v, w)
    # a hair above the estimate: power iteration approaches from below
    return np.maximum(lam * (1.0 + 1e-6), 1e-12)


def ista_batch(gram: np.ndarray, rhs: np.ndarray, lam: float, n_iter: int,
               lipschitz: np.ndarray | None = None) -> np.ndarray:
    """Iterative shrinkage for ``min 0.5||y - D w||^2 + lam ||w||_1`` per column.

    The problem enters through ``gram = D^T D`` (B, K, K) and
    ``rhs = D^T Y`` (B, K, M).  Starts from zero, fixed step ``1/L``.
    """
    if lipschitz is None:
        lipschitz = lipschitz_batch(gram)
    step = (1.0 / lipschitz)[:, None, None]
    thr = lam * step
    w = np.zeros_like(rhs)
    for _ in range(n_iter):
        g = np.matmul(gram, w) - rhs
        w = soft_threshold(w - step * g, thr)
    return w


def ialm_batch(kdd, kda, z0, lam1, lam2, rho, tol, max_iter, u_floor):
    """Inexact ALM for the relaxed low-rank sparse coding problem.

    Parameters are batched ``kdd`` (B, K, K), ``kda`` (B, K, M) and the
    initial codes ``z0`` (B, K, M).  Returns ``(W3, iters, feas, feas1)``:
    final codes, iterations used, final relative feasibility and the
    feasibility after the first iteration.
    """
    kdd = np.asarray(kdd, dtype=np.float64)
    kda = np.asarray(kda, dtype=np.float64)
    b, k, m = kda.shape
    w3 = np.array(z0, dtype=np.float64, copy=True)
    iters = np.zeros(b, dtype=np.int64)
    feas = np.full(b, np.inf)
    feas1 = np.full(b, np.inf)
    if b == 0:
        return w3, iters, feas, feas1

    smax = np.linalg.norm(w3, ord=2, axis=(1, 2))
    amax = np.abs(w3).max(axis=(1, 2))
    u1 = np.where(smax > 0, 1.0 / np.where(smax > 0, smax, 1.0), u_floor)
    u2 = np.where(amax > 0, 1.0 / np.where(amax > 0, amax, 1.0), u_floor)

    evals, evecs = np.linalg.eigh(kdd)
    w1 = w3.copy()
    w2 = w3.copy()
    l1 = np.zeros_like(w3)
    l2 = np.zeros_like(w3)
    active = np.arange(b)

    for it in range(1, max_iter + 1):
        a = active
        U1 = u1[a][:, None, None]
        U2 = u2[a][:, None, None]
        W3, L1, L2 = w3[a], l1[a], l2[a]
        W1 = soft_threshold(W3 + L1 / U1, lam1 / U1)
        W2 = svt_batch(W3 + L2 / U2, lam2 / u2[a])
        z = kda[a] + U1 * W1 - L1 + U2 * W2 - L2
        V = evecs[a]
        inv = 1.0 / (evals[a] + (u1[a] + u2[a])[:, None])
        W3 = np.matmul(V, inv[:, :, None] * np.matmul(V.transpose(0, 2, 1), z))
        d1 = W3 - W1
        d2 = W3 - W2
        l1[a] = L1 + U1 * d1
        l2[a] = L2 + U2 * d2
        u1[a] *= rho
        u2[a] *= rho
        w1[a], w2[a], w3[a] = W1, W2, W3
        n1 = np.sqrt(np.einsum("bij,bij->b", d1, d1))
        n2 = np.sqrt(np.einsum("bij,bij->b", d2, d2))
        n3 = np.sqrt(np.einsum("bij,bij->b", W3, W3))
        f = np.maximum(n1, n2) / np.maximum(1.0, n3)
        feas[a] = f
        iters[a] = it
        if it == 1:
            feas1[a] = f
        active = a[~(f < tol)]
        if active.size == 0:
            break
    return w3, iters, feas, feas1
