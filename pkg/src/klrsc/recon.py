"""Patch reconstruction from codes and layer refinement.

Refinement is gradient descent on

    w ||I0 - D B I||^2 + alpha ||(E - A) I||^2 + beta ||I - I_init||^2

where ``D B`` blurs and resamples a layer down to the input grid and ``A``
is a per-pixel autoregressive predictor over each 3x3 neighbourhood.  The
data weight ``w`` is 1 or the layer-to-input pixel-count ratio; the ratio
gives the exact transpose of ``D`` the gain of an area-normalised
back-projection, so ``alpha`` and ``beta`` keep the same relative strength on
every layer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .config import RefineConfig
from .imgcore import Patch, blur_matrix, mirror_index, resize_matrix
from .pyramid import SelfDictionary

log = logging.getLogger(__name__)

# 3x3 ring offsets, row-major with the centre removed
RING = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


@dataclass(frozen=True)
class PatchEstimate:
    weights: np.ndarray
    atom_indices: np.ndarray
    lr_norm: float
    lr_mean: float
    origin: tuple[int, int]
    passthrough: np.ndarray | None = None


def reconstruct_patch(est: PatchEstimate, dictionary: SelfDictionary) -> Patch:
    if est.passthrough is not None:
        return Patch(est.origin, np.array(est.passthrough, dtype=np.float64))
    b_s = dictionary.patch_size
    x = dictionary.H[:, est.atom_indices] @ est.weights * est.lr_norm + est.lr_mean
    return Patch(est.origin, x.reshape(b_s, b_s))


def reconstruct_batch(weights: np.ndarray, atom_idx: np.ndarray, dictionary: SelfDictionary,
                      scale: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Vectorised :func:`reconstruct_patch`; returns (B, b_s, b_s)."""
    b_s = dictionary.patch_size
    atoms = dictionary.recon_atoms[atom_idx]  # (B, K, b)
    x = np.einsum("bk,bkd->bd", weights, atoms)
    x = x * scale[:, None] + mean[:, None]
    return x.reshape(-1, b_s, b_s)


# ---------------------------------------------------------------------------
# autoregressive model
# ---------------------------------------------------------------------------

def neighborhoods(img: np.ndarray) -> np.ndarray:
    """(H*W, 9) row-major 3x3 neighbourhood of every pixel, mirrored borders."""
    p = np.pad(img, 1, mode="symmetric")
    h, w = img.shape
    win = np.lib.stride_tricks.sliding_window_view(p, (3, 3))
    return win.reshape(h * w, 9)


def split_ring(nb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split 9-vectors into (ring 8-vectors, centre values)."""
    return np.delete(nb, 4, axis=-1), nb[..., 4]


def learn_ar_weights(Q: np.ndarray, S: np.ndarray, eta: float) -> np.ndarray:
    """Ridge predictor of centres ``S`` (N,) from rings ``Q`` (8, N)."""
    Q = np.asarray(Q, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64).ravel()
    lhs = Q @ Q.T + eta * np.eye(Q.shape[0])
    return np.linalg.lstsq(lhs, Q @ S, rcond=None)[0] if eta == 0 else np.linalg.solve(lhs, Q @ S)


def learn_ar_field(rings: np.ndarray, centres: np.ndarray, eta: float) -> np.ndarray:
    """Batched ridge fits: ``rings`` (P, N, 8), ``centres`` (P, N) -> (P, 8)."""
    lhs = np.matmul(rings.transpose(0, 2, 1), rings) + eta * np.eye(rings.shape[2])
    rhs = np.einsum("pnk,pn->pk", rings, centres)
    return np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]


def ar_neighbor_patches(queries: np.ndarray, pool: np.ndarray, n: int,
                        exclude_self: bool = False) -> np.ndarray:
    """Indices of the ``n`` pool neighbourhoods closest to each query.

    With ``exclude_self`` the pool is the query set itself and a query never
    matches its own index.
    """
    avail = pool.shape[0] - (1 if exclude_self else 0)
    n = min(n, avail)
    tree = cKDTree(pool)
    k = n + 1 if exclude_self else n
    _, idx = tree.query(queries, k=k)
    idx = np.asarray(idx).reshape(len(queries), k)
    if not exclude_self:
        return idx
    own = np.arange(len(queries))[:, None]
    hit = idx == own
    # drop the self match, or the farthest entry when self was not returned
    drop = np.where(hit.any(axis=1), hit.argmax(axis=1), k - 1)
    keep = np.ones_like(idx, dtype=bool)
    keep[np.arange(len(queries)), drop] = False
    return idx[keep].reshape(len(queries), n)


def build_ar_operator(weights: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    """Sparse ``A`` with row j predicting pixel j from its mirrored 3x3 ring."""
    h, w = shape
    rr, cc = np.divmod(np.arange(h * w), w)
    cols = []
    for dr, dc in RING:
        cols.append(mirror_index(rr + dr, h) * w + mirror_index(cc + dc, w))
    cols = np.stack(cols, axis=1)
    rows = np.repeat(np.arange(h * w), 8)
    a = sp.coo_matrix((weights.ravel(), (rows, cols.ravel())), shape=(h * w, h * w))
    return a.tocsr()


def learn_ar_operator(layer: np.ndarray, pool_layers: list[np.ndarray], n: int, eta: float,
                      exclude_self: bool = False) -> sp.csr_matrix:
    queries = neighborhoods(layer)
    pool = np.concatenate([neighborhoods(p) for p in pool_layers])
    idx = ar_neighbor_patches(queries, pool, n, exclude_self)
    samples = pool[idx]
    rings, centres = split_ring(samples)
    weights = learn_ar_field(rings, centres, eta)
    # pixels trained only on flat neighbourhoods have nothing to learn; the
    # ridge would shrink their prediction, so use the plain ring mean instead
    spread = np.ptp(samples, axis=-1).max(axis=1)
    flat = spread <= 1e-12 * (1.0 + np.abs(samples).max(axis=(1, 2)))
    weights[flat] = 1.0 / rings.shape[-1]
    return build_ar_operator(weights, layer.shape)


# ---------------------------------------------------------------------------
# degradation and refinement
# ---------------------------------------------------------------------------

class Degradation:
    """Blur then bicubic-resample from ``hr_shape`` to ``lr_shape``.

    Stored as two dense per-axis matrices so the adjoint is the exact
    transpose.
    """

    def __init__(self, hr_shape, lr_shape, variance: float, kernel_size: int = 7, a: float = -0.5):
        self.hr_shape = tuple(hr_shape)
        self.lr_shape = tuple(lr_shape)
        self.ph = resize_matrix(hr_shape[0], lr_shape[0], a) @ blur_matrix(hr_shape[0], variance, kernel_size)
        self.pw = resize_matrix(hr_shape[1], lr_shape[1], a) @ blur_matrix(hr_shape[1], variance, kernel_size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.ph @ x @ self.pw.T

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.ph.T @ y @ self.pw


@dataclass
class RefineInfo:
    iterations: int
    residuals: list[float]
    diverged: bool = False


def _objective_and_direction(x, I0, ar, cfg: RefineConfig, deg: Degradation, anchor):
    r = I0 - deg.apply(x)
    w = cfg.data_weight
    obj = w * float(np.sum(r * r))
    g = w * deg.adjoint(r)
    if ar is not None and cfg.alpha:
        flat = x.ravel()
        e = flat - ar @ flat
        obj += cfg.alpha * float(e @ e)
        g = g - cfg.alpha * (e - ar.T @ e).reshape(x.shape)
    if cfg.beta:
        d = x - anchor
        obj += cfg.beta * float(np.sum(d * d))
        g = g - cfg.beta * d
    return obj, g


def refine_objective(x, I0, ar, cfg: RefineConfig, deg: Degradation, anchor) -> float:
    return _objective_and_direction(x, I0, ar, cfg, deg, anchor)[0]


def refine_direction(x, I0, ar, cfg: RefineConfig, deg: Degradation, anchor) -> np.ndarray:
    """Bracketed update term; equals minus half the objective gradient."""
    return _objective_and_direction(x, I0, ar, cfg, deg, anchor)[1]


def refine_layer(I_init: np.ndarray, I0: np.ndarray, ar: sp.spmatrix | None, cfg: RefineConfig,
                 deg: Degradation, anchor: np.ndarray | None = None) -> tuple[np.ndarray, RefineInfo]:
    """Back-projection with optional AR regularisation.

    Starts from ``I_init``; the ``beta`` term pulls towards ``anchor``
    (``I_init`` itself when omitted).
    """
    x = np.array(I_init, dtype=np.float64)
    anchor = I_init if anchor is None else anchor
    residuals = []
    best_x, best_obj = x, np.inf
    first = None
    for t in range(cfg.max_iter):
        obj, g = _objective_and_direction(x, I0, ar, cfg, deg, anchor)
        residuals.append(obj)
        if obj < best_obj:
            best_x, best_obj = x, obj
        step = cfg.tau * g
        size = float(np.linalg.norm(step))
        if first is None:
            first = size
        if first > 0 and size > 10.0 * first:
            log.warning("refinement diverging at iteration %d; keeping best iterate", t)
            return best_x, RefineInfo(t, residuals, True)
        x = x + step
        if size <= cfg.tol * max(float(np.linalg.norm(x)), 1e-300):
            return x, RefineInfo(t + 1, residuals)
    return x, RefineInfo(cfg.max_iter, residuals)
