"""Low-rank sparse coding of a patch together with its nonlocal neighbours.

Three coding schemes share one code path:

``SC``
    plain l1 coding of the query feature (iterative shrinkage);
``LRSC``
    joint l1 + nuclear-norm coding of the query and its neighbours with
    linear gram matrices;
``KLRSC``
    the same problem in a Gaussian-kernel feature space.

The joint problems are solved by an inexact augmented Lagrangian iteration
with three copies of the code matrix (``W1`` sparse, ``W2`` low-rank,
``W3`` data fit) tied by equality constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._kernels_py import soft_threshold as _soft
from .config import KernelSpec, SolverConfig
from .search import CodingProblem


@dataclass(frozen=True)
class KernelMatrices:
    K_DD: np.ndarray
    K_DA: np.ndarray


@dataclass
class SolverState:
    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    u1: float
    u2: float
    iter: int = 0


@dataclass
class SolverDiagnostics:
    iterations: int
    feasibility: float
    first_feasibility: float
    converged: bool
    fallback: bool = False
    objective: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# elementary operators
# ---------------------------------------------------------------------------

def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / sigma**2))


def soft_threshold(m: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise shrinkage ``sign(m) * max(|m| - tau, 0)``."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    return _soft(np.asarray(m, dtype=np.float64), tau)


def singular_value_threshold(m: np.ndarray, tau: float) -> np.ndarray:
    """Proximal operator of ``tau * ||.||_*``: shrink every singular value by ``tau``."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=np.float64), full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def gram_blocks(yd_rows: np.ndarray, ya_rows: np.ndarray,
                kernel: KernelSpec | None) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``K_DD`` (B, K, K) and ``K_DA`` (B, K, M) from row-stacked features.

    ``kernel=None`` gives linear gram matrices.
    """
    gdd = np.matmul(yd_rows, yd_rows.transpose(0, 2, 1))
    gda = np.matmul(yd_rows, ya_rows.transpose(0, 2, 1))
    if kernel is None:
        return gdd, gda
    nd = np.einsum("bij,bij->bi", yd_rows, yd_rows)
    na = np.einsum("bij,bij->bi", ya_rows, ya_rows)
    s2 = kernel.bandwidth**2
    dd = np.maximum(nd[:, :, None] + nd[:, None, :] - 2.0 * gdd, 0.0)
    da = np.maximum(nd[:, :, None] + na[:, None, :] - 2.0 * gda, 0.0)
    kdd = np.exp(-dd / s2)
    idx = np.arange(kdd.shape[1])
    kdd[:, idx, idx] = 1.0
    kdd = 0.5 * (kdd + kdd.transpose(0, 2, 1))
    return kdd, np.exp(-da / s2)


def kernel_matrices(Y_D: np.ndarray, Y_A: np.ndarray, kernel: KernelSpec | None) -> KernelMatrices:
    """Kernel (or linear, for ``kernel=None``) matrices of column-stacked features."""
    kdd, kda = gram_blocks(Y_D.T[None], Y_A.T[None], kernel)
    return KernelMatrices(kdd[0], kda[0])


def nuclear_norm_mapped(Y: np.ndarray, kernel: KernelSpec | None = None) -> float:
    """Nuclear norm of the kernel-mapped columns of ``Y``: sum of sqrt(eig(K_YY))."""
    kernel = kernel or KernelSpec()
    return float(nuclear_norms_mapped(np.asarray(Y).T[None], kernel)[0])


def nuclear_norms_mapped(y_rows: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    kyy, _ = gram_blocks(y_rows, y_rows[:, :1], kernel)
    ev = np.linalg.eigvalsh(kyy)
    if (ev < -1e-10).any():
        raise ValueError(f"kernel matrix has a negative eigenvalue {ev.min():.3e}")
    # eigenvalues at rounding level are zero; their square roots would not be
    floor = ev.shape[1] * np.finfo(float).eps * np.abs(ev).max(axis=1, keepdims=True)
    return np.sqrt(np.where(ev > floor, ev, 0.0)).sum(axis=1)


# ---------------------------------------------------------------------------
# sparse coding
# ---------------------------------------------------------------------------

def sc_code(y: np.ndarray, Y_D: np.ndarray, lam: float, n_iter: int = 200) -> np.ndarray:
    """``argmin 0.5||y - Y_D w||^2 + lam ||w||_1`` by iterative shrinkage.

    Fixed step ``1/L`` with ``L`` the largest eigenvalue of ``Y_D^T Y_D``;
    ``y`` may be a vector or a matrix of columns coded independently.
    """
    Y_D = np.asarray(Y_D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gram = Y_D.T @ Y_D
    rhs = Y_D.T @ (y if y.ndim == 2 else y[:, None])
    lip = np.array([max(np.linalg.eigvalsh(gram)[-1], 1e-12)])
    w = kernels.ista_batch(gram[None], rhs[None], lam, n_iter, lip)[0]
    return w if y.ndim == 2 else w[:, 0]


def sc_objective(y, Y_D, w, lam) -> float:
    r = y - Y_D @ w
    return 0.5 * float(r @ r) + lam * float(np.abs(w).sum())


# ---------------------------------------------------------------------------
# augmented Lagrangian solver
# ---------------------------------------------------------------------------

def initial_penalties(Z0: np.ndarray, u_floor: float) -> tuple[float, float]:
    smax = float(np.linalg.norm(Z0, 2)) if Z0.size else 0.0
    amax = float(np.abs(Z0).max()) if Z0.size else 0.0
    return (1.0 / smax if smax > 0 else u_floor, 1.0 / amax if amax > 0 else u_floor)


def init_state(problem: CodingProblem | np.ndarray, cfg: SolverConfig) -> SolverState:
    """Start from sparse codes of every data column (or a given ``Z0`` matrix)."""
    if isinstance(problem, CodingProblem):
        Z0 = sc_code(problem.Y_A, problem.Y_D, cfg.lambda1, cfg.sc_iters)
    else:
        Z0 = np.asarray(problem, dtype=np.float64)
    u1, u2 = initial_penalties(Z0, cfg.u_floor)
    zeros = np.zeros_like(Z0)
    return SolverState(Z0.copy(), Z0.copy(), Z0.copy(), zeros, zeros.copy(), u1, u2)


def update_w3(K_DD, K_DA, W1, W2, L1, L2, u1, u2) -> np.ndarray:
    """Closed-form data-fit update ``(K_DD + (u1+u2) I)^-1 (K_DA + u1 W1 - L1 + u2 W2 - L2)``."""
    k = K_DD.shape[0]
    z = K_DA + u1 * W1 - L1 + u2 * W2 - L2
    return np.linalg.solve(K_DD + (u1 + u2) * np.eye(k), z)


def feasibility(state: SolverState) -> float:
    n1 = np.linalg.norm(state.W3 - state.W1)
    n2 = np.linalg.norm(state.W3 - state.W2)
    return float(max(n1, n2) / max(1.0, np.linalg.norm(state.W3)))


def ialm_step(state: SolverState, km: KernelMatrices, cfg: SolverConfig) -> SolverState:
    """One sweep: sparse copy, low-rank copy, data-fit copy, then multipliers."""
    u1, u2 = state.u1, state.u2
    W1 = _soft(state.W3 + state.L1 / u1, cfg.lambda1 / u1)
    W2 = singular_value_threshold(state.W3 + state.L2 / u2, cfg.lambda2 / u2)
    W3 = update_w3(km.K_DD, km.K_DA, W1, W2, state.L1, state.L2, u1, u2)
    L1 = state.L1 + u1 * (W3 - W1)
    L2 = state.L2 + u2 * (W3 - W2)
    return SolverState(W1, W2, W3, L1, L2, u1 * cfg.rho, u2 * cfg.rho, state.iter + 1)


def coding_objective(km: KernelMatrices, k_aa_trace: float, W, cfg: SolverConfig) -> float:
    fit = 0.5 * (k_aa_trace - 2.0 * np.sum(W * km.K_DA) + np.sum(W * (km.K_DD @ W)))
    nuc = np.linalg.svd(W, compute_uv=False).sum()
    return float(fit + cfg.lambda1 * np.abs(W).sum() + cfg.lambda2 * nuc)


def _solve(problem: CodingProblem, cfg: SolverConfig, kernel: KernelSpec | None):
    km = kernel_matrices(problem.Y_D, problem.Y_A, kernel)
    k_aa = problem.Y_A.shape[1] if kernel is not None else float(np.sum(problem.Y_A**2))
    state = init_state(problem, cfg)
    sc_weights = state.W3[:, 0].copy()
    trace = []
    first = np.inf
    f = np.inf
    try:
        while state.iter < cfg.max_iter:
            state = ialm_step(state, km, cfg)
            trace.append(coding_objective(km, k_aa, state.W3, cfg))
            f = feasibility(state)
            if state.iter == 1:
                first = f
            if f < cfg.tol:
                break
    except np.linalg.LinAlgError:
        return sc_weights, SolverDiagnostics(state.iter, np.inf, first, False, True, trace)
    w = state.W3[:, 0]
    if not np.all(np.isfinite(w)):
        return sc_weights, SolverDiagnostics(state.iter, f, first, False, True, trace)
    return w.copy(), SolverDiagnostics(state.iter, f, first, bool(f < cfg.tol), False, trace)


def klrsc_solve(problem: CodingProblem, cfg: SolverConfig) -> tuple[np.ndarray, SolverDiagnostics]:
    """Kernel low-rank sparse codes of the query (column 0 of ``W3``)."""
    return _solve(problem, cfg, cfg.kernel or KernelSpec())


def lrsc_solve(problem: CodingProblem, cfg: SolverConfig) -> tuple[np.ndarray, SolverDiagnostics]:
    """Same iteration as :func:`klrsc_solve` with linear gram matrices."""
    return _solve(problem, cfg, None)


# ---------------------------------------------------------------------------
# batched path used by the pipeline
# ---------------------------------------------------------------------------

@dataclass
class BatchStats:
    iterations: np.ndarray
    feasibility: np.ndarray
    first_feasibility: np.ndarray
    converged: np.ndarray
    fallback: np.ndarray


def code_batch(yd_rows: np.ndarray, ya_rows: np.ndarray, mode: str,
               cfg: SolverConfig) -> tuple[np.ndarray, BatchStats]:
    """Query weights for a batch of problems.

    ``yd_rows`` is (B, K_D, 4b) sub-dictionary atoms as rows, ``ya_rows``
    (B, K_N+1, 4b) with the query first.  Returns (B, K_D) weights.
    """
    b = yd_rows.shape[0]
    gram = np.matmul(yd_rows, yd_rows.transpose(0, 2, 1))
    lip = kernels.lipschitz_batch(gram)
    if mode == "SC" or b == 0:
        rhs = np.matmul(yd_rows, ya_rows[:, :1, :].transpose(0, 2, 1))
        w = kernels.ista_batch(gram, rhs, cfg.lambda1, cfg.sc_iters, lip)[:, :, 0]
        ones = np.ones(b, dtype=bool)
        return w, BatchStats(np.zeros(b, np.int64), np.zeros(b), np.zeros(b), ones, ~ones)

    rhs = np.matmul(yd_rows, ya_rows.transpose(0, 2, 1))
    z0 = kernels.ista_batch(gram, rhs, cfg.lambda1, cfg.sc_iters, lip)
    kernel = cfg.kernel if mode.startswith("KLRSC") else None
    if kernel is None:
        kdd, kda = gram, rhs
    else:
        kdd, kda = gram_blocks(yd_rows, ya_rows, kernel)
    try:
        w3, iters, feas, feas1 = kernels.ialm_batch(
            kdd, kda, z0, cfg.lambda1, cfg.lambda2, cfg.rho, cfg.tol, cfg.max_iter, cfg.u_floor)
    except np.linalg.LinAlgError:
        w3, iters, feas, feas1 = _ialm_one_by_one(kdd, kda, z0, cfg)
    w = w3[:, :, 0]
    bad = ~np.all(np.isfinite(w), axis=1)
    w = np.where(bad[:, None], z0[:, :, 0], w)
    converged = (feas < cfg.tol) & ~bad
    return w, BatchStats(iters, feas, feas1, converged, bad)


def _ialm_one_by_one(kdd, kda, z0, cfg):
    b = kdd.shape[0]
    w3 = np.full_like(z0, np.nan)
    iters = np.zeros(b, np.int64)
    feas = np.full(b, np.inf)
    feas1 = np.full(b, np.inf)
    for i in range(b):
        try:
            r = kernels.ialm_batch(kdd[i:i + 1], kda[i:i + 1], z0[i:i + 1], cfg.lambda1,
                                   cfg.lambda2, cfg.rho, cfg.tol, cfg.max_iter, cfg.u_floor)
        except np.linalg.LinAlgError:
            continue
        w3[i], iters[i], feas[i], feas1[i] = r[0][0], r[1][0], r[2][0], r[3][0]
    return w3, iters, feas, feas1
