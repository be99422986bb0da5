"""Self-example pyramids, patch features and the paired dictionary."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SrConfig
from .imgcore import Patch, gaussian_blur, patch_grid, patch_stack, resize_to, scaled_shape

log = logging.getLogger(__name__)

DICT_MAGIC = b"KLRSCDIC"
DICT_VERSION = 1


def blur_variance(n: int, sigma2: float, s: float, p: float) -> float:
    """Blur variance used to produce pyramid layer ``-n``."""
    return n * (sigma2 * math.log(s) / math.log(p))


@dataclass(frozen=True)
class PyramidPair:
    """``down_layers[k]`` is layer ``-(k+1)``; ``up_layers[k]`` is its aligned
    bicubic prediction from the next coarser layer."""

    down_layers: list[np.ndarray]
    up_layers: list[np.ndarray]
    scale: float
    blur_variances: list[float]

    @property
    def depth(self) -> int:
        return len(self.down_layers)


def _down_layer(img: np.ndarray, n: int, cfg: SrConfig) -> tuple[np.ndarray, float]:
    var = blur_variance(n, cfg.blur_sigma**2, cfg.s, cfg.p)
    shape = scaled_shape(img.shape, cfg.s**-n)
    return resize_to(gaussian_blur(img, var, cfg.blur_size), shape, cfg.bicubic_a), var


def build_pyramids(img: np.ndarray, cfg: SrConfig) -> PyramidPair:
    """Blur-and-shrink layers of ``img`` and their one-step bicubic predictions.

    Each layer ``-n`` is produced directly from ``img`` (not by iterating).
    The prediction of layer ``-n`` upsamples layer ``-(n+1)`` to the exact
    dimensions of layer ``-n`` so the two align pixel for pixel.
    """
    depth = cfg.n_layers
    while depth > 0:
        deepest = scaled_shape(img.shape, cfg.s**-depth)
        source = scaled_shape(img.shape, cfg.s ** -(depth + 1))
        if min(deepest) >= cfg.patch_size and min(source) >= 4:
            break
        depth -= 1
    if depth < cfg.n_layers:
        log.warning("image %s too small for %d pyramid layers; using %d", img.shape, cfg.n_layers, depth)
    if depth == 0:
        return PyramidPair([], [], cfg.s, [])

    layers, variances = [], []
    for n in range(1, depth + 2):
        layer, var = _down_layer(img, n, cfg)
        layers.append(layer)
        variances.append(var)
    down = layers[:depth]
    up = [resize_to(layers[k + 1], layers[k].shape, cfg.bicubic_a) for k in range(depth)]
    for d, u in zip(down, up):
        assert d.shape == u.shape
    return PyramidPair(down, up, cfg.s, variances[:depth])


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnFeature:
    vector: np.ndarray
    norm: float
    mean: float

    @property
    def flat(self) -> bool:
        return not self.vector.any()


def gradient_responses(stack: np.ndarray) -> np.ndarray:
    """First/second-order horizontal and vertical differences of each patch.

    ``stack`` is ``(P, b_s, b_s)``; the result is ``(P, 4 * b_s**2)`` with the
    four same-size responses concatenated in the order [1,-1], its
    transpose, [-1,2,-1], its transpose.
    """
    x = np.asarray(stack, dtype=np.float64)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="symmetric")
    c = xp[:, 1:-1, 1:-1]
    left, right = xp[:, 1:-1, :-2], xp[:, 1:-1, 2:]
    up, down = xp[:, :-2, 1:-1], xp[:, 2:, 1:-1]
    f1 = c - left
    f2 = c - up
    f3 = 2.0 * c - left - right
    f4 = 2.0 * c - up - down
    n = x.shape[0]
    return np.concatenate([f.reshape(n, -1) for f in (f1, f2, f3, f4)], axis=1)


def normalize_rows(vectors: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalise rows; rows with norm below ``eps`` become zero."""
    norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors))
    out = np.zeros_like(vectors)
    ok = norms >= eps
    out[ok] = vectors[ok] / norms[ok, None]
    return out, norms


def learn_features(stack: np.ndarray, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched learning features: (unit vectors, original norms, patch means)."""
    vecs, norms = normalize_rows(gradient_responses(stack), eps)
    return vecs, norms, stack.reshape(stack.shape[0], -1).mean(axis=1)


def learn_feature(patch: Patch | np.ndarray, eps: float = 1e-8) -> LearnFeature:
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    if pixels.shape[0] < 3:
        raise ValueError("gradient features need patches of at least 3x3")
    vecs, norms, means = learn_features(pixels[None], eps)
    return LearnFeature(vecs[0], float(norms[0]), float(means[0]))


def recon_features(stack: np.ndarray, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Mean-removed, unit-normalised intensity vectors and their norms."""
    flat = stack.reshape(stack.shape[0], -1)
    return normalize_rows(flat - flat.mean(axis=1, keepdims=True), eps)


# ---------------------------------------------------------------------------
# dictionary
# ---------------------------------------------------------------------------

class EmptyDictionaryError(ValueError):
    """The input has no textured patch at any pyramid level."""


@dataclass(frozen=True)
class SelfDictionary:
    """Paired atoms: ``L`` (4b x K) learning features, ``H`` (b x K) patches.

    Both matrices are stored column-major so that ``L.T`` / ``H.T`` are
    contiguous row-per-atom views.
    """

    L: np.ndarray
    H: np.ndarray
    norms: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        if self.L.shape[1] != self.H.shape[1]:
            raise ValueError("L and H must have the same number of atoms")

    @property
    def K(self) -> int:
        return self.L.shape[1]

    @property
    def patch_size(self) -> int:
        return int(round(math.sqrt(self.H.shape[0])))

    @property
    def learn_atoms(self) -> np.ndarray:
        return self.L.T

    @property
    def recon_atoms(self) -> np.ndarray:
        return self.H.T

    def save(self, path: str | Path) -> None:
        """Flat binary: magic, version, (4b, b, K), then L, H, norms, means as
        little-endian float64, matrices column-major."""
        with open(path, "wb") as fh:
            fh.write(DICT_MAGIC)
            fh.write(struct.pack("<IQQQ", DICT_VERSION, self.L.shape[0], self.H.shape[0], self.K))
            for arr in (self.L, self.H):
                fh.write(np.asarray(arr, dtype="<f8").tobytes(order="F"))
            for arr in (self.norms, self.means):
                fh.write(np.asarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "SelfDictionary":
        data = Path(path).read_bytes()
        if data[:8] != DICT_MAGIC:
            raise ValueError(f"{path}: not a dictionary file")
        version, dl, dh, k = struct.unpack_from("<IQQQ", data, 8)
        if version != DICT_VERSION:
            raise ValueError(f"{path}: unsupported dictionary version {version}")
        off = 8 + struct.calcsize("<IQQQ")
        need = off + 8 * (dl * k + dh * k + 2 * k)
        if len(data) != need:
            raise ValueError(f"{path}: truncated or oversized ({len(data)} bytes, expected {need})")
        flat = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
        L = flat[: dl * k].reshape((dl, k), order="F")
        H = flat[dl * k : dl * k + dh * k].reshape((dh, k), order="F")
        rest = flat[dl * k + dh * k :]
        return cls(np.asfortranarray(L), np.asfortranarray(H), rest[:k].copy(), rest[k:].copy())


def build_dictionary(pyr: PyramidPair, cfg: SrConfig) -> SelfDictionary:
    """Harvest paired atoms from every (down, up) layer pair.

    Locations where either the learning feature or the mean-removed
    high-resolution patch is flat are skipped.
    """
    learn, recon, norms, means = [], [], [], []
    for down, up in zip(pyr.down_layers, pyr.up_layers):
        rows, cols = patch_grid(down.shape, cfg.patch_size, cfg.overlap)
        lf, ln, lm = learn_features(patch_stack(up, rows, cols, cfg.patch_size), cfg.flat_eps)
        hf, hn = recon_features(patch_stack(down, rows, cols, cfg.patch_size), cfg.flat_eps)
        keep = (ln >= cfg.flat_eps) & (hn >= cfg.flat_eps)
        learn.append(lf[keep])
        recon.append(hf[keep])
        norms.append(ln[keep])
        means.append(lm[keep])
    if not learn or sum(len(x) for x in learn) == 0:
        raise EmptyDictionaryError("self-example dictionary is empty (image has no texture at any pyramid level)")
    return SelfDictionary(
        np.asfortranarray(np.concatenate(learn).T),
        np.asfortranarray(np.concatenate(recon).T),
        np.concatenate(norms),
        np.concatenate(means),
    )
