"""Gradual magnification driver."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import SrConfig, apply_overrides, load_config  # noqa: F401  (re-exported)
from .imgcore import merge_patch_stack, patch_grid, patch_stack, resize_to, scaled_shape
from .pyramid import EmptyDictionaryError, SelfDictionary, blur_variance, build_dictionary, build_pyramids, learn_features, recon_features
from .recon import Degradation, learn_ar_operator, reconstruct_batch, refine_layer
from .search import knn_dictionary_all, knn_nonlocal_all
from .solver import code_batch

log = logging.getLogger(__name__)


def num_magnifications(p: float, s: float) -> int:
    """Smallest ``n`` with ``s**n >= p`` (to within rounding of the inputs)."""
    if not (p > 1 and s > 1):
        raise ValueError("p and s must both exceed 1")
    n = max(1, math.ceil(math.log(p) / math.log(s)))
    while n > 1 and s ** (n - 1) >= p * (1 - 1e-12):
        n -= 1
    while s**n < p * (1 - 1e-12):
        n += 1
    return n


@dataclass
class LayerRecord:
    index: int
    height: int
    width: int
    seconds: float
    patches: int
    flat_patches: int
    mean_iterations: float
    max_iterations: int
    nonconverged: int
    fallbacks: int
    refine_iterations: int
    refine_diverged: bool


@dataclass
class RunReport:
    mode: str
    input_shape: tuple[int, int]
    output_shape: tuple[int, int]
    dictionary_atoms: int
    layers: list[LayerRecord] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def flags(self) -> list[str]:
        out = []
        for rec in self.layers:
            if rec.nonconverged:
                out.append(f"layer {rec.index}: {rec.nonconverged} patches hit the iteration cap")
            if rec.fallbacks:
                out.append(f"layer {rec.index}: {rec.fallbacks} patches fell back to SC weights")
            if rec.refine_diverged:
                out.append(f"layer {rec.index}: refinement diverged")
        return out

    def to_jsonl(self) -> str:
        head = {"mode": self.mode, "input_shape": list(self.input_shape),
                "output_shape": list(self.output_shape), "dictionary_atoms": self.dictionary_atoms,
                "seconds": self.seconds, "flags": self.flags}
        return "\n".join([json.dumps(head)] + [json.dumps(asdict(r)) for r in self.layers]) + "\n"


@dataclass
class LayerResult:
    image: np.ndarray
    merged: np.ndarray
    record: LayerRecord


def code_layer(up: np.ndarray, dictionary: SelfDictionary, cfg: SrConfig,
               pool: ThreadPoolExecutor | None = None):
    """Sparse-code every patch of an interpolated layer and merge the estimates.

    Returns ``(merged, stats)`` where ``stats`` is a dict of solver counters.
    """
    ps = cfg.patch_size
    rows, cols = patch_grid(up.shape, ps, cfg.overlap)
    stack = patch_stack(up, rows, cols, ps)
    feats, gnorm, means = learn_features(stack, cfg.flat_eps)
    if cfg.recon_scale == "intensity":
        _, scale = recon_features(stack, cfg.flat_eps)
    else:
        scale = gnorm
    active = np.flatnonzero(gnorm >= cfg.flat_eps)
    out = stack.copy()
    stats = {"patches": len(rows), "flat": len(rows) - len(active), "iters": [], "nonconv": 0, "fallback": 0}
    if active.size and dictionary.K == 0:
        log.warning("no dictionary atoms; %d textured patches keep their interpolated pixels", active.size)
        active = active[:0]
    if active.size == 0:
        return merge_patch_stack(out, rows, cols, up.shape), stats

    af = feats[active]
    atom_idx, _ = knn_dictionary_all(af, dictionary, cfg.k_dict)
    use_nl = cfg.mode != "SC" and cfg.k_nonlocal > 0
    if use_nl:
        nl_idx, _ = knn_nonlocal_all(af, cfg.k_nonlocal)
    solver_cfg = cfg.solver
    atoms = dictionary.learn_atoms

    def run(lo: int):
        hi = min(lo + cfg.chunk, active.size)
        sel = slice(lo, hi)
        q = af[sel][:, None, :]
        ya = np.concatenate([q, af[nl_idx[sel]]], axis=1) if use_nl else q
        yd = atoms[atom_idx[sel]]
        w, st = code_batch(yd, ya, cfg.mode, solver_cfg)
        gi = active[sel]
        hr = reconstruct_batch(w, atom_idx[sel], dictionary, scale[gi], means[gi])
        return lo, hi, hr, st

    starts = range(0, active.size, cfg.chunk)
    results = pool.map(run, starts) if pool is not None else map(run, starts)
    for lo, hi, hr, st in results:
        out[active[lo:hi]] = hr
        if cfg.mode != "SC":
            stats["iters"].append(st.iterations)
            stats["nonconv"] += int(np.sum(~st.converged & ~st.fallback))
            stats["fallback"] += int(np.sum(st.fallback))
    return merge_patch_stack(out, rows, cols, up.shape), stats


def magnify_once(prev: np.ndarray, index: int, I0: np.ndarray, history: list[np.ndarray],
                 dictionary: SelfDictionary, cfg: SrConfig,
                 pool: ThreadPoolExecutor | None = None) -> LayerResult:
    """One ``x s`` step: interpolate, code, merge, refine."""
    t0 = time.perf_counter()
    shape = scaled_shape(prev.shape, cfg.s)
    up = resize_to(prev, shape, cfg.bicubic_a)
    merged, st = code_layer(up, dictionary, cfg, pool)

    ar = None
    if cfg.use_ar:
        pool_layers = history if history else [up]
        ar = learn_ar_operator(merged, pool_layers, cfg.ar_neighbors, cfg.ar_eta)
    var = blur_variance(index, cfg.blur_sigma**2, cfg.s, cfg.p)
    deg = Degradation(shape, I0.shape, var, cfg.blur_size, cfg.bicubic_a)
    anchor = up if cfg.refine_anchor == "interpolated" else merged
    rcfg = cfg.refine
    if cfg.data_norm == "area":
        rcfg = dataclasses.replace(rcfg, data_weight=(shape[0] * shape[1]) / I0.size)
    refined, info = refine_layer(merged, I0, ar, rcfg, deg, anchor)

    iters = np.concatenate(st["iters"]) if st["iters"] else np.zeros(0, np.int64)
    rec = LayerRecord(
        index=index, height=shape[0], width=shape[1], seconds=time.perf_counter() - t0,
        patches=st["patches"], flat_patches=st["flat"],
        mean_iterations=float(iters.mean()) if iters.size else 0.0,
        max_iterations=int(iters.max()) if iters.size else 0,
        nonconverged=st["nonconv"], fallbacks=st["fallback"],
        refine_iterations=info.iterations, refine_diverged=info.diverged,
    )
    return LayerResult(refined, merged, rec)


def self_dictionary(I0: np.ndarray, cfg: SrConfig) -> SelfDictionary:
    """Dictionary harvested from the input's pyramids; empty for textureless input."""
    try:
        return build_dictionary(build_pyramids(I0, cfg), cfg)
    except EmptyDictionaryError:
        # flat input: every patch bypasses coding, so no atoms are needed
        b = cfg.patch_size**2
        return SelfDictionary(np.zeros((4 * b, 0)), np.zeros((b, 0)), np.zeros(0), np.zeros(0))


def super_resolve(I_L: np.ndarray, cfg: SrConfig,
                  dictionary: SelfDictionary | None = None) -> tuple[np.ndarray, RunReport]:
    """Magnify a single-channel image by ``cfg.p``."""
    t0 = time.perf_counter()
    I0 = np.asarray(I_L, dtype=np.float64)
    if min(I0.shape) < 2 * cfg.patch_size:
        raise ValueError(f"input {I0.shape} is smaller than twice the patch size")
    target = scaled_shape(I0.shape, cfg.p)
    if dictionary is None:
        dictionary = self_dictionary(I0, cfg)
    report = RunReport(cfg.mode, I0.shape, target, dictionary.K)

    history: list[np.ndarray] = []
    layer = I0
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for i in range(1, num_magnifications(cfg.p, cfg.s) + 1):
            res = magnify_once(layer, i, I0, history, dictionary, cfg, pool)
            layer = res.image
            history.append(layer)
            report.layers.append(res.record)
            log.info("layer %d %s done in %.1fs", i, layer.shape, res.record.seconds)
    finally:
        if pool is not None:
            pool.shutdown()
    out = layer if layer.shape == target else resize_to(layer, target, cfg.bicubic_a)
    report.seconds = time.perf_counter() - t0
    return out, report


def upscale_color(raster: np.ndarray, cfg: SrConfig) -> tuple[np.ndarray, RunReport]:
    """Super-resolve the luma of an 8-bit raster; chroma is bicubic-upscaled."""
    from .imgcore import luma_chroma_to_rgb, rgb_to_luma_chroma

    luma, chroma = rgb_to_luma_chroma(raster)
    hr, report = super_resolve(luma, cfg)
    if chroma is not None:
        chroma = np.stack([resize_to(chroma[..., c], hr.shape, cfg.bicubic_a) for c in range(2)], axis=2)
    return luma_chroma_to_rgb(hr, chroma), report
