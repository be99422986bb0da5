"""Degradation model, quality metrics, coding diagnostics and the benchmark harness."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import SrConfig
from .imgcore import (gaussian_blur, gaussian_kernel_1d, patch_grid, patch_stack, read_image,
                      resize_to, rgb_to_luma_chroma, round_half_away, scaled_shape)
from .pipeline import self_dictionary, super_resolve
from .pyramid import build_dictionary, build_pyramids, learn_features
from .search import knn_dictionary_all, knn_nonlocal_all
from .solver import KernelSpec, code_batch, nuclear_norms_mapped

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
CSV_FIELDS = ("image", "mode", "p", "psnr_db", "ssim", "seconds")
IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}
DESK_DIR = Path(__file__).parent / "data" / "desk"


# ---------------------------------------------------------------------------
# degradation and metrics
# ---------------------------------------------------------------------------

def degrade(gt: np.ndarray, p: float, blur_sigma: float = 1.6, kernel_size: int = 7,
            a: float = -0.5) -> np.ndarray:
    """Gaussian blur followed by bicubic downsampling by ``p``."""
    blurred = gaussian_blur(gt, blur_sigma**2, kernel_size)
    return resize_to(blurred, scaled_shape(gt.shape, 1.0 / p), a)


def compatible_crop(gt: np.ndarray, p: float) -> np.ndarray:
    """Crop so that shrinking by ``p`` and magnifying back lands on the same size."""
    def fit(n):
        while n > 0 and round_half_away(round_half_away(n / p) * p) != n:
            n -= 1
        return n

    h, w = fit(gt.shape[0]), fit(gt.shape[1])
    return gt[:h, :w]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for data on [0, 1]; identical inputs give 99 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(img, g.size, axis=0)
    tmp = windows @ g
    windows = np.lib.stride_tricks.sliding_window_view(tmp, g.size, axis=1)
    return windows @ g


def ssim(a: np.ndarray, b: np.ndarray, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over all fully-covered 11x11 Gaussian windows."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < win:
        raise ValueError(f"images must be at least {win}x{win}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    g = gaussian_kernel_1d(sigma**2, win)
    mu_a, mu_b = _valid_filter(a, g), _valid_filter(b, g)
    saa = _valid_filter(a * a, g) - mu_a * mu_a
    sbb = _valid_filter(b * b, g) - mu_b * mu_b
    sab = _valid_filter(a * b, g) - mu_a * mu_b
    c1, c2 = k1**2, k2**2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _even_subset(n: int, k: int | None) -> np.ndarray:
    if k is None or k >= n:
        return np.arange(n)
    return np.unique(np.floor(np.linspace(0, n - 1, k)).astype(np.int64))


def scn_pairs(gt: np.ndarray, cfg: SrConfig, step: float = 1.25):
    """Aligned (degraded, clean) images for the coding-noise experiment."""
    blurred = gaussian_blur(gt, cfg.blur_sigma**2, cfg.blur_size)
    lr = resize_to(resize_to(blurred, scaled_shape(gt.shape, 1.0 / step), cfg.bicubic_a),
                   gt.shape, cfg.bicubic_a)
    return lr, gt


def scn_study(gt: np.ndarray, cfg: SrConfig, modes: Sequence[str] = ("SC", "LRSC", "KLRSC"),
              max_pairs: int | None = 2500, hr: np.ndarray | None = None,
              lr: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Per-patch ``||w_LR - w_HR||_2`` for each coding mode.

    Both members of a pair are coded against the sub-dictionary selected by
    the degraded feature; each member's nonlocal neighbours come from its
    own image.  The dictionary is harvested from the degraded image.
    """
    if lr is None or hr is None:
        lr, hr = scn_pairs(gt, cfg)
    ps = cfg.patch_size
    rows, cols = patch_grid(lr.shape, ps, cfg.overlap)
    fl, nl_, _ = learn_features(patch_stack(lr, rows, cols, ps), cfg.flat_eps)
    fh, nh_, _ = learn_features(patch_stack(hr, rows, cols, ps), cfg.flat_eps)
    ok = np.flatnonzero((nl_ >= cfg.flat_eps) & (nh_ >= cfg.flat_eps))
    fl, fh = fl[ok], fh[ok]
    dictionary = build_dictionary(build_pyramids(lr, cfg), cfg)
    pick = _even_subset(len(ok), max_pairs)
    atom_idx, _ = knn_dictionary_all(fl[pick], dictionary, cfg.k_dict)
    yd_all = dictionary.learn_atoms
    need_nl = any(m != "SC" for m in modes) and cfg.k_nonlocal > 0
    if need_nl:
        nl_l = knn_nonlocal_all(fl, cfg.k_nonlocal)[0][pick]
        nl_h = knn_nonlocal_all(fh, cfg.k_nonlocal)[0][pick]

    out = {}
    for mode in modes:
        solver_cfg = cfg.replace(mode=mode).solver
        res = []
        for lo in range(0, len(pick), cfg.chunk):
            sel = slice(lo, lo + cfg.chunk)
            yd = yd_all[atom_idx[sel]]
            ql = fl[pick[sel]][:, None, :]
            qh = fh[pick[sel]][:, None, :]
            if mode != "SC" and need_nl:
                ql = np.concatenate([ql, fl[nl_l[sel]]], axis=1)
                qh = np.concatenate([qh, fh[nl_h[sel]]], axis=1)
            wl, _ = code_batch(yd, ql, mode, solver_cfg)
            wh, _ = code_batch(yd, qh, mode, solver_cfg)
            res.append(np.sqrt(np.sum((wl - wh) ** 2, axis=1)))
        out[mode] = np.concatenate(res) if res else np.zeros(0)
    return out


def nuclear_norm_study(img: np.ndarray, cfg: SrConfig, max_samples: int | None = None,
                       chunk: int = 1024) -> np.ndarray:
    """Nuclear norm of every kernel-mapped (query + K_N neighbours) feature matrix."""
    ps = cfg.patch_size
    rows, cols = patch_grid(img.shape, ps, cfg.overlap)
    feats, norms, _ = learn_features(patch_stack(img, rows, cols, ps), cfg.flat_eps)
    feats = feats[norms >= cfg.flat_eps]
    if len(feats) < cfg.k_nonlocal + 1:
        raise ValueError("image has too few textured patches for the nonlocal matrices")
    pick = _even_subset(len(feats), max_samples)
    nl = knn_nonlocal_all(feats, cfg.k_nonlocal)[0][pick]
    kernel = KernelSpec(cfg.sigma_g)
    out = []
    for lo in range(0, len(pick), chunk):
        sel = slice(lo, lo + chunk)
        y = np.concatenate([feats[pick[sel]][:, None, :], feats[nl[sel]]], axis=1)
        out.append(nuclear_norms_mapped(y, kernel))
    return np.concatenate(out)


def histogram(values: np.ndarray, bins: int = 21, upper: float | None = None):
    """(counts, edges) on ``[0, upper]``; ``upper`` defaults to the data maximum."""
    values = np.asarray(values, dtype=np.float64)
    hi = upper if upper is not None else (float(values.max()) if values.size else 1.0)
    return np.histogram(values, bins=bins, range=(0.0, max(hi, 1e-12)))


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def methods(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r["mode"] not in seen:
                seen.append(r["mode"])
        return seen

    @property
    def images(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r["image"] not in seen:
                seen.append(r["image"])
        return seen

    def averages(self) -> dict[str, dict[str, float]]:
        out = {}
        for m in self.methods:
            sel = [r for r in self.rows if r["mode"] == m]
            out[m] = {k: float(np.mean([r[k] for r in sel])) for k in ("psnr_db", "ssim", "seconds")}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: r[k] for k in CSV_FIELDS})
        return buf.getvalue()

    def table(self) -> str:
        methods = self.methods
        lookup = {(r["image"], r["mode"]): r for r in self.rows}
        width = max([len("Image")] + [len(i) for i in self.images]) + 2
        head = "Image".ljust(width) + "".join(m.rjust(12) for m in methods)
        lines = [head, "-" * len(head)]

        def fmt(vals, spec):
            return "".join((format(v, spec) if v is not None else "-").rjust(12) for v in vals)

        for img in self.images:
            ps = [lookup.get((img, m), {}).get("psnr_db") for m in methods]
            ss = [lookup.get((img, m), {}).get("ssim") for m in methods]
            lines.append(img.ljust(width) + fmt(ps, ".3f"))
            lines.append("".ljust(width) + fmt(ss, ".4f"))
        avg = self.averages()
        lines.append("-" * len(head))
        lines.append("Avg.".ljust(width) + fmt([avg[m]["psnr_db"] for m in methods], ".3f"))
        lines.append("".ljust(width) + fmt([avg[m]["ssim"] for m in methods], ".4f"))
        return "\n".join(lines)


def load_luma(path: str | Path) -> np.ndarray:
    return rgb_to_luma_chroma(read_image(path))[0]


def list_images(image_dir: str | Path) -> list[Path]:
    return sorted(p for p in Path(image_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def evaluate_image(path: Path, cfg: SrConfig, modes: Iterable[str]) -> list[dict]:
    gt = compatible_crop(load_luma(path), cfg.p)
    lr = degrade(gt, cfg.p, cfg.blur_sigma, cfg.blur_size, cfg.bicubic_a)
    rows = []
    t0 = time.perf_counter()
    bic = np.clip(resize_to(lr, gt.shape, cfg.bicubic_a), 0.0, 1.0)
    rows.append(_row(path.stem, "bicubic", cfg.p, gt, bic, time.perf_counter() - t0))
    dictionary = None
    for mode in modes:
        t0 = time.perf_counter()
        mcfg = cfg.replace(mode=mode)
        if dictionary is None:
            dictionary = self_dictionary(lr, mcfg)
        sr, _ = super_resolve(lr, mcfg, dictionary)
        rows.append(_row(path.stem, mode, cfg.p, gt, np.clip(sr, 0.0, 1.0), time.perf_counter() - t0))
        log.info("%s %s: %.3f dB", path.stem, mode, rows[-1]["psnr_db"])
    return rows


def _row(image, mode, p, gt, est, seconds) -> dict:
    return {"image": image, "mode": mode, "p": p, "psnr_db": psnr(gt, est),
            "ssim": ssim(gt, est), "seconds": seconds}


def run_benchmark(image_dir: str | Path, cfg: SrConfig, modes: Sequence[str],
                  csv_path: str | Path | None = None, workers: int = 1) -> MetricReport:
    """Degrade, super-resolve and score every image in ``image_dir``."""
    paths = list_images(image_dir)
    if not paths:
        raise FileNotFoundError(f"no images found in {image_dir}")
    report = MetricReport()
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            futs = [(p, ex.submit(evaluate_image, p, cfg, list(modes))) for p in paths]
            results = []
            for p, f in futs:
                try:
                    results.append(f.result())
                except Exception as exc:  # noqa: BLE001 - recorded, run continues
                    report.failures.append((p.name, str(exc)))
    else:
        results = []
        for p in paths:
            try:
                results.append(evaluate_image(p, cfg, modes))
            except Exception as exc:  # noqa: BLE001
                log.error("%s failed: %s", p.name, exc)
                report.failures.append((p.name, str(exc)))
    for rows in results:
        report.rows.extend(rows)
    if csv_path is not None:
        Path(csv_path).write_text(report.to_csv())
    return report
