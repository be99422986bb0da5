import csv
import io
import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from oracles import naive_blur, naive_cubic
from klrsc.bench import (CSV_FIELDS, MetricReport, compatible_crop, degrade, histogram,
                         nuclear_norm_study, psnr, run_benchmark, scn_study, ssim)
from klrsc.config import SrConfig
from klrsc.imgcore import to_uint8, write_image


# -- degradation ------------------------------------------------------------------

def test_degrade_constant():
    assert np.allclose(degrade(np.full((40, 40), 0.3), 3), 0.3, atol=1e-12)


@pytest.mark.parametrize("p,size", [(2, 128), (3, 85), (4, 64)])
def test_degrade_dimensions(p, size):
    assert degrade(np.zeros((256, 256)), p).shape == (size, size)


def test_degrade_matches_scalar_oracle(rng):
    gt = rng.random((30, 27))
    ref = naive_cubic(naive_blur(gt, 1.6, 7), 10, 9)
    assert np.abs(degrade(gt, 3) - ref).max() < 1e-10


def test_degrade_deterministic(rng):
    gt = rng.random((33, 33))
    assert np.array_equal(degrade(gt, 3), degrade(gt, 3))


def test_compatible_crop():
    assert compatible_crop(np.zeros((256, 256)), 3).shape == (255, 255)
    assert compatible_crop(np.zeros((256, 100)), 2).shape == (256, 100)


# -- metrics ------------------------------------------------------------------------

def test_psnr_examples(rng):
    a = rng.random((16, 16))
    assert psnr(a, a) == 99.0
    assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)
    b = a.copy()
    b[:8] += 2 / 255
    assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / 2), abs=1e-9)


def test_psnr_symmetric_and_shape_checked(rng):
    a, b = rng.random((9, 9)), rng.random((9, 9))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, np.zeros((9, 8)))


def test_ssim_identity_and_symmetry(rng):
    a, b = rng.random((24, 30)), rng.random((24, 30))
    assert ssim(a, a) == 1.0
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    assert ssim(a, 1 - a) < 1.0


def test_ssim_errors(rng):
    with pytest.raises(ValueError):
        ssim(rng.random((10, 10)), rng.random((10, 10)))
    with pytest.raises(ValueError):
        ssim(rng.random((12, 12)), rng.random((12, 13)))


def test_ssim_matches_reference(rng):
    for _ in range(10):
        a = rng.random((40, 48))
        b = np.clip(a + rng.normal(scale=rng.uniform(0.02, 0.3), size=a.shape), 0, 1)
        ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
        assert abs(ssim(a, b) - ref) < 1e-4


# -- diagnostics ----------------------------------------------------------------------

def test_scn_identical_pairs_is_zero(small_scene):
    out = scn_study(small_scene, SrConfig(), max_pairs=60, hr=small_scene, lr=small_scene)
    for v in out.values():
        assert len(v) > 0 and np.abs(v).max() < 1e-12


def test_scn_reproducible(small_scene):
    a = scn_study(small_scene, SrConfig(), modes=("SC", "LRSC"), max_pairs=40)
    b = scn_study(small_scene, SrConfig(), modes=("SC", "LRSC"), max_pairs=40)
    for m in a:
        assert np.array_equal(a[m], b[m]) and np.all(a[m] >= 0)


def test_nuclear_norm_study_bounds(small_scene):
    v = nuclear_norm_study(small_scene, SrConfig())
    assert np.all(v <= 21 + 1e-8) and np.all(v >= 1 - 1e-9)
    assert np.array_equal(v, nuclear_norm_study(small_scene, SrConfig()))
    counts, edges = histogram(v, 21, 21.0)
    assert counts.sum() == len(v) and edges[-1] == 21.0


def test_nuclear_norm_repeated_texture_collapses():
    # a periodic image repeats each feature many times, so nonlocal matrices
    # hold few distinct columns and the norm collapses far below 21
    tile = np.random.default_rng(3).random((4, 4))
    img = np.tile(tile, (12, 12))
    v = nuclear_norm_study(img, SrConfig(k_nonlocal=20))
    assert np.median(v) < 0.5 * 21


# -- report -----------------------------------------------------------------------------

def sample_report():
    rows = [
        {"image": "a", "mode": "bicubic", "p": 3, "psnr_db": 24.0, "ssim": 0.70, "seconds": 0.1},
        {"image": "a", "mode": "SC", "p": 3, "psnr_db": 25.0, "ssim": 0.75, "seconds": 1.0},
        {"image": "b", "mode": "bicubic", "p": 3, "psnr_db": 26.0, "ssim": 0.80, "seconds": 0.1},
        {"image": "b", "mode": "SC", "p": 3, "psnr_db": 28.5, "ssim": 0.90, "seconds": 2.0},
    ]
    return MetricReport(rows)


def test_report_averages_and_csv():
    rep = sample_report()
    assert rep.methods == ["bicubic", "SC"] and rep.images == ["a", "b"]
    assert abs(rep.averages()["SC"]["psnr_db"] - 26.75) < 1e-12
    parsed = list(csv.reader(io.StringIO(rep.to_csv())))
    assert tuple(parsed[0]) == CSV_FIELDS == ("image", "mode", "p", "psnr_db", "ssim", "seconds")
    assert len(parsed) == 5
    table = rep.table()
    assert "Avg." in table and "26.750" in table


def test_run_benchmark_small(tmp_path, camera):
    write_image(tmp_path / "x.png", to_uint8(camera[:40, :40]))
    (tmp_path / "notes.txt").write_text("ignored")
    rep = run_benchmark(tmp_path, SrConfig(p=2, refine_iters=5), ["SC"], csv_path=tmp_path / "o.csv")
    assert rep.methods == ["bicubic", "SC"] and not rep.failures
    assert (tmp_path / "o.csv").read_text().startswith("image,mode,p,psnr_db,ssim,seconds\n")


def test_run_benchmark_records_failures(tmp_path, camera):
    write_image(tmp_path / "ok.png", to_uint8(camera[:40, :40]))
    (tmp_path / "bad.png").write_bytes(b"not an image")
    rep = run_benchmark(tmp_path, SrConfig(p=2, refine_iters=2), ["SC"])
    assert [f[0] for f in rep.failures] == ["bad.png"] and rep.images == ["ok"]


def test_run_benchmark_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_benchmark(tmp_path, SrConfig(), ["SC"])
