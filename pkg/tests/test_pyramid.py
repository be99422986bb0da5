import logging
from types import SimpleNamespace

import numpy as np
import pytest

from klrsc.config import SrConfig
from klrsc.imgcore import patch_grid, patch_stack
from klrsc.pyramid import (SelfDictionary, blur_variance, build_dictionary, build_pyramids,
                           gradient_responses, learn_feature, learn_features, recon_features)


def test_blur_variance_examples():
    v1 = blur_variance(1, 2.56, 1.25, 3)
    assert v1 == pytest.approx(2.56 * np.log(1.25) / np.log(3), rel=1e-15)
    assert v1 == pytest.approx(0.51996, abs=2e-5)
    assert blur_variance(2, 2.56, 1.25, 3) == 2 * v1
    assert blur_variance(1, 2.56, 2.0, 2.0) == pytest.approx(2.56, rel=1e-15)
    vs = [blur_variance(n, 2.56, 1.25, 3) for n in range(1, 8)]
    assert all(b > a for a, b in zip(vs, vs[1:]))


def test_layer_sizes_256(rng):
    pyr = build_pyramids(rng.random((256, 256)), SrConfig())
    assert [d.shape[0] for d in pyr.down_layers] == [205, 164, 131, 105]
    for d, u in zip(pyr.down_layers, pyr.up_layers):
        assert d.shape == u.shape


def test_constant_input_constant_layers():
    pyr = build_pyramids(np.full((64, 64), 0.25), SrConfig())
    for layer in pyr.down_layers + pyr.up_layers:
        assert np.abs(layer - 0.25).max() < 1e-12


def test_zero_depth_gives_empty_pyramid_and_dictionary_error(rng):
    with pytest.raises(ValueError):
        SrConfig(n_layers=0)
    # the builders themselves accept a degenerate depth
    cfg = SimpleNamespace(**{**vars(SrConfig()), "n_layers": 0})
    pyr = build_pyramids(rng.random((64, 64)), cfg)
    assert pyr.depth == 0
    with pytest.raises(ValueError):
        build_dictionary(pyr, cfg)


def test_depth_reduced_for_small_input(rng, caplog):
    with caplog.at_level(logging.WARNING):
        pyr = build_pyramids(rng.random((12, 12)), SrConfig())
    assert pyr.depth < 4
    assert min(pyr.down_layers[-1].shape) >= 7
    assert "pyramid" in caplog.text


def test_pyramids_deterministic(camera):
    a = build_pyramids(camera[:80, :80], SrConfig())
    b = build_pyramids(camera[:80, :80].copy(), SrConfig())
    for x, y in zip(a.down_layers + a.up_layers, b.down_layers + b.up_layers):
        assert np.array_equal(x, y)


def test_constant_patch_is_flat():
    f = learn_feature(np.full((7, 7), 0.4))
    assert f.flat and f.norm == 0.0 and f.mean == pytest.approx(0.4)


def test_ramp_patch_responses():
    ramp = np.tile(np.arange(7) / 7.0, (7, 1))
    r = gradient_responses(ramp[None])[0].reshape(4, 7, 7)
    assert np.allclose(r[0][:, 1:], 1 / 7.0)  # first difference constant away from the mirrored edge
    assert np.allclose(r[2][:, 1:-1], 0.0)  # second difference vanishes in the interior
    assert np.allclose(r[1], 0.0) and np.allclose(r[3], 0.0)


def test_filters_match_direct_convolution(rng):
    p = rng.random((7, 7))
    pad = np.pad(p, 1, mode="symmetric")
    f1 = np.array([[pad[i + 1, j + 1] - pad[i + 1, j] for j in range(7)] for i in range(7)])
    f4 = np.array([[2 * pad[i + 1, j + 1] - pad[i, j + 1] - pad[i + 2, j + 1] for j in range(7)]
                   for i in range(7)])
    r = gradient_responses(p[None])[0].reshape(4, 7, 7)
    assert np.allclose(r[0], f1, atol=1e-15) and np.allclose(r[3], f4, atol=1e-15)


def test_feature_unit_norm(rng):
    vecs, norms, means = learn_features(rng.random((50, 7, 7)))
    assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-12)
    assert vecs.shape == (50, 196) and np.all(norms > 0)


def test_dictionary_structure(camera):
    img = camera[40:168, 40:168]
    cfg = SrConfig()
    pyr = build_pyramids(img, cfg)
    d = build_dictionary(pyr, cfg)
    assert d.L.shape[1] == d.H.shape[1] == d.K
    assert d.L.shape[0] == 4 * 49 and d.H.shape[0] == 49
    assert np.allclose(np.linalg.norm(d.L, axis=0), 1.0, atol=1e-10)
    assert np.allclose(np.linalg.norm(d.H, axis=0), 1.0, atol=1e-10)
    total = 0
    for down, up in zip(pyr.down_layers, pyr.up_layers):
        rows, cols = patch_grid(down.shape, 7, 5)
        _, ln, _ = learn_features(patch_stack(up, rows, cols, 7))
        _, hn = recon_features(patch_stack(down, rows, cols, 7))
        total += int(np.sum((ln >= 1e-8) & (hn >= 1e-8)))
    assert d.K == total


def test_candidate_count_105():
    rows, _ = patch_grid((105, 105), 7, 5)
    assert rows.size == 2500


def test_constant_image_dictionary_empty():
    cfg = SrConfig()
    with pytest.raises(ValueError, match="empty"):
        build_dictionary(build_pyramids(np.full((64, 64), 0.7), cfg), cfg)


def test_dictionary_save_load(tmp_path, camera):
    cfg = SrConfig()
    d = build_dictionary(build_pyramids(camera[:64, :64], cfg), cfg)
    d.save(tmp_path / "d.bin")
    e = SelfDictionary.load(tmp_path / "d.bin")
    for name in ("L", "H", "norms", "means"):
        assert np.array_equal(getattr(d, name), getattr(e, name))
    raw = (tmp_path / "d.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        SelfDictionary.load(tmp_path / "bad.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError):
        SelfDictionary.load(tmp_path / "magic.bin")
