import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from klrsc.cli import main
from klrsc.imgcore import to_uint8, write_image

FAST = ["--set", "refine_iters=3"]


@pytest.fixture
def small_png(tmp_path, small_scene):
    path = tmp_path / "in.png"
    write_image(path, to_uint8(small_scene[:30, :34]))
    return path


def test_upscale_dimension_contract(tmp_path, small_png, capsys):
    out = tmp_path / "out.png"
    code = main(["upscale", "-i", str(small_png), "-o", str(out), "--set", "p=2", "--set", "mode=SC", *FAST])
    assert code == 0
    with Image.open(out) as im:
        assert im.size == (68, 60)
    lines = (tmp_path / "out.report.jsonl").read_text().strip().split("\n")
    assert json.loads(lines[0])["mode"] == "SC" and len(lines) == 1 + 4
    cap = capsys.readouterr()
    assert cap.out == "" and "out.png" in cap.err


def test_missing_input_exit_1(tmp_path, capsys):
    code = main(["upscale", "-i", str(tmp_path / "nope.png"), "-o", str(tmp_path / "o.png")])
    assert code == 1
    assert "nope.png" in capsys.readouterr().err


def test_bad_override_exit_2(tmp_path, small_png, capsys):
    code = main(["upscale", "-i", str(small_png), "-o", str(tmp_path / "o.png"), "--set", "p=0.5"])
    assert code == 2
    assert "p" in capsys.readouterr().err


def test_config_file_error_reports_line(tmp_path, small_png, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("p = 2\nwhat = 1\n")
    code = main(["upscale", "-i", str(small_png), "-o", str(tmp_path / "o.png"), "-c", str(cfg)])
    err = capsys.readouterr().err
    assert code == 2 and err.count("line 2") == 1 and "bad.cfg" in err


def test_env_config_fallback(tmp_path, small_png, monkeypatch):
    cfg = tmp_path / "env.cfg"
    cfg.write_text("p = 1.5\nmode = SC\nrefine_iters = 2\n")
    monkeypatch.setenv("KLRSC_CONFIG", str(cfg))
    out = tmp_path / "o.png"
    assert main(["upscale", "-i", str(small_png), "-o", str(out)]) == 0
    with Image.open(out) as im:
        assert im.size == (51, 45)


def test_pipeline_failure_exit_3(tmp_path, capsys):
    tiny = tmp_path / "tiny.png"
    write_image(tiny, np.zeros((5, 5), np.uint8))
    assert main(["upscale", "-i", str(tiny), "-o", str(tmp_path / "o.png")]) == 3


def test_bench_empty_dir_exit_1(tmp_path):
    assert main(["bench", "-d", str(tmp_path)]) == 1


def test_bench_csv_schema(tmp_path, small_png, capsys):
    csv_path = tmp_path / "r.csv"
    code = main(["bench", "-d", str(small_png.parent), "--modes", "SC,KLRSC+AR", "--set", "p=2",
                 "--csv", str(csv_path), *FAST])
    assert code == 0
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0] == "image,mode,p,psnr_db,ssim,seconds"
    assert [l.split(",")[1] for l in lines[1:]] == ["bicubic", "SC", "KLRSC+AR"]
    out = capsys.readouterr().out
    assert "Avg." in out and "bicubic" in out


def test_bench_unknown_mode_exit_2(tmp_path, small_png):
    assert main(["bench", "-d", str(small_png.parent), "--modes", "SC,FOO"]) == 2


def test_nucnorm_and_scn_output(small_png, capsys):
    assert main(["nucnorm", "-i", str(small_png)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# matrices=") and "lo,hi,count" in out
    assert main(["scn", "-i", str(small_png), "--modes", "SC", "--pairs", "30"]) == 0
    assert capsys.readouterr().out.split("\n")[1].startswith("SC,")


def test_dict_dump(tmp_path, small_png, capsys):
    out = tmp_path / "d.bin"
    assert main(["dict-dump", "-i", str(small_png), "-o", str(out)]) == 0
    assert out.stat().st_size > 0 and capsys.readouterr().out.startswith("atoms=")


def test_module_entry_point(small_png):
    res = subprocess.run([sys.executable, "-m", "klrsc.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "upscale" in res.stdout
