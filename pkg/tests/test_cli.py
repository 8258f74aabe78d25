import json

import numpy as np
import pytest
from PIL import Image

from retmosaic import io
from retmosaic.cli import EXIT_IO, EXIT_NO_FRAMES, EXIT_OK, main

SMALL_PHANTOM = {"retina_size": 400, "frame_size": 128, "roi_radius_range": [48.0, 56.0],
                 "frame_count": 4, "vessel_branches": 4,
                 "trajectory": [[150.0 + 20 * i, 200.0, 1.0] for i in range(4)]}


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("phantom")
    cfg = d.parent / "phantom_cfg.json"
    cfg.write_text(json.dumps(SMALL_PHANTOM))
    assert main(["phantom", "--out", str(d), "--config", str(cfg), "--seed", "3"]) == EXIT_OK
    return d


def test_phantom_layout(phantom_dir):
    assert [p.name for p in io.list_frames(phantom_dir)] == \
        [f"frame_{i:04d}.png" for i in range(4)]
    truth = json.loads((phantom_dir / "truth.json").read_text())
    assert len(truth["frames"]) == 4
    assert (phantom_dir / truth["retina"]).exists()
    assert (phantom_dir / truth["frames"][2]["glare_mask"]).exists()
    assert set(truth["frames"][0]["transform"]) == {"scale", "tx", "ty"}


def test_stitch(phantom_dir, tmp_path, capsys):
    out, report, weights = tmp_path / "m.png", tmp_path / "r.json", tmp_path / "w.png"
    dump = tmp_path / "dump"
    code = main(["stitch", "--frames", str(phantom_dir), "--out", str(out),
                 "--report", str(report), "--weights", str(weights),
                 "--dump-intermediates", str(dump)])
    assert code == EXIT_OK
    assert "frames used" in capsys.readouterr().out
    mosaic = np.asarray(Image.open(out))
    assert mosaic.dtype == np.uint8 and mosaic.ndim == 3 and mosaic.shape[2] == 3
    doc = json.loads(report.read_text())
    assert len(doc["frames"]) == 4 and "version" in doc and "config" in doc
    assert doc["frames"][doc["start_index"]]["status"] == "used"
    w = np.asarray(Image.open(weights))
    assert w.dtype == np.uint16 and w.shape == mosaic.shape[:2]
    assert (dump / "roi_0000.png").exists() and (dump / "vessel_0003.png").exists()


def test_stitch_deterministic(phantom_dir, tmp_path):
    for k in range(2):
        assert main(["stitch", "--frames", str(phantom_dir), "--out", str(tmp_path / f"{k}.png"),
                     "--report", str(tmp_path / f"{k}.json"), "--seed", "5"]) == EXIT_OK
    assert (tmp_path / "0.png").read_bytes() == (tmp_path / "1.png").read_bytes()
    assert (tmp_path / "0.json").read_bytes() == (tmp_path / "1.json").read_bytes()
    assert json.loads((tmp_path / "0.json").read_text())["config"]["seed"] == 5


def test_stitch_no_usable_frames(tmp_path, capsys):
    frames = tmp_path / "frames"
    frames.mkdir()
    io.save_rgb(frames / "a.png", np.zeros((64, 64, 3), np.uint8))
    code = main(["stitch", "--frames", str(frames), "--out", str(tmp_path / "m.png"),
                 "--report", str(tmp_path / "r.json")])
    assert code == EXIT_NO_FRAMES
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["stitch", "--frames", str(empty), "--out", str(tmp_path / "m.png"),
                 "--report", str(tmp_path / "r.json")]) == EXIT_NO_FRAMES
    assert "error" in capsys.readouterr().err


def test_io_errors(tmp_path):
    assert main(["stitch", "--frames", str(tmp_path / "missing"), "--out", "m.png",
                 "--report", "r.json"]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text('{"no_such_key": 1}')
    assert main(["roi", "--frame", "x.png", "--config", str(bad)]) == EXIT_IO
    bad.write_text("{not json")
    assert main(["roi", "--frame", "x.png", "--config", str(bad)]) == EXIT_IO
    assert main(["roi", "--frame", str(tmp_path / "missing.png")]) == EXIT_IO


def test_single_stage_commands(phantom_dir, tmp_path, capsys):
    frame = str(phantom_dir / "frame_0001.png")
    assert main(["roi", "--frame", frame, "--overlay", str(tmp_path / "o.png")]) == EXIT_OK
    roi = json.loads(capsys.readouterr().out)
    assert set(roi) >= {"a", "b", "x0", "y0", "theta", "fitness"}
    assert (tmp_path / "o.png").exists()

    assert main(["glare", "--frame", frame, "--out", str(tmp_path / "g.png"),
                 "--measure", str(tmp_path / "gm.png"),
                 "--preview", str(tmp_path / "gp.png")]) == EXIT_OK
    glare = json.loads(capsys.readouterr().out)
    assert glare["glare_pixels"] <= glare["roi_pixels"]
    for name in ("g.png", "gm.png", "gp.png"):
        assert (tmp_path / name).exists()

    assert main(["vessel", "--frame", frame, "--out", str(tmp_path / "v.png")]) == EXIT_OK
    assert float(capsys.readouterr().out) > 0
    v = np.asarray(Image.open(tmp_path / "v.png"))
    assert v.dtype == np.uint16



def test_register_command(short_sequence, tmp_path, capsys):
    frames, truth = short_sequence
    io.save_rgb(tmp_path / "f.png", frames[1].rgb)
    io.save_rgb(tmp_path / "m.png", frames[0].rgb)
    assert main(["register", "--frame", str(tmp_path / "f.png"),
                 "--mosaic", str(tmp_path / "m.png")]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert set(res) == {"scale", "tx", "ty", "score", "second_score", "accepted"}
    true = truth.transforms[0].inverse().compose(truth.transforms[1])
    assert res["accepted"]
    assert abs(res["tx"] - true.tx) <= 1 and abs(res["ty"] - true.ty) <= 1


def test_vessel_on_rejected_frame(tmp_path):
    p = tmp_path / "black.png"
    io.save_rgb(p, np.zeros((64, 64, 3), np.uint8))
    assert main(["vessel", "--frame", str(p), "--out", str(tmp_path / "v.png")]) == EXIT_IO


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "retmosaic", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "stitch" in r.stdout
