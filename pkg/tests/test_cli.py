import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from voxpose.camera import Intrinsics
from voxpose.cli import main
from voxpose.grid import VoxelGrid, load_grid, save_grid
from voxpose.lie import Pose
from voxpose.render import load_png, render_image, to_uint8
from voxpose.scenes import SceneSpec, build_scene, look_at

RUNTIME_COLUMNS = {"avg_runtime_s", "avg_ms_per_epoch", "runtime_s"}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def experiment(tmp_path, **kw):
    spec = {"scene": {"kind": "checker_sphere", "resolution": 16}, "n_poses": 2,
            "intrinsics": {"width": 24, "height": 24, "focal": 33.3},
            "optimizer": {"max_epochs": 8}}
    spec.update(kw)
    return write_json(tmp_path / "exp.json", spec)


def strip_runtime(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: v for k, v in r.items() if k not in RUNTIME_COLUMNS} for r in rows]


def test_build_scene_roundtrip_and_determinism(tmp_path, capsys):
    cfg = write_json(tmp_path / "s.json", {"kind": "sphere", "resolution": 12})
    a, b = str(tmp_path / "a.voxg"), str(tmp_path / "b.voxg")
    assert main(["build-scene", "--config", cfg, "--out", a]) == 0
    assert "N=12" in capsys.readouterr().out
    assert main(["build-scene", "--config", cfg, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    assert load_grid(a).equals(build_scene(SceneSpec(kind="sphere", resolution=12)))
    manifest = json.loads(open(a + ".manifest.json").read())
    assert manifest["config"]["kind"] == "sphere" and manifest["subcommand"] == "build-scene"


def test_build_scene_bad_inputs(tmp_path, capsys):
    bad = write_json(tmp_path / "s.json", {"kind": "teapot"})
    assert main(["build-scene", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "teapot" in capsys.readouterr().err
    assert main(["build-scene", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "x")]) == 3
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["build-scene", "--config", str(tmp_path / "junk.json"),
                 "--out", str(tmp_path / "x")]) == 2
    assert main(["build-scene", "--out", str(tmp_path / "no" / "such" / "dir.voxg")]) == 3


def test_render_outputs(tmp_path):
    intr = {"width": 16, "height": 12, "focal": 20.0}
    pose = look_at([0.5, 0.5, 3.0])
    cfg = write_json(tmp_path / "r.json", {"pose": pose.to_dict(), "intrinsics": intr,
                                           "render": {"background": [0.2, 0.6, 1.0]}})
    empty = str(tmp_path / "empty.voxg")
    save_grid(VoxelGrid.empty(8), empty)
    out = str(tmp_path / "e.png")
    assert main(["render", "--config", cfg, "--grid", empty, "--out", out]) == 0
    img = load_png(out)
    assert img.shape == (12, 16, 3)
    assert np.all(img == img[0, 0]) and np.allclose(img[0, 0], [51 / 255, 153 / 255, 1.0])

    grid = build_scene(SceneSpec(kind="checker_sphere", resolution=16))
    gpath = str(tmp_path / "c.voxg")
    save_grid(grid, gpath)
    a, b = str(tmp_path / "a.png"), str(tmp_path / "b.png")
    assert main(["render", "--config", cfg, "--grid", gpath, "--out", a]) == 0
    assert main(["render", "--config", cfg, "--grid", gpath, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    from voxpose.render import RenderConfig
    lib = render_image(grid, Pose.from_dict(pose.to_dict()), Intrinsics(16, 12, 20.0),
                       RenderConfig(background=(0.2, 0.6, 1.0)))
    assert np.array_equal(load_png(a), to_uint8(lib) / 255.0)


def test_render_bad_pose(tmp_path):
    cfg = write_json(tmp_path / "r.json", {"pose": {"rotation": [[2, 0, 0], [0, 1, 0], [0, 0, 1]],
                                                    "translation": [0, 0, 3]},
                                           "scene": {"kind": "sphere", "resolution": 8}})
    assert main(["render", "--config", cfg, "--out", str(tmp_path / "x.png")]) == 2
    cfg = write_json(tmp_path / "r2.json", {"scene": {"kind": "sphere", "resolution": 8}})
    assert main(["render", "--config", cfg, "--out", str(tmp_path / "x.png")]) == 2


def test_estimate_zero_perturbation(tmp_path, capsys):
    cfg = experiment(tmp_path, max_translation=0.0, max_rotation_deg=0.0)
    out = tmp_path / "run"
    assert main(["estimate", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    rows = strip_runtime(out / "report.csv")
    assert float(rows[0]["pct_success"]) == 1.0
    assert "both 1.00" in capsys.readouterr().out


def test_estimate_missing_grid(tmp_path, capsys):
    cfg = experiment(tmp_path)
    code = main(["estimate", "--config", cfg, "--grid", str(tmp_path / "nope.voxg"),
                 "--out", str(tmp_path / "run")])
    assert code == 3
    assert "nope.voxg" in capsys.readouterr().err


def test_estimate_rerun_from_manifest(tmp_path, monkeypatch):
    cfg = experiment(tmp_path, ablation="subsample", values=[0.5, 1.0])
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["estimate", "--config", cfg, "--out", str(first), "--seed", "3", "--quiet"]) == 0
    monkeypatch.setenv("VOXPOSE_THREADS", "2")
    assert main(["estimate", "--config", str(first / "manifest.json"), "--out", str(second),
                 "--quiet"]) == 0
    assert strip_runtime(first / "report.csv") == strip_runtime(second / "report.csv")
    assert sorted(map(str, strip_runtime(first / "poses.csv"))) == \
        sorted(map(str, strip_runtime(second / "poses.csv")))
    manifest = json.loads((second / "manifest.json").read_text())
    assert manifest["params"]["jobs"] == 2 and manifest["config"]["seed"] == 3


def test_threads_env_must_be_integer(tmp_path, monkeypatch):
    monkeypatch.setenv("VOXPOSE_THREADS", "many")
    assert main(["estimate", "--config", experiment(tmp_path), "--out",
                 str(tmp_path / "run")]) == 2


def test_plot(tmp_path):
    pytest.importorskip("matplotlib")
    run = tmp_path / "run"
    assert main(["estimate", "--config", experiment(tmp_path), "--out", str(run), "--quiet"]) == 0
    png = tmp_path / "curves.png"
    assert main(["plot", str(run), "--out", str(png)]) == 0
    assert png.stat().st_size > 1000
    assert main(["plot", str(tmp_path / "empty"), "--out", str(png)]) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "voxpose", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("voxpose ")
    bad = subprocess.run([sys.executable, "-m", "voxpose", "render"], capture_output=True)
    assert bad.returncode == 2
