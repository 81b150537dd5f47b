import json
import subprocess
import sys

import numpy as np
import pytest

from surfdraw import cli, shapes
from surfdraw.manifest import verify_manifest
from surfdraw.meshio import read_ply, write_obj
from surfdraw.strokes import Stroke2D, StrokeSet2D, lattice_strokes, write_strokes


@pytest.fixture
def inputs(tmp_path):
    write_obj(tmp_path / "plane.obj", shapes.plane_grid(40, 40))
    st = lattice_strokes(20, 20, 3, 21)
    colored = StrokeSet2D(tuple(Stroke2D(s.points, s.id, "red" if i < 3 else "blue") for i, s in enumerate(st)))
    write_strokes(tmp_path / "strokes.json", colored)
    cfg = {"mapping": {"sample_count": 5000, "start_point": [-10.0, -10.0, 0.0]}, "seed": 1}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    return tmp_path


def _map(inputs, out, *extra):
    return cli.main(["map", "--config", str(inputs / "cfg.json"), "--surface", str(inputs / "plane.obj"),
                     "--strokes", str(inputs / "strokes.json"), "--out", str(out), *extra])


def test_map_writes_reports_and_manifest(inputs):
    out = inputs / "out"
    assert _map(inputs, out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert [m["method"] for m in summary["methods"]] == ["baseline", "DI", "EI", "SI", "II"]
    assert all(m["ok"] for m in summary["methods"])
    for m in ("baseline", "DI", "EI", "SI", "II"):
        assert (out / f"mapped_{m}.json").exists() and (out / f"errors_{m}.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and str(inputs / "plane.obj") in man["inputs"]
    assert verify_manifest(out / "manifest.json")
    (out / "summary.json").write_text("{}")
    assert not verify_manifest(out / "manifest.json")


def test_map_single_method_and_env_output(inputs, monkeypatch):
    monkeypatch.setenv("SURFDRAW_OUT", str(inputs / "envout"))
    code = cli.main(["map", "--config", str(inputs / "cfg.json"), "--surface", str(inputs / "plane.obj"),
                     "--strokes", str(inputs / "strokes.json"), "--method", "EI"])
    assert code == 0
    assert (inputs / "envout" / "mapped_EI.json").exists() and not (inputs / "envout" / "mapped_DI.json").exists()


def test_map_failure_exit_code(inputs):
    cfg = json.loads((inputs / "cfg.json").read_text())
    cfg["mapping"]["start_point"] = [0.0, 0.0, 50.0]
    (inputs / "bad.json").write_text(json.dumps(cfg))
    code = cli.main(["map", "--config", str(inputs / "bad.json"), "--surface", str(inputs / "plane.obj"),
                     "--strokes", str(inputs / "strokes.json"), "--out", str(inputs / "o"), "--method", "EI"])
    assert code == 1
    man = json.loads((inputs / "o" / "manifest.json").read_text())
    assert man["status"] == "failed" and man["failures"]


def test_missing_input_is_a_usage_error(inputs, capsys):
    code = cli.main(["map", "--surface", str(inputs / "nope.obj"), "--strokes", str(inputs / "strokes.json"),
                     "--out", str(inputs / "o")])
    assert code == 2 and "cannot read input file" in capsys.readouterr().err
    (inputs / "broken.json").write_text("{not json")
    assert cli.main(["map", "--config", str(inputs / "broken.json")]) == 2


def test_trajectory_per_color_and_recover(inputs):
    out = inputs / "out"
    assert _map(inputs, out, "--method", "EI") == 0
    tout = inputs / "traj"
    assert cli.main(["trajectory", "--mapped", str(out / "mapped_EI.json"), "--out", str(tout)]) == 0
    assert (tout / "trajectory_red.json").exists() and (tout / "trajectory_blue.csv").exists()
    disc = json.loads((tout / "discontinuities.json").read_text())
    assert disc["red"]["discontinuities"] == []
    planned = json.loads((tout / "trajectory_red.json").read_text())
    tips = np.array([p["position"] for p in planned["poses"] if p["pen_down"]])
    tips[5, 2] += 4.0
    tips[30, 2] += 4.0
    np.savetxt(inputs / "measured.csv", tips, delimiter=",", header="x,y,z", comments="")
    rout = inputs / "rec"
    assert cli.main(["recover", "--planned", str(tout / "trajectory_red.json"),
                     "--measured", str(inputs / "measured.csv"), "--threshold", "2", "--out", str(rout)]) == 0
    rec = json.loads((rout / "recovered.json").read_text())
    assert rec["skip_events"] == 2 and len(rec["lift_segments"]) == 2
    assert sum(p["status"] == "skipped" for p in rec["poses"]) == 2
    # a zero threshold is rejected as a usage error
    assert cli.main(["recover", "--planned", str(tout / "trajectory_red.json"),
                     "--measured", str(inputs / "measured.csv"), "--threshold", "0", "--out", str(rout)]) == 2
    # wrong trace length is a usage error
    np.savetxt(inputs / "short.csv", tips[:3], delimiter=",")
    assert cli.main(["recover", "--planned", str(tout / "trajectory_red.json"),
                     "--measured", str(inputs / "short.csv"), "--out", str(rout)]) == 2


def test_recover_with_identity_correction(inputs):
    out = inputs / "out"
    assert _map(inputs, out, "--method", "II") == 0
    tout = inputs / "traj"
    assert cli.main(["trajectory", "--mapped", str(out / "mapped_II.json"), "--out", str(tout)]) == 0
    planned = json.loads((tout / "trajectory_blue.json").read_text())
    tips = [p["position"] for p in planned["poses"] if p["pen_down"]]
    (inputs / "m.json").write_text(json.dumps({"positions": tips}))
    eye = np.eye(4).tolist()
    (inputs / "corr.json").write_text(json.dumps({"T_sim_world": eye, "T_real_world": eye, "T_hand_sim": eye}))
    assert cli.main(["recover", "--planned", str(tout / "trajectory_blue.json"), "--measured", str(inputs / "m.json"),
                     "--correction", str(inputs / "corr.json"), "--out", str(inputs / "r")]) == 0
    rec = json.loads((inputs / "r" / "recovered.json").read_text())
    assert rec["skip_events"] == 0


def test_template_command(inputs):
    write_obj(inputs / "box.obj", shapes.box())
    out = inputs / "tpl"
    assert cli.main(["template", "--surface", str(inputs / "box.obj"), "--sensor", "0", "0", "400",
                     "--count", "2000", "--out", str(out)]) == 0
    v, _, n = read_ply(out / "template.ply")
    assert len(v) == 2000 and np.all(n[:, 2] > 0.99)
    assert cli.main(["template", "--surface", str(inputs / "box.obj"), "--out", str(out)]) == 2


def test_bench_manifest(inputs):
    cells = [{"name": "flat", "surface": {"builtin": "plane", "width": 40, "height": 40},
              "strokes": {"lattice": {"width": 20, "height": 20, "lines": 3, "points_per_stroke": 21}},
              "methods": ["baseline", "EI", "II"],
              "mapping": {"sample_count": 1, "start_point": [-10, -10, 0], "start_normal": [0, 0, 1]}}]
    (inputs / "bench.json").write_text(json.dumps(cells))
    out = inputs / "b"
    assert cli.main(["bench", "--manifest", str(inputs / "bench.json"), "--out", str(out)]) == 0
    doc = json.loads((out / "bench.json").read_text())
    assert [r["method"] for r in doc["rows"]] == ["baseline", "EI", "II"]
    assert all("duration_s" not in r for r in doc["rows"])
    header = (out / "bench.csv").read_text().splitlines()[0]
    assert header.startswith("surface,baseline_local,baseline_global")
    assert set(json.loads((out / "bench_timing.json").read_text())) == {"flat:baseline", "flat:EI", "flat:II"}


def test_unknown_builtin_is_recorded(inputs):
    cells = [{"name": "bad", "surface": {"builtin": "teapot"}, "strokes": {"lattice": {}}}]
    (inputs / "bad.json").write_text(json.dumps(cells))
    assert cli.main(["bench", "--manifest", str(inputs / "bad.json"), "--out", str(inputs / "b")]) == 1


def test_version_and_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "surfdraw", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("surfdraw 0.1.0")
