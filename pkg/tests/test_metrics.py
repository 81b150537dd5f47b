import csv
import json

import numpy as np
import pytest

from surfdraw import shapes
from surfdraw.mapping import MappingConfig
from surfdraw.metrics import (DeformationReport, benchmark, closest_pairs, evaluate, global_error, local_error,
                              write_report_csv)
from surfdraw.strokes import Stroke2D, Stroke3D, StrokeSet2D, lattice_strokes
from surfdraw.surface import SurfaceModel


def _lift(stroke: Stroke2D, fn) -> Stroke3D:
    p = np.array([fn(x, y) for x, y in stroke.points])
    return Stroke3D(stroke.id, p, np.tile([0, 0, 1.0], (len(p), 1)), np.ones(len(p), bool))


def test_local_error_uniform_scaling():
    s = Stroke2D(np.column_stack([np.linspace(0, 10, 11), np.sin(np.linspace(0, 3, 11))]))
    e = local_error(s, _lift(s, lambda x, y: (1.1 * x, 1.1 * y, 0.0)))
    assert np.allclose(e, 0.1)


def test_local_error_ignores_travel_points():
    s = Stroke2D([[0, 0], [1, 0], [2, 0]])
    m = Stroke3D("s", [[9, 9, 9], [0, 0, 0], [1, 0, 0], [2, 0, 0]], np.tile([0, 0, 1.0], (4, 1)),
                 [False, True, True, True])
    assert np.array_equal(local_error(s, m), [0.0, 0.0])
    with pytest.raises(ValueError):
        local_error(Stroke2D([[0, 0], [1, 0]]), m)


def test_closest_pairs_on_lattice_are_the_crossings():
    st = lattice_strokes()
    pairs = closest_pairs(st)
    assert len(pairs) == 81  # 9 x 9 crossings
    for a, i, b, j in pairs:
        assert a < b and np.array_equal(st[a].points[i], st[b].points[j])


def test_closest_pairs_fallback_for_disjoint_strokes():
    st = StrokeSet2D((Stroke2D([[0, 0], [1, 0]]), Stroke2D([[0, 3], [1, 2]]), Stroke2D([[5, 5], [6, 6]])))
    pairs = closest_pairs(st)
    assert pairs.tolist() == [[0, 1, 1, 1], [0, 1, 2, 0], [1, 1, 2, 0]]


def test_global_error_measures_pair_distance_change():
    a = Stroke2D([[0, 0], [1, 0], [2, 0]], "a")
    b = Stroke2D([[1, -1], [1, 0], [1, 1]], "b")
    st = StrokeSet2D((a, b))
    ma = _lift(a, lambda x, y: (x, y, 0.0))
    mb = _lift(b, lambda x, y: (x, y, 0.25))  # lifted off by 0.25 mm
    g = global_error(st, [ma, mb])
    assert g.pairs.tolist() == [[0, 1, 1, 1]] and np.allclose(g.values, [0.25])


def test_report_means_and_json():
    st = StrokeSet2D((Stroke2D([[0, 0], [1, 0], [2, 0]], "a"), Stroke2D([[1, -1], [1, 0], [1, 1]], "b")))
    # stretch x by 20 %: the horizontal stroke grows, the vertical one is untouched
    mapped = [_lift(s, lambda x, y: (1.2 * x, y, 0.0)) for s in st]
    rep = evaluate("DI", st, mapped, 0.5, {"gate": 1.0, "presnap": np.zeros((2, 3))})
    assert np.allclose(rep.local[0], 0.2) and np.allclose(rep.local[1], 0.0)
    assert np.isclose(rep.mean_local, 0.1) and np.isclose(rep.signed_mean_local, 0.1)
    doc = json.loads(json.dumps(rep.to_json()))
    assert doc["method"] == "DI" and doc["ok"] and "presnap" not in doc["diagnostics"]
    assert doc["n_segments"] == 4 and doc["n_pairs"] == 1
    failed = DeformationReport("EI", error="boom")
    s = failed.summary()
    assert not failed.ok and s["mean_abs_local_error"] is None and json.dumps(s)


def test_absolute_and_signed_means_differ():
    s = Stroke2D([[0, 0], [1, 0], [2, 0]])
    m = _lift(s, lambda x, y: ([0.0, 1.1, 2.0][int(x)], 0.0, 0.0))
    rep = evaluate("DI", StrokeSet2D((s,)), [m])
    assert np.isclose(rep.mean_local, 0.1) and np.isclose(rep.signed_mean_local, 0.0)


def test_report_csv(tmp_path):
    st = lattice_strokes(10, 10, 3, 11)
    mapped = [_lift(s, lambda x, y: (x, y, 0.0)) for s in st]
    rep = evaluate("baseline", st, mapped)
    write_report_csv(tmp_path / "e.csv", rep)
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0][0] == "kind"
    assert sum(r[0] == "local" for r in rows) == 6 * 10 and sum(r[0] == "global" for r in rows) == 9


def test_benchmark_records_failures_instead_of_raising():
    surf = SurfaceModel.from_mesh(shapes.plane_grid(20, 20), 0, 0)
    st = lattice_strokes(10, 10, 3, 11)
    cfg = MappingConfig(start_point_3d=np.array([-5.0, -5.0, 0.0]), start_normal=np.array([0, 0, 1.0]))
    reps = benchmark(surf, st, ["baseline", "EI", "SI"], cfg)
    assert all(r.ok for r in reps)
    far = MappingConfig(start_point_3d=np.array([0.0, 0.0, 40.0]), start_normal=np.array([0, 0, 1.0]))
    reps = benchmark(surf, st, ["EI"], far)
    assert not reps[0].ok and "not on the surface" in reps[0].error
