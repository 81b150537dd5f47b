"""Command-line driver: ``surfdraw {map,trajectory,recover,template,bench}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__
from .lscm import lscm_unfold
from .manifest import RunManifest, write_json_atomic
from .mapping import METHODS, map_strokes
from .meshio import write_ply
from .metrics import benchmark, evaluate, write_report_csv
from .pipeline import (DEFAULTS, ConfigError, builtin_suite, input_paths, load_mesh_spec, load_stroke_spec,
                       load_surface_spec, mapping_config, merge)
from .strokes import stroke3d_from_json, stroke3d_to_json
from .surface import SurfaceError, sample_partial_view
from .trajectory import (apply_correction, attach_poses, densify_slerp, detect_and_recover, discontinuity_report,
                         trajectory_from_json, trajectory_to_json, write_deviation_csv, write_trajectory_csv)

log = logging.getLogger("surfdraw")

OUT_ENV = "SURFDRAW_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"cannot read config file: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc


def _resolve(args) -> dict:
    """Config file merged over defaults, then command-line overrides."""
    cfg = merge(DEFAULTS, _load_config(getattr(args, "config", None)))
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "method", None):
        over["methods"] = args.method
    if getattr(args, "samples", None) is not None:
        over.setdefault("mapping", {})["sample_count"] = args.samples
    if getattr(args, "surface", None):
        over["surface"] = {"path": args.surface}
    if getattr(args, "chart", None):
        over["chart"] = {"path": args.chart}
    if getattr(args, "strokes", None):
        over["strokes"] = {"path": args.strokes}
    for key in ("threshold", "lift"):
        if getattr(args, key, None) is not None:
            over.setdefault("recover", {})[key] = getattr(args, key)
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    cfg = merge(cfg, over)
    cfg.setdefault("output_dir", os.environ.get(OUT_ENV, "surfdraw_out"))
    bad = [m for m in cfg.get("methods", []) if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
    return cfg


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, doc, manifest: RunManifest) -> None:
    write_json_atomic(path, doc)
    manifest.add_output(path)


def _record_inputs(manifest: RunManifest, cfg: dict) -> None:
    for key in ("surface", "chart", "strokes"):
        for p in input_paths(cfg.get(key)):
            if p.is_file():
                manifest.add_input(p)


def _prepare(cfg: dict, manifest: RunManifest):
    """Check inputs exist, then load strokes and surface."""
    for key in ("surface", "chart", "strokes"):
        for p in input_paths(cfg.get(key)):
            if not p.is_file():
                raise ConfigError(f"cannot read input file: {p}")
    _record_inputs(manifest, cfg)
    with manifest.stage("load"):
        strokes = load_stroke_spec(cfg.get("strokes"), cfg.get("workspace"))
        surface = load_surface_spec(cfg.get("surface"), sample_count=int(cfg["mapping"]["sample_count"]),
                                    seed=int(cfg.get("seed", 0)), chart_spec=cfg.get("chart"))
    return strokes, surface


def cmd_map(args) -> int:
    cfg = _resolve(args)
    manifest = RunManifest("map", cfg)
    strokes, surface = _prepare(cfg, manifest)
    out = _outdir(cfg)
    chart = None
    summary = []
    for method in cfg["methods"]:
        mcfg = mapping_config(cfg, method, surface, strokes)
        try:
            with manifest.stage(f"map:{method}"):
                if method in ("SI", "II") and chart is None:
                    if surface.chart_mesh is None:
                        raise ValueError("chart methods need a mesh segment")
                    chart = lscm_unfold(surface.chart_mesh)
                res = map_strokes(strokes, surface, mcfg, chart)
            with manifest.stage(f"metrics:{method}"):
                rep = evaluate(method, strokes, res.strokes, res.duration, res.diagnostics)
        except (ValueError, ArithmeticError) as exc:
            log.error("%s failed: %s", method, exc)
            manifest.failures.append({"stage": f"map:{method}", "error": str(exc)})
            summary.append({"method": method, "ok": False, "error": str(exc)})
            continue
        _dump(out / f"mapped_{method}.json", {"method": method, "strokes": [stroke3d_to_json(s) for s in res.strokes]},
              manifest)
        write_report_csv(out / f"errors_{method}.csv", rep)
        manifest.add_output(out / f"errors_{method}.csv")
        _dump(out / f"report_{method}.json", rep.to_json(), manifest)
        summary.append(rep.summary())
    _dump(out / "summary.json", {"surface": surface.name, "methods": summary}, manifest)
    manifest.write(out / "manifest.json")
    return EXIT_OK if not manifest.failures else EXIT_FAIL


def _color_tag(color) -> str:
    return "default" if color is None else "".join(c if c.isalnum() or c in "-_" else "_" for c in str(color))


def cmd_trajectory(args) -> int:
    cfg = _resolve(args)
    manifest = RunManifest("trajectory", cfg)
    out = _outdir(cfg)
    tcfg = cfg["trajectory"]
    if getattr(args, "mapped", None):
        p = Path(args.mapped)
        if not p.is_file():
            raise ConfigError(f"cannot read input file: {p}")
        manifest.add_input(p)
        doc = json.loads(p.read_text(encoding="utf-8"))
        mapped = [stroke3d_from_json(item) for item in doc["strokes"]]
    else:
        strokes, surface = _prepare(cfg, manifest)
        method = cfg["methods"][0] if getattr(args, "method", None) else cfg.get("trajectory_method", "EI")
        try:
            with manifest.stage(f"map:{method}"):
                mapped = map_strokes(strokes, surface, mapping_config(cfg, method, surface, strokes)).strokes
        except (ValueError, ArithmeticError) as exc:
            manifest.failures.append({"stage": f"map:{method}", "error": str(exc)})
            log.error("mapping failed: %s", exc)
            manifest.write(out / "manifest.json")
            return EXIT_FAIL
    groups: dict[str, list] = {}
    for s in mapped:
        groups.setdefault(_color_tag(s.color), []).append(s)
    angle = np.deg2rad(float(tcfg["max_step_angle_deg"]))
    report = {}
    with manifest.stage("trajectory"):
        for tag, group in groups.items():
            raw = attach_poses(group, float(tcfg["standoff"]))
            dense = densify_slerp(raw, angle, float(tcfg["max_step_dist"]))
            _dump(out / f"trajectory_{tag}.json", trajectory_to_json(dense), manifest)
            write_trajectory_csv(out / f"trajectory_{tag}.csv", dense)
            manifest.add_output(out / f"trajectory_{tag}.csv")
            report[tag] = {
                "raw_poses": len(raw), "poses": len(dense), "pen_down_poses": int(dense.pen_down.sum()),
                "raw_discontinuities": [[i, a] for i, a in discontinuity_report(raw, angle)],
                "discontinuities": [[i, a] for i, a in discontinuity_report(dense, angle)],
            }
    _dump(out / "discontinuities.json", report, manifest)
    manifest.write(out / "manifest.json")
    return EXIT_OK


def _read_measured(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        pts = doc["positions"] if isinstance(doc, dict) else doc
        return np.asarray(pts, dtype=float).reshape(-1, 3)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and not _is_number(rows[0][0]):
        header = rows[0]
        rows = rows[1:]
        cols = [header.index(c) for c in ("x", "y", "z")] if "x" in header else [0, 1, 2]
    else:
        cols = [0, 1, 2]
    return np.array([[float(r[c]) for c in cols] for r in rows]).reshape(-1, 3)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_recover(args) -> int:
    cfg = _resolve(args)
    rc = cfg["recover"]
    threshold, lift = float(rc["threshold"]), float(rc["lift"])
    if not threshold > 0:
        raise ConfigError("threshold must be > 0")
    manifest = RunManifest("recover", cfg)
    planned_path, measured_path = Path(args.planned), Path(args.measured)
    for p in (planned_path, measured_path):
        if not p.is_file():
            raise ConfigError(f"cannot read input file: {p}")
        manifest.add_input(p)
    try:
        planned = trajectory_from_json(json.loads(planned_path.read_text(encoding="utf-8")))
        measured = _read_measured(measured_path)
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"cannot parse recovery inputs: {exc}") from exc
    if getattr(args, "correction", None):
        corr_path = Path(args.correction)
        if not corr_path.is_file():
            raise ConfigError(f"cannot read input file: {corr_path}")
        manifest.add_input(corr_path)
        planned = apply_correction(planned, _read_correction(corr_path))
    try:
        with manifest.stage("recover"):
            result = detect_and_recover(planned, measured, threshold, lift)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _outdir(cfg)
    doc = trajectory_to_json(planned, result.status)
    doc["skip_events"] = len(result.lifts)
    doc["lift_segments"] = [{"skipped_sample": s.skipped, "waypoints": s.waypoints.tolist()} for s in result.lifts]
    _dump(out / "recovered.json", doc, manifest)
    write_deviation_csv(out / "deviation.csv", result)
    manifest.add_output(out / "deviation.csv")
    manifest.write(out / "manifest.json")
    return EXIT_OK


def _read_correction(path: Path):
    from .geometry import RigidTransform
    from .trajectory import GraspCorrection

    doc = json.loads(path.read_text(encoding="utf-8"))
    return GraspCorrection(*(RigidTransform.from_matrix(np.asarray(doc[k], dtype=float))
                             for k in ("T_sim_world", "T_real_world", "T_hand_sim")))


def cmd_template(args) -> int:
    cfg = _resolve(args)
    manifest = RunManifest("template", cfg)
    for p in input_paths(cfg.get("surface")):
        if not p.is_file():
            raise ConfigError(f"cannot read input file: {p}")
    _record_inputs(manifest, cfg)
    count = int(args.count if args.count is not None else cfg["template"]["count"])
    sensor = args.sensor if args.sensor is not None else cfg["template"].get("sensor")
    if sensor is None:
        raise ConfigError("template needs a sensor position")
    with manifest.stage("load"):
        mesh = load_mesh_spec(cfg.get("surface"))
    out = _outdir(cfg)
    try:
        with manifest.stage("sample"):
            samples = sample_partial_view(mesh, sensor, count, int(cfg.get("seed", 0)))
    except (SurfaceError, ValueError) as exc:
        log.error("template sampling failed: %s", exc)
        manifest.failures.append({"stage": "sample", "error": str(exc)})
        manifest.write(out / "manifest.json")
        return EXIT_FAIL
    write_ply(out / "template.ply", samples.positions, samples.normals)
    manifest.add_output(out / "template.ply")
    manifest.write(out / "manifest.json")
    return EXIT_OK


def _bench_cells(cfg: dict, args):
    if getattr(args, "manifest", None):
        p = Path(args.manifest)
        if not p.is_file():
            raise ConfigError(f"cannot read input file: {p}")
        doc = json.loads(p.read_text(encoding="utf-8"))
        cells = doc.get("cells", doc) if isinstance(doc, dict) else doc
        if not cells:
            raise ConfigError("benchmark manifest is empty")
        from .pipeline import BenchCell
        return [BenchCell(c.get("name", f"cell{i}"), c["surface"], c["strokes"], c.get("methods", list(METHODS)),
                          c.get("mapping", {}), c.get("chart")) for i, c in enumerate(cells)], p
    samples = cfg.get("bench_samples", 200_000) if getattr(args, "samples", None) is None else args.samples
    return builtin_suite(int(samples)), None


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    cells, manifest_path = _bench_cells(cfg, args)
    manifest = RunManifest("bench", cfg)
    if manifest_path is not None:
        manifest.add_input(manifest_path)
    out = _outdir(cfg)
    seed = int(cfg.get("seed", 0))
    rows, timing = [], {}
    for cell in cells:
        methods = [m for m in cell.methods if not getattr(args, "method", None) or m in args.method]
        try:
            with manifest.stage(f"load:{cell.name}"):
                mapping = dict(cell.mapping)
                strokes = load_stroke_spec(cell.strokes)
                surface = load_surface_spec(cell.surface, sample_count=int(mapping.get("sample_count", 200_000)),
                                            seed=seed, chart_spec=cell.chart)
                mcfg = mapping_config({"mapping": mapping, "seed": seed}, "EI", surface, strokes)
        except (ValueError, OSError) as exc:
            manifest.failures.append({"stage": f"load:{cell.name}", "error": str(exc)})
            rows.extend({"surface": cell.name, "method": m, "ok": False, "error": str(exc)} for m in methods)
            continue
        with manifest.stage(f"bench:{cell.name}"):
            reports = benchmark(surface, strokes, methods, mcfg)
        for rep in reports:
            row = {"surface": cell.name, **rep.summary(include_duration=False)}
            rows.append(row)
            timing[f"{cell.name}:{rep.method}"] = rep.duration
            if not rep.ok:
                manifest.failures.append({"stage": f"bench:{cell.name}:{rep.method}", "error": rep.error})
    _dump(out / "bench.json", {"format_version": FORMAT_VERSION, "seed": seed, "rows": rows}, manifest)
    _write_bench_csv(out / "bench.csv", rows)
    manifest.add_output(out / "bench.csv")
    _dump(out / "bench_timing.json", timing, manifest)
    manifest.write(out / "manifest.json")
    return EXIT_OK if not manifest.failures else EXIT_FAIL


def _write_bench_csv(path: Path, rows: list[dict]) -> None:
    """Table-style layout: one row per surface, local and global error columns per method."""
    surfaces = list(dict.fromkeys(r["surface"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    cols = ["surface"] + [f"{m}_{k}" for m in methods for k in ("local", "global", "signed_local")]
    by_key = {(r["surface"], r["method"]): r for r in rows}

    def cell(r, key):
        if r is None or not r.get("ok"):
            return "failed" if r is not None else ""
        return repr(float(r[key]))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in surfaces:
            line = [s]
            for m in methods:
                r = by_key.get((s, m))
                line += [cell(r, "mean_abs_local_error"), cell(r, "mean_abs_global_error"),
                         cell(r, "mean_signed_local_error")]
            w.writerow(line)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfdraw", description=__doc__)
    parser.add_argument("--version", action="version", version=f"surfdraw {__version__} (format {FORMAT_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, surface=True):
        p.add_argument("--config", help="JSON configuration document")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./surfdraw_out)")
        p.add_argument("--seed", type=int)
        if surface:
            p.add_argument("--surface", help="mesh (OBJ/PLY) or point cloud (PLY/XYZ)")
            p.add_argument("--chart", help="disc-topology mesh segment for SI/II")
            p.add_argument("--strokes", help="JSON stroke file")
            p.add_argument("--samples", type=int, help="surface sample count")
            p.add_argument("--method", action="append", choices=METHODS)

    p = sub.add_parser("map", help="map strokes with one or more methods and report distortion")
    common(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("trajectory", help="pen poses for mapped strokes, one file per color")
    common(p)
    p.add_argument("--mapped", help="mapped-stroke JSON from 'map' (skips mapping)")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("recover", help="skip points whose measured tip deviates too far")
    common(p, surface=False)
    p.add_argument("--planned", required=True, help="trajectory JSON")
    p.add_argument("--measured", required=True, help="measured tip positions (CSV x,y,z or JSON)")
    p.add_argument("--correction", help="JSON with 4x4 T_sim_world, T_real_world, T_hand_sim")
    p.add_argument("--threshold", type=float, help="deviation threshold in mm")
    p.add_argument("--lift", type=float, help="lift height in mm")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("template", help="viewpoint-weighted partial-view samples of a mesh")
    common(p, surface=False)
    p.add_argument("--surface", help="mesh file")
    p.add_argument("--sensor", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_template)

    p = sub.add_parser("bench", help="run a benchmark manifest or the built-in analytic suite")
    common(p, surface=False)
    p.add_argument("--manifest", help="JSON list of {surface, strokes, methods, mapping} cells")
    p.add_argument("--samples", type=int, help="sample count for the built-in suite")
    p.add_argument("--method", action="append", choices=METHODS)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"surfdraw: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
