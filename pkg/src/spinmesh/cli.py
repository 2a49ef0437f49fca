"""Command-line front end.

Every command writes a JSON report (``<stem>.<command>.json`` in ``--out-dir``)
carrying the fully resolved configuration.  Floats are rounded to 12
significant digits so repeated runs produce byte-identical reports.

Exit codes: 0 success, 1 error, 2 success with warnings.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__, dirac, flows, metrics, synth
from .integrate import apply_spin
from .meshio import MeshFormatError, SidecarError, read_mesh, read_sidecar, write_mesh, write_sidecar
from .net import FaceEdgeNet, MeshConstructionError
from .spin import SolveConfig

logger = logging.getLogger("spinmesh")

REPORT_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2


class CommandError(RuntimeError):
    pass


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def round_floats(obj, digits: int = 12):
    """Round floats recursively; non-finite values become ``None``."""
    if isinstance(obj, dict):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return [round_floats(v, digits) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return float(f"{v:.{digits}g}")
    return obj


def write_report(path, report: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(round_floats(report), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- helpers


def _load_net(path) -> FaceEdgeNet:
    md = read_mesh(path)
    return FaceEdgeNet(md.positions, md.faces)


def _solve_config(args) -> SolveConfig:
    return SolveConfig(
        alpha=args.alpha,
        beta=args.beta,
        area_tolerance=math.inf if args.area_tolerance is None else args.area_tolerance,
        area_multipliers=args.area_weight,
        enforce_closedness=args.closedness,
        enforce_exactness=args.exactness,
    )


def _flow_config(args, **over) -> flows.FlowConfig:
    kw = dict(tau=args.tau, steps=args.steps, solve=_solve_config(args), filter_strength=args.filter,
              metric_choice=args.metric)
    kw.update(over)
    return flows.FlowConfig(**kw)


def _history_warnings(history) -> list[str]:
    return [f"step {d.get('step', '?')}: {d['warning']}" for d in history if "warning" in d]


def _stem(path) -> str:
    return Path(path).stem


def _mesh_out(args, name: str) -> Path:
    return Path(args.out_dir) / f"{name}.{args.format}"


# ---------------------------------------------------------------- commands


def cmd_fair(args) -> dict:
    net = _load_net(args.input)
    cfg = _flow_config(args)
    sphere, cmap, hist = flows.flow_to_sphere(net, cfg, provenance=_stem(args.input))
    stem = _stem(args.input)
    mesh_path = _mesh_out(args, f"{stem}_sphere")
    side_path = Path(args.out_dir) / f"{stem}.curv.json"
    write_mesh(mesh_path, sphere.positions, sphere.faces, {"h_star": cmap.h_star, "A_star": cmap.A_star})
    write_sidecar(side_path, cmap, source_id=stem)
    rep = metrics.DeformationReport.from_nets(net, sphere)
    return {
        "config": cfg.resolved(net),
        "outputs": {"mesh": mesh_path.name, "sidecar": side_path.name},
        "results": {"steps": sum(1 for d in hist if "step" in d and d["step"] > 0),
                    "radius_cv": flows.radius_cv(sphere), "deformation": rep.to_dict(),
                    "notes": [d["note"] for d in hist if "note" in d], "history": hist},
        "warnings": _history_warnings(hist),
    }


def cmd_extrude(args) -> dict:
    net = _load_net(args.sphere)
    cmap = read_sidecar(args.sidecar)
    if cmap.face_count != net.n_faces:
        raise CommandError(f"sidecar/mesh face count mismatch ({cmap.face_count} vs {net.n_faces})")
    cfg = _flow_config(args, extrude_fraction=args.fraction, extrude_steps=args.extrude_steps)
    out, hist = flows.extrude(net, cmap, cfg, return_history=True)
    stem = _stem(args.sphere)
    mesh_path = _mesh_out(args, f"{stem}_extruded")
    write_mesh(mesh_path, out.positions, out.faces)
    return {
        "config": cfg.resolved(net),
        "outputs": {"mesh": mesh_path.name},
        "results": {
            "steps": len(hist) - 1,
            "curvature_residual": [d["curvature_residual"] for d in hist],
            "final_curvature_residual": flows.curvature_residual(out, cmap.h_star),
            "history": hist,
        },
        "warnings": _history_warnings(hist),
    }


def cmd_roundtrip(args) -> dict:
    net = _load_net(args.input)
    cfg = _flow_config(args, extrude_fraction=args.fraction, extrude_steps=args.extrude_steps)
    t0 = time.perf_counter()
    try:
        sphere, cmap, hf = flows.flow_to_sphere(net, cfg)
    except Exception as exc:
        raise CommandError(f"fair stage: {exc}") from exc
    try:
        ext, he = flows.extrude(sphere, cmap, cfg, return_history=True)
    except Exception as exc:
        raise CommandError(f"extrude stage: {exc}") from exc
    al = metrics.align_similarity(ext, net)
    mx, mean = metrics.point_to_surface_error(al.aligned, net)
    d = net.bbox_diagonal
    rep = metrics.DeformationReport.from_nets(net, al.aligned)
    res = {
        "max_err_rel_diag": mx / d,
        "mean_err": mean,
        "mean_err_rel_diag": mean / d,
        "Q_stats": rep.Q_stats,
        "eps_s_stats": rep.eps_s_stats,
        "steps": {"fair": sum(1 for h in hf if "step" in h and h["step"] > 0), "extrude": len(he) - 1},
        "alignment_scale": al.scale,
    }
    if args.timing:
        res["wall_time"] = time.perf_counter() - t0
    stem = _stem(args.input)
    mesh_path = _mesh_out(args, f"{stem}_roundtrip")
    write_mesh(mesh_path, al.aligned.positions, al.aligned.faces)
    return {"config": cfg.resolved(net), "outputs": {"mesh": mesh_path.name}, "results": res,
            "warnings": _history_warnings(hf) + _history_warnings(he)}


def cmd_compare(args) -> dict:
    net = _load_net(args.input)
    cfg = _flow_config(args)
    rows = flows.compare_flows(net, cfg, area_tolerance=args.compare_area_tolerance,
                               area_multiplier=args.compare_area_weight, mcf_max_steps=args.mcf_steps)
    meshes = rows.pop("meshes")
    stem = _stem(args.input)
    outputs = {}
    for name, m in meshes.items():
        if m is None:
            continue
        p = _mesh_out(args, f"{stem}_{name}")
        write_mesh(p, m.positions, m.faces)
        outputs[name] = p.name
    table = {k: {"Q_max": v["Q"]["max"], "Q_mean": v["Q"]["mean"], "Q_std": v["Q"]["std"],
                 "eps_s_max": v["eps_s"]["max"], "eps_s_mean": v["eps_s"]["mean"], "eps_s_std": v["eps_s"]["std"],
                 "willmore": v["willmore"]}
             for k, v in rows.items() if isinstance(v, dict) and "Q" in v}
    warnings = [f"{k}: {w}" for k, v in rows.items() if isinstance(v, dict) for w in v.get("warnings", [])]
    mc = rows["mean_curvature"]
    if "error" in mc:
        warnings.append(f"mean_curvature: {mc['error']}")
    elif not mc.get("matched", False):
        warnings.append("mean_curvature: target Willmore energy not reached")
    resolved = cfg.resolved(net)
    resolved["compare"] = {"area_tolerance": args.compare_area_tolerance, "area_weight": args.compare_area_weight,
                           "mcf_steps": args.mcf_steps, "mcf_fraction": 0.9}
    return {"config": resolved, "outputs": outputs, "results": {"rows": rows, "table": table}, "warnings": warnings}


def cmd_spectrum(args) -> dict:
    net = _load_net(args.input)
    if args.k < 1:
        raise CommandError("k must be >= 1")
    if args.k > 4 * net.n_faces:
        raise CommandError(f"k={args.k} exceeds 4*|F|={4 * net.n_faces}")
    D = dirac.assemble_intrinsic(net)
    pairs = dirac.smallest_eigenpairs(D, net.face_areas, args.k)
    stem = _stem(args.input)
    outputs, values = [], []
    for n, p in enumerate(pairs):
        imm, info = apply_spin(net, p.vector)
        path = Path(args.out_dir) / f"{stem}_eig{n}.ply"
        write_mesh(path, imm.positions, imm.faces, {"phi_magnitude": np.linalg.norm(p.vector, axis=1)})
        outputs.append(path.name)
        values.append({"index": n, "eigenvalue": p.value, "residual": p.residual,
                       "integrability": info["integrability_residual"]})
    return {"config": {"k": args.k}, "outputs": {"meshes": outputs}, "results": {"eigenpairs": values},
            "warnings": []}


def cmd_synth(args) -> dict:
    V, F = synth.generate(args.shape, seed=args.seed, subdiv=args.subdiv, frequency=args.frequency,
                          axes=tuple(args.axes), amplitude=args.amplitude, bumps=args.bumps, width=args.width,
                          bend_angle=math.radians(args.bend_angle), major=args.major, minor=args.minor,
                          radius=args.radius)
    net = FaceEdgeNet(V, F)
    path = Path(args.output) if args.output else _mesh_out(args, args.shape)
    if not path.is_absolute() and args.output:
        path = Path(args.out_dir) / path
    write_mesh(path, V, F)
    cfg = {k: getattr(args, k) for k in ("shape", "subdiv", "frequency", "axes", "amplitude", "bumps", "width",
                                         "bend_angle", "major", "minor", "radius")}
    return {"config": cfg, "outputs": {"mesh": path.name},
            "results": {"vertices": net.n_vertices, "faces": net.n_faces, "genus": net.genus,
                        "total_area": net.total_area},
            "warnings": []}


def cmd_metrics(args) -> dict:
    src = _load_net(args.source)
    dst = _load_net(args.target)
    if src.n_faces != dst.n_faces or not np.array_equal(src.faces, dst.faces):
        raise CommandError("source and target meshes must share faces")
    rep = metrics.DeformationReport.from_nets(src, dst).to_dict()
    al = metrics.align_similarity(dst, src)
    mx, mean = metrics.point_to_surface_error(al.aligned, src)
    rep.update(max_err_rel_diag=mx / src.bbox_diagonal, mean_err=mean, willmore_source=metrics.willmore_energy(src))
    return {"config": {}, "outputs": {}, "results": rep, "warnings": []}


COMMANDS = {
    "fair": cmd_fair,
    "extrude": cmd_extrude,
    "roundtrip": cmd_roundtrip,
    "compare": cmd_compare,
    "spectrum": cmd_spectrum,
    "synth": cmd_synth,
    "metrics": cmd_metrics,
}


# ---------------------------------------------------------------- parser


def _add_flow_flags(p):
    p.add_argument("--tau", type=float, default=0.5, help="curvature shrink fraction per step")
    p.add_argument("--steps", type=int, default=10, help="maximum fairing steps")
    p.add_argument("--alpha", type=float, default=1.0, help="regularisation weight (scale-free)")
    p.add_argument("--beta", type=float, default=None, help="smoothness weight (default 0.1 x mean face area)")
    p.add_argument("--area-weight", type=float, default=None, help="area penalty multiplier lambda")
    p.add_argument("--area-tolerance", type=float, default=None, help="area change tolerance; enables the penalty")
    p.add_argument("--filter", type=float, default=None, help="curvature low-pass strength (area units)")
    p.add_argument("--exactness", action="store_true", help="project curvature updates (genus > 0)")
    p.add_argument("--closedness", action="store_true", help="enforce closedness by Newton projection")
    p.add_argument("--metric", choices=("source", "target"), default="source", help="Poisson metric")


def _global_flags(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed for synthetic shapes")
    p.add_argument("--threads", type=int, default=d(None), help="BLAS threads (SPINMESH_THREADS overrides)")
    p.add_argument("--log-level", default=d("WARNING"), choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    p.add_argument("--out-dir", default=d("."), help="directory for all outputs")
    p.add_argument("--format", choices=("ply", "obj", "off"), default=d("ply"), help="mesh output format")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinmesh", description="Spin-transformation flows on closed triangle meshes.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(ap, suppress=False)
    # the same flags are accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fair", parents=[common], help="flow a mesh to a sphere and save its curvature map")
    p.add_argument("input")
    _add_flow_flags(p)

    p = sub.add_parser("extrude", parents=[common], help="rebuild a shape from a sphere and a curvature sidecar")
    p.add_argument("sphere")
    p.add_argument("sidecar")
    _add_flow_flags(p)
    p.add_argument("--fraction", type=float, default=0.3, help="share of the curvature gap closed per step")
    p.add_argument("--extrude-steps", type=int, default=40)

    p = sub.add_parser("roundtrip", parents=[common], help="fair, extrude, align and measure the error")
    p.add_argument("input")
    _add_flow_flags(p)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--extrude-steps", type=int, default=40)
    p.add_argument("--timing", action="store_true", help="include wall time (breaks byte-identical reports)")

    p = sub.add_parser("compare", parents=[common], help="spin flows against a mean curvature flow baseline")
    p.add_argument("input")
    _add_flow_flags(p)
    p.add_argument("--compare-area-tolerance", type=float, default=0.1)
    p.add_argument("--compare-area-weight", type=float, default=1.0)
    p.add_argument("--mcf-steps", type=int, default=3000)

    p = sub.add_parser("spectrum", parents=[common], help="leading intrinsic Dirac eigenvectors as immersions")
    p.add_argument("input")
    p.add_argument("k", type=int)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic test shape")
    p.add_argument("shape", choices=synth.SHAPES)
    p.add_argument("--output", default=None, help="output path (default <out-dir>/<shape>.<format>)")
    p.add_argument("--subdiv", type=int, default=None)
    p.add_argument("--frequency", type=int, default=None)
    p.add_argument("--axes", type=float, nargs=3, default=[2.0, 1.0, 1.0])
    p.add_argument("--amplitude", type=float, default=0.7)
    p.add_argument("--bumps", type=int, default=12)
    p.add_argument("--width", type=float, default=0.25)
    p.add_argument("--bend-angle", type=float, default=90.0, help="degrees")
    p.add_argument("--major", type=int, default=None)
    p.add_argument("--minor", type=int, default=None)
    p.add_argument("--radius", type=float, default=1.0)

    p = sub.add_parser("metrics", parents=[common], help="deformation statistics between two meshes on the same faces")
    p.add_argument("source")
    p.add_argument("target")
    return ap


def _threads(args):
    env = os.environ.get("SPINMESH_THREADS")
    n = args.threads
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CommandError(f"SPINMESH_THREADS must be an integer, got {env!r}")
    if n is None:
        return None, nullcontext()
    if n < 1:
        raise CommandError("thread count must be >= 1")
    from threadpoolctl import threadpool_limits

    return n, threadpool_limits(limits=n)


def _report_stem(args) -> str:
    if args.command == "synth":
        return args.shape
    if args.command == "extrude":
        return _stem(args.sphere)
    if args.command == "metrics":
        return _stem(args.target)
    return _stem(args.input)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; map to the error code
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    collector = _WarningCollector()
    root = logging.getLogger("spinmesh")
    root.addHandler(collector)
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        threads, limit = _threads(args)
        with limit:
            out = COMMANDS[args.command](args)
    except (MeshFormatError, SidecarError, MeshConstructionError, CommandError, flows.FlowError,
            ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        root.removeHandler(collector)
    warnings = list(out.pop("warnings", []))
    for m in collector.messages:
        if m not in warnings:
            warnings.append(m)
    report = {
        "format_version": REPORT_VERSION,
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "threads": threads,
        "inputs": {k: Path(getattr(args, k)).name for k in ("input", "sphere", "sidecar", "source", "target")
                   if getattr(args, k, None)},
        **out,
        "warnings": warnings,
    }
    path = Path(args.out_dir) / f"{_report_stem(args)}.{args.command}.json"
    write_report(path, report)
    print(path)
    return EXIT_WARN if warnings else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
