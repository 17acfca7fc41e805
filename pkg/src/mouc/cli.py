"""Command-line entry point: gen, front, report, export, rerun.

Exit codes: 0 success (including time-capped fronts), 1 usage error,
2 infeasible instance or solver failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import io
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from mouc import __version__, moo, pareto, relax
from mouc._io import atomic_write_bytes, atomic_write_text
from mouc.instance import (InstanceParseError, InstanceValidationError, dumps,
                           generate_instance, load_instance)
from mouc.mip import BnbConfig, export_lp
from mouc.model import build_model

EXIT_OK, EXIT_USAGE, EXIT_SOLVE, EXIT_IO = 0, 1, 2, 3
HV_FACTOR = 1.2


class UsageError(Exception):
    pass


class SolveError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


def manifest_path(out) -> str:
    return os.fspath(out) + ".manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out, command: str, argv, params: dict, started: str, outputs: list,
                   instance_hash=None, seed=None) -> None:
    doc = {
        "tool": "mouc",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "instance_sha256": instance_hash,
        "parameters": params,
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
        "started": started,
        "finished": _now(),
    }
    atomic_write_text(manifest_path(out), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- gen

def cmd_gen(args, argv) -> int:
    started = _now()
    inst = generate_instance(args.thermal, args.hydro, args.periods, seed=args.seed,
                             hydro_scaling=args.hydro_scaling)
    atomic_write_text(args.out, dumps(inst))
    write_manifest(args.out, "gen", argv,
                   dict(thermal=args.thermal, hydro=args.hydro, periods=args.periods,
                        hydro_scaling=args.hydro_scaling),
                   started, [args.out], instance_hash=sha256_file(args.out), seed=args.seed)
    return EXIT_OK


# ---------------------------------------------------------------- front

def _load(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read instance {path}: {exc.strerror or exc}") from exc
    try:
        inst = load_instance(raw)
    except InstanceValidationError as exc:
        if "infeasible" in str(exc):
            raise SolveError(str(exc)) from exc
        raise
    return inst, sha256_bytes(raw)


def _sweep_config(args) -> moo.SweepConfig:
    return moo.SweepConfig(mode=args.mode, layers=args.layers, sharing=args.sharing,
                           time_cap_ms=args.time_cap,
                           step=args.step if args.step is not None else 0.1,
                           bounds=tuple(args.bounds) if args.bounds else None,
                           bnb=BnbConfig(), workers=moo.workers_from_env(1))


def _check_front_flags(args):
    if args.step is not None and not args.method.startswith("eps"):
        raise UsageError("--step applies only to --method eps1|eps2")
    if args.pairs is not None and args.method != "uniform":
        raise UsageError("--pairs applies only to --method uniform")
    if args.layers != 1 and args.mode != "mc":
        raise UsageError("--layers applies only to --mode mc")
    if args.time_cap is not None and args.time_cap < 0:
        raise UsageError("--time-cap must be >= 0")
    if args.step is not None and not 0 < args.step <= 1:
        raise UsageError("--step must lie in (0, 1]")
    if args.pairs is not None and args.pairs < 2:
        raise UsageError("--pairs must be >= 2")
    if args.layers < 1:
        raise UsageError("--layers must be >= 1")


def hv_row(n, method, relaxation, points, ref) -> dict:
    return dict(n=n, method=method, relaxation=relaxation, points=len(points),
                hv=pareto.hypervolume_2d(points, ref), ref1=float(ref[0]), ref2=float(ref[1]))


def hv_path(out) -> str:
    p = Path(out)
    return os.fspath(p.with_name(p.stem + ".hv.csv"))


def cmd_front(args, argv) -> int:
    _check_front_flags(args)
    started = _now()
    inst, digest = _load(args.instance)
    model = build_model(inst)
    cfg = _sweep_config(args)
    aws_params = moo.AwsParams(delta_J=args.delta_j, C=args.C, n_initial=args.n_initial,
                               max_rounds=args.max_rounds)
    try:
        front = moo.run_budgeted(model, args.method, cfg,
                                 n_pairs=args.pairs if args.pairs is not None else 10,
                                 params=aws_params)
    except moo.InfeasibleModelError as exc:
        raise SolveError(str(exc)) from exc
    if not front.points and front.status != moo.TIME_CAP_REACHED:
        raise SolveError("no subproblem produced a solution")
    if args.deterministic:
        front.points = pareto.relabel(front.points, solve_ms=0.0)
    text = pareto.front_csv_text(front, args.method)
    atomic_write_text(args.out, text)
    outputs = [args.out]
    hv_out = hv_path(args.out)
    buf = io.StringIO()
    rows = []
    if front.points:
        ref = pareto.reference_point(front.points, HV_FACTOR)
        rows.append(hv_row(model.n, args.method, cfg.relaxation, front.points, ref))
    pareto.write_hv_csv(rows, buf)
    atomic_write_text(hv_out, buf.getvalue())
    outputs.append(hv_out)
    if args.log:
        atomic_write_text(args.log, json.dumps(front.log, indent=1, default=float) + "\n")
        outputs.append(args.log)
    params = dict(method=args.method, mode=args.mode, layers=args.layers, sharing=args.sharing,
                  pairs=args.pairs, step=args.step, time_cap_ms=args.time_cap,
                  bounds=args.bounds, delta_j=args.delta_j, C=args.C, n_initial=args.n_initial,
                  max_rounds=args.max_rounds, deterministic=args.deterministic,
                  status=front.status, points=len(front.points))
    write_manifest(args.out, "front", argv, params, started, outputs, instance_hash=digest)
    print(f"{args.method} ({cfg.relaxation}): {len(front.points)} points, status {front.status}",
          file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- report

def _expand(patterns) -> list[str]:
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        if not hits and os.path.exists(pat):
            hits = [pat]
        for h in hits:
            if h.endswith(".hv.csv") or h.endswith(".manifest.json"):
                continue
            if h not in paths:
                paths.append(h)
    return paths


def cmd_report(args, argv) -> int:
    started = _now()
    paths = _expand(args.inputs)
    if not paths:
        raise UsageError("no input fronts matched")
    runs = []
    hashes = set()
    for path in paths:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                pts, markers = pareto.read_front_csv(fh.read())
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from exc
        meta = {}
        if os.path.exists(manifest_path(path)):
            meta = read_manifest(manifest_path(path))
            if meta.get("instance_sha256"):
                hashes.add(meta["instance_sha256"])
        params = meta.get("parameters", {})
        method = params.get("method") or (pts[0].method if pts else Path(path).stem)
        mode = params.get("mode", "")
        relaxation = mode if mode != "mc" else f"mc{params.get('layers', 1)}"
        label = f"{method}({relaxation})" if relaxation else method
        if any(r["label"] == label for r in runs):
            label = f"{label}[{Path(path).stem}]"
        status = params.get("status") or (markers[-1] if markers else "Completed")
        runs.append(dict(path=path, points=pts, status=status, method=method,
                         relaxation=relaxation, label=label,
                         total_ms=sum(p.solve_ms for p in pts)))
    if len(hashes) > 1:
        raise UsageError("inputs come from different instances (instance hashes differ)")
    everything = [p for r in runs for p in r["points"]]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref = pareto.reference_point(everything, args.factor) if everything else np.array([0.0, 0.0])

    summary = io.StringIO()
    summary.write("label,method,relaxation,points,hv,total_ms,status,ref1,ref2\n")
    for r in runs:
        hv = pareto.hypervolume_2d(r["points"], ref) if r["points"] else 0.0
        status = r["status"]
        summary.write(f"{r['label']},{r['method']},{r['relaxation']},{len(r['points'])},"
                      f"{hv!r},{float(r['total_ms'])!r},{status},{float(ref[0])!r},"
                      f"{float(ref[1])!r}\n")
    scatter = io.StringIO()
    scatter.write("f1,f2,method\n")
    for r in runs:
        for p in r["points"]:
            scatter.write(f"{p.f[0]!r},{p.f[1]!r},{r['label']}\n")
    outputs = [out_dir / "summary.csv", out_dir / "scatter.csv"]
    atomic_write_text(outputs[0], summary.getvalue())
    atomic_write_text(outputs[1], scatter.getvalue())
    if not args.no_plot:
        from mouc.plotting import front_scatter_png
        groups = {}
        for r in runs:
            groups.setdefault(r["label"], []).extend(p.f for p in r["points"])
        png = front_scatter_png({k: np.array(v) for k, v in groups.items()},
                                ref if everything else None)
        outputs.append(out_dir / "fronts.png")
        atomic_write_bytes(outputs[-1], png)
    write_manifest(out_dir / "report", "report", argv,
                   dict(inputs=paths, factor=args.factor),
                   started, [os.fspath(p) for p in outputs],
                   instance_hash=next(iter(hashes)) if hashes else None)
    return EXIT_OK


# ---------------------------------------------------------------- export

def cmd_export(args, argv) -> int:
    started = _now()
    inst, digest = _load(args.instance)
    model = build_model(inst)
    if args.bounds:
        anchors = moo.anchors_from_bounds(args.bounds)
    else:
        try:
            anchors = moo.utopia_nadir(model)
        except moo.InfeasibleModelError as exc:
            raise SolveError(str(exc)) from exc
    cfg = moo.SweepConfig(mode=args.mode, layers=args.layers, sharing=args.sharing)
    if args.epsilon is not None:
        j = args.constrained - 1
        p = moo.epsilon_subproblem(model, args.constrained, args.epsilon, anchors.utopia[j],
                                   anchors.nadir[j], anchors, cfg)
    else:
        p = moo.weighted_subproblem(model, args.lam, anchors, cfg=cfg)
    buf = io.StringIO()
    export_lp(p, buf, precision=args.precision, name=inst.name)
    atomic_write_text(args.out, buf.getvalue())
    write_manifest(args.out, "export", argv,
                   dict(lam=args.lam, epsilon=args.epsilon, constrained=args.constrained,
                        mode=args.mode, layers=args.layers, precision=args.precision,
                        bounds=args.bounds),
                   started, [args.out], instance_hash=digest)
    return EXIT_OK


# ---------------------------------------------------------------- rerun

def cmd_rerun(args, argv) -> int:
    doc = read_manifest(args.manifest)
    old = doc.get("argv")
    if not old:
        raise UsageError("manifest has no recorded command line")
    return main(old)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mouc", description="Multiobjective unit-commitment frontiers.")
    p.add_argument("--version", action="version", version=f"mouc {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--thermal", type=int, default=20)
    g.add_argument("--hydro", type=int, default=10)
    g.add_argument("--periods", type=int, default=24)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--hydro-scaling", type=float, default=0.5)
    g.add_argument("--out", required=True)

    f = sub.add_parser("front", help="compute a Pareto front")
    f.add_argument("--instance", required=True)
    f.add_argument("--method", choices=moo.METHODS, required=True)
    f.add_argument("--mode", choices=moo.MODES, default=moo.QUADCON)
    f.add_argument("--layers", type=int, default=1)
    f.add_argument("--sharing", choices=(relax.INDEPENDENT, relax.SHARED),
                   default=relax.INDEPENDENT)
    f.add_argument("--pairs", type=int)
    f.add_argument("--step", type=float)
    f.add_argument("--time-cap", type=float, metavar="MS")
    f.add_argument("--bounds", type=float, nargs=4, metavar=("L1", "U1", "L2", "U2"))
    f.add_argument("--delta-j", type=float, default=0.1)
    f.add_argument("--C", type=float, default=1.5)
    f.add_argument("--n-initial", type=int, default=10)
    f.add_argument("--max-rounds", type=int, default=20)
    f.add_argument("--deterministic", action="store_true",
                   help="write solve_ms as 0 so reruns are byte-identical")
    f.add_argument("--log", help="optional JSON run log")
    f.add_argument("--out", required=True)

    r = sub.add_parser("report", help="compare fronts under a shared reference point")
    r.add_argument("--inputs", nargs="+", required=True, metavar="GLOB")
    r.add_argument("--out", required=True, metavar="DIR")
    r.add_argument("--factor", type=float, default=HV_FACTOR)
    r.add_argument("--no-plot", action="store_true")

    e = sub.add_parser("export", help="write one scalarized subproblem as an LP file")
    e.add_argument("--instance", required=True)
    e.add_argument("--lam", type=float, default=0.5)
    e.add_argument("--epsilon", type=float)
    e.add_argument("--constrained", type=int, choices=(1, 2), default=2)
    e.add_argument("--mode", choices=moo.MODES, default=moo.QUADCON)
    e.add_argument("--layers", type=int, default=1)
    e.add_argument("--sharing", choices=(relax.INDEPENDENT, relax.SHARED),
                   default=relax.INDEPENDENT)
    e.add_argument("--bounds", type=float, nargs=4, metavar=("L1", "U1", "L2", "U2"))
    e.add_argument("--precision", type=int, default=17)
    e.add_argument("--out", required=True)

    rr = sub.add_parser("rerun", help="repeat a run from its manifest")
    rr.add_argument("manifest")
    return p


COMMANDS = {"gen": cmd_gen, "front": cmd_front, "report": cmd_report, "export": cmd_export,
            "rerun": cmd_rerun}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (gen, front, report, export, rerun)")
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"mouc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolveError as exc:
        print(f"mouc: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except (InstanceParseError, InstanceValidationError) as exc:
        print(f"mouc: invalid instance: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"mouc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
