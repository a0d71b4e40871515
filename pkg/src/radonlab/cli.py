"""Command-line entry point: ``radonlab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import op_norm_l2
from .flows import FlowConfig, canonical_w
from .grid import GridFunction
from .harness import (EXIT_GATED, EXIT_INTERNAL, EXIT_OK, ConfigError, Context, ExperimentConfig, check_conditions,
                      dumps, library_names, rows_to_csv, run_experiment, run_single_scan, smooth_test_functions)
from .kernels import cancellation_audit

log = logging.getLogger("radonlab")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 so that 2 stays reserved for gated failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INTERNAL, f"{self.prog}: error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's copy from clobbering a value given before it.
    p = _Parser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="experiment config JSON")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--grid", type=int, default=argparse.SUPPRESS, help="nodes per axis")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def _index(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="radonlab", parents=[common],
                                     description="Desk-scale experiments on multi-parameter singular Radon transforms.")
    parser.add_argument("--version", action="version", version=f"radonlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.add_argument("--scenario", default=None, help=f"one of {', '.join(library_names())} or a JSON file")
        return sp

    sp = add("check-conditions", "finite-type, algebraic and Hormander verdicts")
    sp.add_argument("--max-depth", type=int, default=4)

    sp = add("build-kernel", "describe a dyadic kernel family and audit its cancellation")
    sp.add_argument("--kind", choices=("cancelling", "broken", "lp"), default=None)
    sp.add_argument("--a", type=float, default=None, help="support radius")
    sp.add_argument("--J", type=_index, default=None, help="truncation, e.g. 4,4")

    for name, text in (("apply-op", "apply an operator to a grid function"),
                       ("estimate-norm", "L2 operator norm by power iteration")):
        sp = add(name, text)
        sp.add_argument("--op", choices=("T", "Tj", "D", "A", "M", "B", "sumD"), default="Tj")
        sp.add_argument("--j", type=_index, default=None, help="multi-index, e.g. 2,2")
        if name == "apply-op":
            sp.add_argument("--input", default=None, help="grid function (.rlgf or .csv); default a smooth bump")
            sp.add_argument("--output", default=None, help="where to write the result")
        else:
            sp.add_argument("--dense", action="store_true", help="also compute the dense oracle")

    sp = add("decay-scan", "almost-orthogonality norms against |j - k|")
    sp.add_argument("--range", type=int, default=4)
    sp.add_argument("--base", type=_index, default=None)
    sp.add_argument("--min-epsilon", type=float, default=None)

    sp = add("partial-sum", "norms of truncated kernels sum_{j <= J} T_j")
    sp.add_argument("--jmin", type=int, default=3)
    sp.add_argument("--jmax", type=int, default=8)
    sp.add_argument("--max-ratio", type=float, default=None)

    sp = add("square-function", "square function band, sign test and reconstruction")
    sp.add_argument("--jmax", type=int, default=4)
    sp.add_argument("--reconstruction-j", type=int, default=6)

    sp = add("maximal", "maximal averages over dyadic dilations")
    sp.add_argument("--levels", type=int, default=4)
    sp.add_argument("--ball-quad", type=int, default=6)

    sp = add("cc-ball", "sample a Carnot-Caratheodory ball")
    sp.add_argument("--xi", type=float, default=1.0)
    sp.add_argument("--paths", type=int, default=2000)
    sp.add_argument("--segments", type=int, default=4)

    sp = add("frobenius-chart", "build one Frobenius chart")
    sp.add_argument("--j0", type=_index, default=None)

    sp = add("uniformity-scan", "chart diagnostics across scales")
    sp.add_argument("--range", type=int, default=4)

    sp = add("w-field", "evaluate the canonical field W(t) at a point")
    sp.add_argument("--t", type=float, nargs="+", required=True)
    sp.add_argument("--x", type=float, nargs="+", default=None)

    add("run", "full experiment from --config")
    return parser


def _config(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if getattr(args, "scenario", None):
        data["scenario"] = args.scenario
    for key in ("seed", "threads", "format", "out"):
        if hasattr(args, key):
            data[key] = getattr(args, key)
    if hasattr(args, "grid"):
        data.setdefault("grid", {})["n"] = args.grid
    return ExperimentConfig.from_dict(data)


def _operator(ctx: Context, op: str, j):
    fac = ctx.factory()
    nu = ctx.gamma.nu
    j = tuple(j or [1] * nu)
    if op == "T":
        return fac.t_full()
    if op == "sumD":
        return fac.d_sum(max(j))
    return {"Tj": fac.t_piece, "D": fac.d, "A": fac.a, "M": fac.m, "B": fac.b}[op](j)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scan(cfg, kind, params, threshold=None) -> int:
    scan = {"kind": kind, "name": kind, "params": params}
    if threshold:
        scan["threshold"] = threshold
    res = run_single_scan(cfg, scan)
    s = res.summary["scans"][0] if res.summary.get("scans") else {}
    print(dumps({"status": s.get("status"), "summary": s.get("summary"), "gates": s.get("gates"),
                 "error": s.get("error"), "files": res.files}), end="")
    return res.exit_code


def dispatch(args) -> int:
    cfg = _config(args)
    cmd = args.command
    if cmd == "check-conditions":
        reports = check_conditions(cfg.scenario, args.max_depth)
        for name, rep in reports.items():
            note = " (vacuous)" if rep.details.get("vacuous") else ""
            print(f"{name}: {rep.verdict}{note}")
        out = _out_dir(cfg)
        (out / "conditions.json").write_text(dumps({"config": cfg.resolved,
                                                    "conditions": {k: r.to_dict() for k, r in reports.items()}}))
        gated = (reports["finite-type"], reports["algebraic"])
        return EXIT_OK if all(r.satisfied for r in gated) else EXIT_GATED
    if cmd == "build-kernel":
        ctx = Context(cfg)
        fam = ctx.family(args.J, args.kind, args.a)
        audit = cancellation_audit(fam)
        payload = {"config": cfg.resolved, "family": fam.to_dict(), "audit": audit}
        (_out_dir(cfg) / "kernel.json").write_text(dumps(payload))
        print(dumps({"family": fam.to_dict(), "audit": audit}), end="")
        return EXIT_OK if fam.kind != "cancelling" or audit["passed"] else EXIT_GATED
    if cmd == "apply-op":
        ctx = Context(cfg)
        op = _operator(ctx, args.op, args.j)
        f = GridFunction.load(args.input) if args.input else smooth_test_functions(op.grid, 1)[0]
        if f.grid != op.grid:
            raise ConfigError("input grid does not match the configured grid")
        result = op.apply(f)
        target = Path(args.output) if args.output else _out_dir(cfg) / f"{args.op}.rlgf"
        target.parent.mkdir(parents=True, exist_ok=True)
        result.save(target)
        print(dumps({"output": str(target), "input_norm": f.norm(2), "output_norm": result.norm(2)}), end="")
        return EXIT_OK
    if cmd == "estimate-norm":
        ctx = Context(cfg)
        est = op_norm_l2(_operator(ctx, args.op, args.j), dense_check=args.dense, **ctx.norm_kw())
        print(dumps(est.to_dict()), end="")
        return EXIT_OK
    if cmd == "decay-scan":
        th = {"min_epsilon": args.min_epsilon} if args.min_epsilon is not None else None
        return _scan(cfg, "cotlar", {"base": args.base, "distances": list(range(args.range + 1))}, th)
    if cmd == "partial-sum":
        nu = cfg.scenario.gamma.nu
        params = {"Jlist": [[J] * nu for J in range(args.jmin, args.jmax + 1)]}
        th = {"max_ratio": args.max_ratio} if args.max_ratio is not None else None
        return _scan(cfg, "partial-sum", params, th)
    if cmd == "square-function":
        return _scan(cfg, "square-function", {"Jmax": args.jmax, "reconstruction_J": args.reconstruction_j})
    if cmd == "maximal":
        return _scan(cfg, "maximal", {"levels": args.levels, "ball_quad": args.ball_quad})
    if cmd == "cc-ball":
        return _scan(cfg, "cc-ball", {"xi": args.xi, "paths": args.paths, "segments": args.segments})
    if cmd == "frobenius-chart":
        return _scan(cfg, "frobenius-chart", {"j0": args.j0})
    if cmd == "uniformity-scan":
        return _scan(cfg, "uniformity", {"range": args.range})
    if cmd == "w-field":
        gamma = cfg.scenario.gamma
        x = np.asarray(args.x if args.x is not None else cfg.scenario.box.mean(axis=1), dtype=float)
        t = np.asarray(args.t, dtype=float)
        if t.size != gamma.N or x.size != gamma.dim:
            raise ConfigError(f"need {gamma.N} values for --t and {gamma.dim} for --x")
        w = canonical_w(gamma, t, x, FlowConfig(step_count=256))
        row = {"t": t.tolist(), "x": x.tolist(), "W": w.tolist()}
        out = _out_dir(cfg)
        (out / "w_field.csv").write_text(rows_to_csv([row]))
        print(dumps(row), end="")
        return EXIT_OK
    if cmd == "run":
        res = run_experiment(cfg)
        print(Path(cfg["out"], "summary.txt").read_text(), end="")
        return res.exit_code
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"radonlab: config error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        log.exception("internal error")
        print(f"radonlab: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
