"""Experiment configuration, orchestration and deterministic artifact bundles."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .analysis import (bump_family, cotlar_scan, l1_delta_modulus, maximal_check,
                       partial_sum_growth, reconstruction_residual, refinement_gate, remainder_scan,
                       square_function_check, vector_decay_scan)
from .fields import ConditionReport, check_algebraic, check_hormander, default_probes, generate_closure, \
    search_finite_type
from .flows import FlowConfig
from .geometry import ScaledFrame, build_chart, cc_ball_sample, uniformity_scan
from .grid import DEFAULT_RADII, CutoffSet, Grid
from .kernels import BumpFamily, cancellation_audit
from .operators import OperatorFactory
from .scenarios import LIBRARY, Scenario, get_scenario, scenario_from_dict

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INTERNAL, EXIT_GATED = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

DEFAULTS: dict[str, Any] = {
    "scenario": "heisenberg",
    "seed": 0,
    "threads": 1,
    "out": "results",
    "format": "csv",
    "grid": {"n": 17, "box": None},
    "kernel": {"kind": "cancelling", "a": 0.25, "J": None},
    "cutoffs": {k: list(v) for k, v in DEFAULT_RADII.items()},
    "quadrature": {"t": 8, "sigma": 8, "lp": 32, "flow_steps": 16},
    "norm": {"tol": 1e-4, "max_iter": 200, "restarts": 3},
    "conditions": {"max_depth": 4, "probes": 100, "gated": False},
    "stability_gate": {"enabled": True, "j": None, "tol": 0.05, "fatal": False},
    "scans": [],
}

# Per-kind parameter defaults, and the threshold keys a gated scan must carry.
SCAN_DEFAULTS: dict[str, dict] = {
    "cotlar": {"base": None, "distances": [0, 1, 2, 3, 4]},
    "remainder": {"Jmax": 3, "Ms": [0, 1, 2, 3]},
    "partial-sum": {"Jlist": [[3, 3], [4, 4], [5, 5], [6, 6], [7, 7], [8, 8]]},
    "square-function": {"Jmax": 4, "functions": 3, "sign_sets": 20, "reconstruction_J": 6},
    "maximal": {"levels": 4, "ball_quad": 6, "scales": [0, 1, 2, 3, 4], "p": [1.5, 2.0, 4.0, "inf"]},
    "vector-decay": {"kind": "tkk", "Jmax": 3, "range": 3},
    "kernel-audit": {},
    "cc-ball": {"xi": 1.0, "paths": 2000, "segments": 4, "x0": None},
    "frobenius-chart": {"j0": None, "x0": None},
    "uniformity": {"range": 4, "x0": None},
    "l1-modulus": {"max_shift": 4},
}
THRESHOLDS: dict[str, tuple[str, ...]] = {
    "cotlar": ("min_epsilon",),
    "remainder": (),
    "partial-sum": ("max_ratio",),
    "square-function": ("max_signed_spread",),
    "maximal": ("max_spread",),
    "vector-decay": ("min_decay",),
    "kernel-audit": ("max_cancellation",),
    "cc-ball": ("axis", "min_reach"),
    "frobenius-chart": ("min_det_floor",),
    "uniformity": ("max_band",),
    "l1-modulus": (),
}
# Scans that measure operator norms need a grid that passed the refinement gate.
NEEDS_STABLE_GRID = {"cotlar", "remainder", "partial-sum", "vector-decay"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "scenario":
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    """Fully defaulted experiment description; ``resolved`` is echoed into every summary."""

    resolved: dict
    scenario: Scenario = field(repr=False)

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "ExperimentConfig":
        data = data or {}
        merged = _merge(DEFAULTS, {k: v for k, v in data.items() if k != "scans"})
        merged["scans"] = [_resolve_scan(s, i) for i, s in enumerate(data.get("scans", []))]
        scenario = _resolve_scenario(merged["scenario"])
        nu = scenario.gamma.nu
        if merged["kernel"]["J"] is None:
            merged["kernel"]["J"] = [4] * nu
        if len(merged["kernel"]["J"]) != nu:
            raise ConfigError(f"kernel.J needs {nu} entries")
        if merged["grid"]["box"] is None:
            merged["grid"]["box"] = scenario.box.tolist()
        if merged["stability_gate"]["j"] is None:
            merged["stability_gate"]["j"] = [min(2, J) for J in merged["kernel"]["J"]]
        if merged["format"] not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if int(merged["threads"]) < 1:
            raise ConfigError("threads must be >= 1")
        try:
            CutoffSet.for_box(merged["grid"]["box"], {k: tuple(v) for k, v in merged["cutoffs"].items()})
            BumpFamily(scenario.gamma.factor_dims, merged["kernel"]["a"], merged["kernel"]["J"],
                       merged["kernel"]["kind"])
            Grid.uniform(merged["grid"]["box"], merged["grid"]["n"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(merged, scenario)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def __getitem__(self, key):
        return self.resolved[key]


def _resolve_scenario(spec) -> Scenario:
    try:
        if isinstance(spec, dict):
            return scenario_from_dict(spec)
        return get_scenario(spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_scan(scan: dict, index: int) -> dict:
    if not isinstance(scan, dict) or "kind" not in scan:
        raise ConfigError(f"scan #{index} needs a 'kind'")
    kind = scan["kind"]
    if kind not in SCAN_DEFAULTS:
        raise ConfigError(f"unknown scan kind {kind!r}; known: {sorted(SCAN_DEFAULTS)}")
    unknown = set(scan) - {"kind", "name", "gated", "fatal", "threshold", "params"}
    if unknown:
        raise ConfigError(f"scan #{index} has unknown keys {sorted(unknown)}")
    params = _merge(SCAN_DEFAULTS[kind], scan.get("params", {}), f"scans[{index}].params.")
    threshold = dict(scan.get("threshold", {}))
    gated = bool(scan.get("gated", bool(threshold)))
    missing = [k for k in THRESHOLDS[kind] if k not in threshold]
    if gated and missing:
        raise ConfigError(f"gated scan #{index} ({kind}) is missing thresholds {missing}")
    return {"kind": kind, "name": scan.get("name", f"{index:02d}-{kind}"), "gated": gated,
            "fatal": bool(scan.get("fatal", False)), "threshold": threshold, "params": params}


# ---------------------------------------------------------------------------
# experiment context


class Context:
    """Shared, lazily built objects for one experiment."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.scenario = config.scenario
        self.gamma = config.scenario.gamma
        self._factories: dict = {}

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    def norm_kw(self, salt: int = 0) -> dict:
        n = self.config["norm"]
        return {"tol": n["tol"], "max_iter": n["max_iter"], "restarts": n["restarts"], "seed": self.seed + salt}

    def grid(self, n: int | None = None) -> Grid:
        g = self.config["grid"]
        return Grid.uniform(g["box"], n or g["n"])

    def family(self, J=None, kind=None, a=None) -> BumpFamily:
        k = self.config["kernel"]
        return BumpFamily(self.gamma.factor_dims, a or k["a"], tuple(J or k["J"]), kind or k["kind"])

    def factory(self, n: int | None = None, J=None, kind=None, tquad=None, a=None) -> OperatorFactory:
        key = (n, None if J is None else tuple(J), kind, tquad, a)
        if key not in self._factories:
            q = self.config["quadrature"]
            grid = self.grid(n)
            cutoffs = CutoffSet.for_box(grid.box, {k: tuple(v) for k, v in self.config["cutoffs"].items()})
            self._factories[key] = OperatorFactory(
                self.gamma, grid, cutoffs=cutoffs, family=self.family(J, kind, a),
                flow_cfg=FlowConfig(step_count=q["flow_steps"]), tquad=tquad or q["t"],
                sigma_quad=q["sigma"], lp_quad=q["lp"])
        return self._factories[key]


# ---------------------------------------------------------------------------
# conditions


def check_conditions(scenario: Scenario, max_depth: int = 4, probe_count: int = 100) -> dict[str, ConditionReport]:
    """Finite-type, algebraic and Hormander verdicts for a scenario."""
    probes = default_probes(scenario.box, probe_count)
    closure = generate_closure(scenario.gamma, max_depth=max_depth, probes=probes)
    finite = search_finite_type(closure, probes)
    algebraic = check_algebraic(scenario.gamma, closure, probes)
    center = scenario.box.mean(axis=1)
    hormander = check_hormander([e.field for e in scenario.gamma.pure()], center, max_depth)
    return {"finite-type": finite, "algebraic": algebraic, "hormander": hormander}


# ---------------------------------------------------------------------------
# scans: each returns (summary dict, table rows, gate checks)

ScanResult = tuple[dict, list[dict], dict[str, bool]]


def _scan_cotlar(ctx: Context, p: dict, th: dict) -> ScanResult:
    r = cotlar_scan(ctx.factory(), p["base"], p["distances"], ctx.norm_kw())
    norms = [r["max_by_distance"][k] for k in sorted(r["max_by_distance"], key=int)]
    monotone = all(b < a for a, b in zip(norms, norms[1:]))
    summary = {"epsilon": r["decay_exponent"], "max_by_distance": r["max_by_distance"], "monotone": monotone}
    rows = [{"j": row["j"], "k": row["k"], "distance": row["distance"], "TjStarTk": row["TjStarTk"],
             "TjTkStar": row["TjTkStar"], "method": "power-iteration"} for row in r["rows"]]
    gates = {}
    if "min_epsilon" in th:
        gates["epsilon"] = r["decay_exponent"] > th["min_epsilon"]
        gates["monotone"] = monotone
    return summary, rows, gates


def _scan_remainder(ctx: Context, p: dict, th: dict) -> ScanResult:
    r = remainder_scan(ctx.factory(), p["Jmax"], p["Ms"], ctx.norm_kw())
    return {"decreasing": r["decreasing"]}, r["rows"], {"decreasing": r["decreasing"]}


def _scan_partial_sum(ctx: Context, p: dict, th: dict) -> ScanResult:
    Jlist = [tuple(J) for J in p["Jlist"]]
    top = tuple(max(J[i] for J in Jlist) for i in range(ctx.gamma.nu))
    r = partial_sum_growth(ctx.factory(J=top), Jlist, ctx.norm_kw())
    norms = [row["norm"] for row in r["rows"]]
    summary = {"last_over_first": norms[-1] / norms[0], "increasing": all(b > a for a, b in zip(norms, norms[1:]))}
    gates = {}
    if "max_ratio" in th:
        gates["last_over_first"] = summary["last_over_first"] < th["max_ratio"]
    if th.get("increasing"):
        gates["increasing"] = summary["increasing"]
    return summary, r["rows"], gates


def smooth_test_functions(grid: Grid, count: int) -> list:
    """Grid-resolved smooth functions inside the plateau of psi0."""
    c = grid.box.mean(axis=1)
    half = (grid.box[:, 1] - grid.box[:, 0]) / 2
    x = (grid.points - c) / half
    specs = [(0.3, 2.0), (0.2, 5.0), (0.25, 8.0), (0.35, 3.0), (0.22, 6.0)]
    out = []
    for width, freq in specs[:count]:
        r2 = np.sum(x * x, axis=1)
        phase = freq * x[:, 0] + (x[:, 1] if grid.dim > 1 else 0.0)
        out.append(grid.function(np.exp(-r2 / (2 * width**2)) * (1 + 0.5 * np.sin(phase))))
    return out


def _scan_square_function(ctx: Context, p: dict, th: dict) -> ScanResult:
    fac = ctx.factory()
    fs = smooth_test_functions(fac.grid, p["functions"])
    r = square_function_check(fac, p["Jmax"], fs, p["sign_sets"], ctx.seed)
    recon = reconstruction_residual(fac, p["reconstruction_J"], fs[0])
    summary = {"band": [r["lower"], r["upper"]], "signed_spread": r["signed_spread"],
               "signed_upper": r["signed_upper"], "reconstruction": recon}
    gates = {}
    if "max_signed_spread" in th:
        gates["signed_spread"] = r["signed_spread"] < th["max_signed_spread"]
    if "max_reconstruction" in th:
        gates["reconstruction"] = recon["relative"] < th["max_reconstruction"]
    rows = [dict(f=i, **row) for i, row in enumerate(r["rows"])]
    return summary, rows, gates


def _scan_maximal(ctx: Context, p: dict, th: dict) -> ScanResult:
    fac = ctx.factory()
    nu = ctx.gamma.nu
    deltas = [tuple(2.0**-e for e in es) for es in np.ndindex(*(p["levels"] + 1,) * nu)]
    M = fac.maximal(deltas, p["ball_quad"])
    pv = [math.inf if v == "inf" else float(v) for v in p["p"]]
    r = maximal_check(M, bump_family(fac.grid, p["scales"]), pv)
    summary = {"spread": r["spread"], "max_ratio": r["max_ratio"], "linf_bound_holds": r["linf_bound_holds"]}
    gates = {"linf_bound": r["linf_bound_holds"]}
    if "max_spread" in th:
        gates["spread"] = max(r["spread"].values()) < th["max_spread"]
    rows = [{"scale": p["scales"][row["f"]], "p": row["p"], "ratio": row["ratio"]} for row in r["rows"]]
    return summary, rows, gates


def _scan_vector_decay(ctx: Context, p: dict, th: dict) -> ScanResult:
    nu = ctx.gamma.nu
    if p["kind"] == "tkk":
        shifts = [((m,) + (0,) * (nu - 1), (0,) * nu) for m in range(p["range"] + 1)]
    else:
        shifts = [(m,) + (0,) * (nu - 1) for m in range(p["range"] + 1)]
    r = vector_decay_scan(ctx.factory(), p["Jmax"], p["kind"], shifts, ctx.norm_kw())
    pts = [(row["size"], row["norm"]) for row in r["rows"] if row["norm"] > 0]
    decay = float("nan")
    if len(pts) >= 2:
        decay = -float(np.polyfit([a for a, _ in pts], np.log2([b for _, b in pts]), 1)[0])
    gates = {"decay": decay > th["min_decay"]} if "min_decay" in th else {}
    return {"decay": decay}, r["rows"], gates


def _scan_kernel_audit(ctx: Context, p: dict, th: dict) -> ScanResult:
    audit = cancellation_audit(ctx.family())
    worst = float(audit["max_rel_integral"])
    gates = {"cancellation": worst < th["max_cancellation"]} if "max_cancellation" in th else {}
    row = {"max_rel_integral": worst, "checks": audit["checks"], "worst_member": audit["worst_member"]}
    return {"worst": worst, "checks": audit["checks"]}, [row], gates


def _x0(ctx: Context, value) -> np.ndarray:
    return ctx.scenario.box.mean(axis=1) if value is None else np.asarray(value, dtype=float)


def _base_frame(ctx: Context) -> list:
    return ctx.factory().finite_set


def _scan_cc_ball(ctx: Context, p: dict, th: dict) -> ScanResult:
    frame = ScaledFrame(list(ctx.gamma.pure()), (0,) * ctx.gamma.nu)
    cloud = cc_ball_sample(frame, _x0(ctx, p["x0"]), p["xi"], p["paths"], p["segments"], ctx.seed)
    x0 = _x0(ctx, p["x0"])
    reach = np.max(np.abs(cloud.points - x0), axis=0).tolist()
    summary = dict(cloud.to_dict(), reach=reach)
    gates = {}
    if "axis" in th:
        gates["reach"] = reach[int(th["axis"])] > th["min_reach"] * p["xi"] ** 2
    rows = [{f"x{i}": float(v) for i, v in enumerate(pt)} for pt in cloud.points]
    return summary, rows, gates


def _scan_frobenius_chart(ctx: Context, p: dict, th: dict) -> ScanResult:
    frame = ScaledFrame(_base_frame(ctx), tuple(p["j0"] or (0,) * ctx.gamma.nu))
    chart = build_chart(frame, _x0(ctx, p["x0"]))
    summary = chart.to_dict()
    gates = {"det_floor": chart.det_floor > th["min_det_floor"]} if "min_det_floor" in th else {}
    return summary, [], gates


def _scan_uniformity(ctx: Context, p: dict, th: dict) -> ScanResult:
    nu = ctx.gamma.nu
    j0s = [list(j) for j in np.ndindex(*(p["range"] + 1,) * nu)]
    r = uniformity_scan(_base_frame(ctx), _x0(ctx, p["x0"]), j0s)
    rows = [{k: v for k, v in row.items() if k != "diagnostics"} for row in r["rows"]]
    gates = {}
    if "max_band" in th:
        gates["det_floor_band"] = r["bands"]["det_floor"] is not None and r["bands"]["det_floor"] < th["max_band"]
    return {"bands": r["bands"], "failures": sum("error" in row for row in rows)}, rows, gates


def _scan_l1_modulus(ctx: Context, p: dict, th: dict) -> ScanResult:
    grid = ctx.grid()
    h = bump_family(grid, [0])[0]
    dim = grid.dim
    reach = max(1, int(0.25 * (grid.shape[0] - 1)))
    shifts = [tuple(m if i == 0 else 0 for i in range(dim)) for m in range(1, min(p["max_shift"], reach) + 1)]
    r = l1_delta_modulus(h, shifts)
    return {"modulus": r["modulus"], "growth_exponent": r["growth_exponent"]}, r["rows"], {}


SCANS: dict[str, Callable[[Context, dict, dict], ScanResult]] = {
    "cotlar": _scan_cotlar,
    "remainder": _scan_remainder,
    "partial-sum": _scan_partial_sum,
    "square-function": _scan_square_function,
    "maximal": _scan_maximal,
    "vector-decay": _scan_vector_decay,
    "kernel-audit": _scan_kernel_audit,
    "cc-ball": _scan_cc_ball,
    "frobenius-chart": _scan_frobenius_chart,
    "uniformity": _scan_uniformity,
    "l1-modulus": _scan_l1_modulus,
}


def run_scan(ctx: Context, scan: dict) -> dict:
    """Run one resolved scan; failures are captured, not raised."""
    try:
        summary, rows, gates = SCANS[scan["kind"]](ctx, scan["params"], scan["threshold"])
        status = "ok"
        if scan["gated"]:
            status = "pass" if all(gates.values()) else "fail"
        return {"name": scan["name"], "kind": scan["kind"], "status": status, "summary": summary,
                "gates": gates, "rows": rows}
    except Exception as exc:
        log.warning("scan %s failed: %s", scan["name"], exc)
        return {"name": scan["name"], "kind": scan["kind"], "status": "error",
                "error": f"{type(exc).__name__}: {exc}", "summary": {}, "gates": {}, "rows": []}


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    files: list[str]


def ordered_map(fn: Callable, items: list, threads: int = 1) -> list:
    """map that preserves input order; threads > 1 runs items concurrently."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_experiment(config: ExperimentConfig, out: str | Path | None = None) -> RunResult:
    """Condition checks, then the stability gate, then the scans; writes the bundle."""
    ctx = Context(config)
    cfg = config.resolved
    summary: dict = {"version": __version__, "schema_version": SCHEMA_VERSION, "config": cfg,
                     "scenario": ctx.scenario.to_dict()}
    gated_failure = False

    cond_cfg = cfg["conditions"]
    reports = check_conditions(ctx.scenario, cond_cfg["max_depth"], cond_cfg["probes"])
    summary["conditions"] = {k: r.to_dict() for k, r in reports.items()}
    if cond_cfg["gated"] and not all(r.satisfied for k, r in reports.items() if k != "hormander"):
        gated_failure = True

    scans = cfg["scans"]
    gate_cfg = cfg["stability_gate"]
    stable = True
    if gate_cfg["enabled"] and any(s["kind"] in NEEDS_STABLE_GRID for s in scans):
        f = lambda p: np.exp(-np.sum((p - ctx.scenario.box.mean(axis=1)) ** 2, axis=1) / 0.18)
        j = tuple(gate_cfg["j"])
        gate = refinement_gate(lambda g: ctx.factory(g.shape[0]).t_piece(j), ctx.grid(), f, gate_cfg["tol"])
        summary["stability_gate"] = gate
        stable = gate["passed"]
        if not stable:
            gated_failure = True

    results = []
    if stable or not gate_cfg["fatal"]:
        todo = [s for s in scans if stable or s["kind"] not in NEEDS_STABLE_GRID]
        done = dict(zip((s["name"] for s in todo), ordered_map(lambda s: run_scan(ctx, s), todo,
                                                                 int(cfg["threads"]))))
        for s in scans:
            if s["name"] in done:
                res = done[s["name"]]
            else:
                res = {"name": s["name"], "kind": s["kind"], "status": "skipped",
                       "error": "grid failed the refinement-stability gate", "summary": {}, "gates": {},
                       "rows": []}
            results.append(res)
            if res["status"] == "fail" or (res["status"] == "error" and s["gated"]):
                gated_failure = True
            if res["status"] == "error" and s["fatal"]:
                summary["scans"] = [_scan_summary(r) for r in results]
                files = write_bundle(out or cfg["out"], summary, results, cfg["format"])
                return RunResult(EXIT_INTERNAL, summary, files)
    summary["scans"] = [_scan_summary(r) for r in results]
    summary["passed"] = not gated_failure
    files = write_bundle(out or cfg["out"], summary, results, cfg["format"])
    return RunResult(EXIT_GATED if gated_failure else EXIT_OK, summary, files)


def _scan_summary(result: dict) -> dict:
    return {k: v for k, v in result.items() if k != "rows"}


# ---------------------------------------------------------------------------
# deterministic output


def jsonable(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    columns = sorted({k for row in rows for k in row})
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v) -> str:
    v = jsonable(v)
    if v is None:
        return ""
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return repr(v) if isinstance(v, float) else str(v)


def write_bundle(out, summary: dict, results: list[dict], fmt: str = "csv") -> list[str]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for res in results:
        if fmt == "csv":
            path = out / f"{res['name']}.csv"
            path.write_text(rows_to_csv(res["rows"]))
        else:
            path = out / f"{res['name']}.json"
            path.write_text(dumps({"config": summary["config"], "rows": res["rows"],
                                   "summary": res["summary"]}))
        written.append(path.name)
    (out / "summary.json").write_text(dumps(summary))
    (out / "summary.txt").write_text(summary_text(summary))
    return sorted(written + ["summary.json", "summary.txt"])


def summary_text(summary: dict) -> str:
    lines = [f"scenario: {summary['scenario']['name']}"]
    for name, rep in summary.get("conditions", {}).items():
        lines.append(f"{name}: {'PASS' if rep['satisfied'] else 'FAIL'}")
    if "stability_gate" in summary:
        g = summary["stability_gate"]
        lines.append(f"stability gate: {'PASS' if g['passed'] else 'FAIL'} "
                     f"(relative change {g['relative_change']:.3g})")
    for s in summary.get("scans", []):
        line = f"scan {s['name']}: {s['status'].upper()}"
        if s.get("gates"):
            line += " [" + ", ".join(f"{k}={'PASS' if v else 'FAIL'}" for k, v in sorted(s["gates"].items())) + "]"
        if s.get("error"):
            line += f" ({s['error']})"
        lines.append(line)
    if "passed" in summary:
        lines.append("overall: " + ("PASS" if summary["passed"] else "FAIL"))
    return "\n".join(lines) + "\n"


def library_names() -> list[str]:
    return sorted(LIBRARY)


def run_single_scan(config: ExperimentConfig, scan: dict, out: str | Path | None = None) -> RunResult:
    """One scan outside the full pipeline; the refinement gate still guards norm scans."""
    ctx = Context(config)
    cfg = config.resolved
    resolved = _resolve_scan(scan, 0)
    summary: dict = {"version": __version__, "schema_version": SCHEMA_VERSION, "config": cfg,
                     "scenario": ctx.scenario.to_dict()}
    gate_cfg = cfg["stability_gate"]
    if gate_cfg["enabled"] and resolved["kind"] in NEEDS_STABLE_GRID:
        j = tuple(gate_cfg["j"])
        f = lambda p: np.exp(-np.sum((p - ctx.scenario.box.mean(axis=1)) ** 2, axis=1) / 0.18)
        summary["stability_gate"] = refinement_gate(lambda g: ctx.factory(g.shape[0]).t_piece(j),
                                                    ctx.grid(), f, gate_cfg["tol"])
        if not summary["stability_gate"]["passed"] and gate_cfg["fatal"]:
            files = write_bundle(out or cfg["out"], summary, [], cfg["format"])
            return RunResult(EXIT_GATED, summary, files)
    res = run_scan(ctx, resolved)
    summary["scans"] = [_scan_summary(res)]
    failed = res["status"] == "fail" or not summary.get("stability_gate", {"passed": True})["passed"]
    summary["passed"] = not failed and res["status"] != "error"
    files = write_bundle(out or cfg["out"], summary, [res], cfg["format"])
    code = EXIT_INTERNAL if res["status"] == "error" else EXIT_GATED if failed else EXIT_OK
    return RunResult(code, summary, files)
