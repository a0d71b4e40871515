"""Carnot-Caratheodory balls and first-kind coordinate charts for scaled frames."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .fields import (
    ConditionReport,
    DegreedField,
    GammaSpec,
    VectorField,
    default_probes,
    lie_bracket,
    span_fit,
)
from .flows import FlowConfig, flow

log = logging.getLogger(__name__)


class GeometryError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def linear_gamma(fields: Sequence[VectorField]) -> GammaSpec:
    """gamma_u(x) = exp(sum_i u_i Z_i) x as a one-factor GammaSpec."""
    q = len(fields)
    terms = {tuple(int(i == k) for i in range(q)): Z for k, Z in enumerate(fields)}
    return GammaSpec((q,), terms)


@dataclass
class ScaledFrame:
    """Z_i = 2^{-j0 . d_i} X_i for a degreed base list."""

    base: list[DegreedField]
    j0: tuple[int, ...]

    def __post_init__(self):
        self.j0 = tuple(int(v) for v in self.j0)
        if not self.base:
            raise GeometryError("empty frame")
        nu = len(self.base[0].degree.components)
        if len(self.j0) != nu:
            raise GeometryError(f"j0 has {len(self.j0)} entries, degrees have {nu}")

    def scale(self, i: int) -> float:
        d = self.base[i].degree.components
        return 2.0 ** (-sum(j * e for j, e in zip(self.j0, d)))

    @property
    def fields(self) -> list[VectorField]:
        if not hasattr(self, "_fields"):
            self._fields = [b.field.scaled(self.scale(i)) for i, b in enumerate(self.base)]
        return self._fields

    @property
    def labels(self) -> list[str]:
        return [b.label for b in self.base]

    @property
    def dim(self) -> int:
        return self.base[0].field.dim

    def matrix(self, x) -> np.ndarray:
        """n x q matrix [Z_1(x) ... Z_q(x)]."""
        return np.stack([Z(np.asarray(x, dtype=float)) for Z in self.fields], axis=-1)

    def bracket_coefficients(self, probes: np.ndarray) -> dict:
        """Largest minimum-norm coefficient and residual expressing [Z_i, Z_k] in span{Z_l} at the probes."""
        worst_c, worst_r = 0.0, 0.0
        Zs = self.fields
        cols = [Z(probes) for Z in Zs]
        for i, k in itertools.combinations(range(len(Zs)), 2):
            resid, coef = span_fit(lie_bracket(Zs[i], Zs[k])(probes), cols)
            worst_c = max(worst_c, float(coef.max()))
            worst_r = max(worst_r, float(resid.max()))
        return {"max_coefficient": worst_c, "max_residual": worst_r}

    def to_dict(self) -> dict:
        return {"labels": self.labels, "j0": list(self.j0),
                "degrees": [list(b.degree.components) for b in self.base]}


# ---------------------------------------------------------------------------
# Carnot-Caratheodory balls


@dataclass
class CloudReport:
    points: np.ndarray
    dropped: int
    path_count: int

    def to_dict(self) -> dict:
        return {"path_count": self.path_count, "dropped": self.dropped,
                "kept": int(self.points.shape[0])}


def cc_ball_sample(frame: ScaledFrame, x0, xi: float, path_count: int = 2000, segment_count: int = 4,
                   seed: int = 0, box=None, controls: np.ndarray | None = None,
                   cfg: FlowConfig | None = None) -> CloudReport:
    """Endpoints of paths x' = sum_i a_i(t) Z_i(x) with piecewise-constant |a_i| <= xi.

    ``controls`` (paths, segments, q) overrides the uniform random draw.
    Paths leaving ``box`` at a segment end are dropped and counted.
    """
    if xi <= 0:
        raise GeometryError("xi must be positive")
    q = len(frame.fields)
    if controls is None:
        rng = np.random.default_rng(seed)
        controls = rng.uniform(-xi, xi, size=(path_count, segment_count, q))
    controls = np.asarray(controls, dtype=float)
    path_count, segment_count = controls.shape[:2]
    g = linear_gamma(frame.fields)
    cfg = cfg or FlowConfig(step_count=16)
    x = np.tile(np.asarray(x0, dtype=float), (path_count, 1))
    alive = np.ones(path_count, dtype=bool)
    box = None if box is None else np.asarray(box, dtype=float)
    for s in range(segment_count):
        idx = np.nonzero(alive)[0]
        x[idx] = flow(g, controls[idx, s] / segment_count, x[idx], cfg)
        if box is not None:
            out = np.any((x < box[:, 0]) | (x > box[:, 1]), axis=1)
            alive &= ~out
    dropped = int(path_count - alive.sum())
    if dropped > path_count / 2:
        raise GeometryError(f"{dropped} of {path_count} paths left the box", {"dropped": dropped})
    return CloudReport(x[alive], dropped, path_count)


def square_loop_controls(xi: float, q: int, i: int = 0, k: int = 1) -> np.ndarray:
    """One path running Z_i, Z_k, -Z_i, -Z_k at full strength."""
    c = np.zeros((1, 4, q))
    c[0, 0, i], c[0, 1, k], c[0, 2, i], c[0, 3, k] = xi, xi, -xi, -xi
    return c


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class ChartConfig:
    rank_tol: float = 1e-8
    det_threshold: float = 1e-3
    mesh_per_axis: int = 9
    eta_max: float = 1.0
    eta_min: float = 2.0**-6
    fd_step: float = 1e-5
    injectivity_tol: float = 1e-9
    step_count: int = 64


@dataclass
class FrobeniusChart:
    frame: ScaledFrame
    x0: np.ndarray
    n0: int
    eta: float
    selection: tuple[int, ...]
    cfg: ChartConfig
    det_floor: float = 0.0
    c_bound: float = 0.0
    min_separation: float = 0.0
    pullback_residual: float = 0.0
    mesh: np.ndarray = field(default=None, repr=False)

    @property
    def _gamma(self) -> GammaSpec:
        return linear_gamma([self.frame.fields[i] for i in self.selection])

    @property
    def flow_cfg(self) -> FlowConfig:
        return FlowConfig(step_count=self.cfg.step_count)

    def phi(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return flow(self._gamma, u, np.tile(self.x0, (u.shape[0], 1)), self.flow_cfg)

    def dphi(self, u) -> np.ndarray:
        """(m, n, n0) central-difference Jacobian of Phi."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        h = self.cfg.fd_step
        m = u.shape[0]
        offsets = np.concatenate([np.eye(self.n0) * h, -np.eye(self.n0) * h])
        pts = (u[:, None, :] + offsets[None]).reshape(-1, self.n0)
        vals = self.phi(pts).reshape(m, 2 * self.n0, -1)
        return np.transpose((vals[:, :self.n0] - vals[:, self.n0:]) / (2 * h), (0, 2, 1))

    def pullback(self, X: VectorField, u) -> tuple[np.ndarray, np.ndarray]:
        """Chart components of X at Phi(u) (least squares) and the residual norms."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        J = self.dphi(u)
        rhs = X(self.phi(u))
        out = np.empty((u.shape[0], self.n0))
        res = np.empty(u.shape[0])
        for p in range(u.shape[0]):
            sol, *_ = np.linalg.lstsq(J[p], rhs[p], rcond=None)
            out[p] = sol
            res[p] = np.linalg.norm(J[p] @ sol - rhs[p])
        return out, res

    def pullback_field(self, X: VectorField, name: str | None = None) -> VectorField:
        return VectorField.from_callable(self.n0, lambda u: self.pullback(X, u)[0], name=name)

    def invert(self, points: np.ndarray, iterations: int = 30, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Newton preimages under Phi, started at u = 0; returns (u, residual)."""
        points = np.atleast_2d(points)
        u = np.zeros((points.shape[0], self.n0))
        for _ in range(iterations):
            r = self.phi(u) - points
            if np.max(np.linalg.norm(r, axis=1)) < tol:
                break
            J = self.dphi(u)
            step = np.stack([np.linalg.lstsq(J[p], r[p], rcond=None)[0] for p in range(len(u))])
            u = u - step
        return u, np.linalg.norm(self.phi(u) - points, axis=1)

    def to_dict(self) -> dict:
        return {"x0": self.x0.tolist(), "n0": self.n0, "eta": self.eta,
                "selection": [self.frame.labels[i] for i in self.selection],
                "det_floor": self.det_floor, "c_bound": self.c_bound,
                "min_separation": self.min_separation, "pullback_residual": self.pullback_residual,
                "frame": self.frame.to_dict()}


def select_subframe(Z: np.ndarray, rank_tol: float) -> tuple[int, tuple[int, ...]]:
    """Leaf dimension and a greedy pivoted max-volume column selection."""
    s = np.linalg.svd(Z, compute_uv=False)
    scale = max(float(s[0]), 1.0) if s.size else 1.0
    n0 = int(np.sum(s > rank_tol * scale))
    if n0 == 0:
        return 0, ()
    _, _, piv = linalg.qr(Z, pivoting=True, mode="economic")
    return n0, tuple(sorted(int(p) for p in piv[:n0]))


def _mesh(n0: int, eta: float, per_axis: int) -> np.ndarray:
    """Tensor mesh on [-eta, eta]^n0 restricted to the closed ball."""
    axis = np.linspace(-eta, eta, per_axis)
    pts = np.stack(np.meshgrid(*([axis] * n0), indexing="ij"), -1).reshape(-1, n0)
    return pts[np.linalg.norm(pts, axis=1) <= eta * (1 + 1e-12)]


def _chart_diagnostics(chart: FrobeniusChart) -> None:
    cfg = chart.cfg
    mesh = _mesh(chart.n0, chart.eta, cfg.mesh_per_axis)
    chart.mesh = mesh
    images = chart.phi(mesh)
    diffs = images[:, None, :] - images[None, :, :]
    dist = np.linalg.norm(diffs, axis=-1)
    dist[np.diag_indices(len(mesh))] = np.inf
    chart.min_separation = float(dist.min()) if len(mesh) > 1 else np.inf
    Ys, resid = [], 0.0
    for Z in chart.frame.fields:
        Y, r = chart.pullback(Z, mesh)
        Ys.append(Y)
        resid = max(resid, float(r.max()))
    chart.pullback_residual = resid
    Ys = np.stack(Ys, axis=-1)  # (m, n0, q)
    q = Ys.shape[-1]
    best = np.zeros(len(mesh))
    for sub in itertools.combinations(range(q), chart.n0):
        best = np.maximum(best, np.abs(np.linalg.det(Ys[:, :, list(sub)])))
    chart.det_floor = float(best.min())
    # C^1 bound: sup |Y| plus sup of difference quotients along the mesh axes
    h = 2 * chart.eta / (cfg.mesh_per_axis - 1)
    bound = float(np.max(np.abs(Ys)))
    for ax in range(chart.n0):
        shifted = mesh.copy()
        shifted[:, ax] += h
        inside = np.linalg.norm(shifted, axis=1) <= chart.eta * (1 + 1e-12)
        if not np.any(inside):
            continue
        Ysh = np.stack([chart.pullback(Z, shifted[inside])[0] for Z in chart.frame.fields], axis=-1)
        bound = max(bound, float(np.max(np.abs(Ysh - Ys[inside]))) / h)
    chart.c_bound = bound


def build_chart(frame: ScaledFrame, x0, cfg: ChartConfig | None = None) -> FrobeniusChart:
    """First-kind coordinates Phi(u) = exp(sum_m u_m Z_{i_m}) x0 with adaptive dyadic eta."""
    cfg = cfg or ChartConfig()
    x0 = np.asarray(x0, dtype=float)
    n0, selection = select_subframe(frame.matrix(x0), cfg.rank_tol)
    if n0 == 0:
        raise GeometryError("frame vanishes at x0 (n0 = 0)", {"x0": x0.tolist()})
    eta = cfg.eta_max
    attempts = []
    while eta >= cfg.eta_min:
        chart = FrobeniusChart(frame, x0, n0, eta, selection, cfg)
        try:
            _chart_diagnostics(chart)
        except Exception as exc:  # flow failure at this radius
            attempts.append({"eta": eta, "error": str(exc)})
            eta /= 2
            continue
        ok = chart.det_floor >= cfg.det_threshold and chart.min_separation > cfg.injectivity_tol
        attempts.append({"eta": eta, "det_floor": chart.det_floor, "min_separation": chart.min_separation})
        if ok:
            return chart
        eta /= 2
    raise GeometryError("no admissible chart radius", {"attempts": attempts, "n0": n0})


def uniformity_scan(base: list[DegreedField], x0, j0_range: Sequence[Sequence[int]],
                    cfg: ChartConfig | None = None, probe_count: int = 16) -> dict:
    """Chart diagnostics across the scaling family; band = max/min per column."""
    cfg = cfg or ChartConfig()
    x0 = np.asarray(x0, dtype=float)
    probes = x0 + 0.1 * default_probes(np.array([[-1.0, 1.0]] * len(x0)), probe_count)
    rows = []
    for j0 in j0_range:
        frame = ScaledFrame(base, tuple(j0))
        row = {"j0": list(j0)}
        try:
            chart = build_chart(frame, x0, cfg)
            row.update(det_floor=chart.det_floor, c_bound=chart.c_bound, eta=chart.eta, n0=chart.n0,
                       selection=[frame.labels[i] for i in chart.selection])
        except GeometryError as exc:
            row.update(error=str(exc), diagnostics=exc.diagnostics)
        row["bracket_coefficient"] = frame.bracket_coefficients(probes)["max_coefficient"]
        rows.append(row)
    bands = {}
    for col in ("det_floor", "c_bound", "eta", "bracket_coefficient"):
        vals = [r[col] for r in rows if col in r]
        if vals and len(vals) == len(rows):
            lo, hi = min(vals), max(vals)
            bands[col] = hi / lo if lo > 0 else (1.0 if hi == lo else float("inf"))
        else:
            bands[col] = None
    return {"rows": rows, "bands": bands}


def contained_fraction(chart: FrobeniusChart, points: np.ndarray, tol: float = 1e-8) -> float:
    """Share of points with a preimage under Phi inside the closed eta-ball."""
    u, res = chart.invert(points)
    ok = (res < tol) & (np.linalg.norm(u, axis=1) <= chart.eta)
    return float(np.mean(ok))


def pullback_hormander_check(chart: FrobeniusChart, gamma: GammaSpec, j, k, max_depth: int = 3,
                             points: np.ndarray | None = None, rank_tol: float = 1e-6) -> ConditionReport:
    """Hormander's condition for the pulled-back pure powers scaled by 2^{-(k-j0)d} and 2^{-(j-j0)d}.

    j0 must be the componentwise minimum of j and k; every pure power then
    appears unscaled (relative to j0) in at least one of the two slots.
    Pullback commutes with brackets, so brackets are formed in ambient
    coordinates and only the resulting vectors are pulled back.
    """
    j, k = tuple(j), tuple(k)
    j0 = tuple(min(a, b) for a, b in zip(j, k))
    if tuple(chart.frame.j0) != j0:
        raise GeometryError(f"chart is at j0 = {chart.frame.j0}, expected j ^ k = {j0}")
    gens, unscaled = [], []
    for alpha in gamma.alphas:
        deg = gamma.degree(alpha)
        if not deg.is_pure():
            continue
        d = deg.components
        base = gamma.terms[alpha].scaled(2.0 ** (-sum(a * e for a, e in zip(j0, d))))
        exps = [sum((a - b) * e for a, b, e in zip(slot, j0, d)) for slot in (k, j)]
        unscaled.append(min(exps) == 0)
        gens.extend(base.scaled(2.0 ** (-e)) for e in exps)
    levels = [gens]
    for _ in range(2, max_depth + 1):
        nxt = [b for g in gens for inner in levels[-1]
               if not (b := lie_bracket(g, inner)).is_symbolic_zero()]
        if not nxt:
            break
        levels.append(nxt)
    if points is None:
        points = np.zeros((1, chart.n0))
    points = np.atleast_2d(points)
    n0 = chart.n0
    xs, Js = chart.phi(points), chart.dphi(points)
    values = [np.stack([V(xs) for V in level], axis=2) for level in levels]  # (m, n, count)
    ranks_all, smallest_all, depths = [], [], []
    for p in range(len(points)):
        vecs, ranks, smallest = [], [], []
        for amb in values:
            vecs.append(np.linalg.lstsq(Js[p], amb[p], rcond=None)[0])
            sv = np.linalg.svd(np.concatenate(vecs, axis=1), compute_uv=False)
            ranks.append(int(np.sum(sv > rank_tol)))
            smallest.append(float(sv[n0 - 1]) if len(sv) >= n0 else 0.0)
        full = [i + 1 for i, r in enumerate(ranks) if r == n0]
        depths.append(full[0] if full else None)
        ranks_all.append(ranks)
        smallest_all.append(smallest[-1])
    worst = int(np.argmin(smallest_all))
    ok = all(d is not None for d in depths)
    return ConditionReport(
        "hormander-pullback",
        ok,
        witness_point=tuple(float(v) for v in points[worst]),
        details={
            "j0": list(j0),
            "rank_by_depth": ranks_all[worst],
            "max_min_depth": max((d for d in depths if d is not None), default=None),
            "min_depth": depths[worst],
            "smallest_singular_value": float(min(smallest_all)),
            "each_pure_power_unscaled_once": all(unscaled),
            "points": len(points),
            "rank_tol": rank_tol,
        },
    )
