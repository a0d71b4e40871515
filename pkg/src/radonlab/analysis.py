"""Numerical experiments on discretized operators: norms, decay scans, growth."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Grid, GridFunction
from .operators import DENSE_LIMIT, DiscretizedOperator, OperatorFactory, index_distance, tkk_component, bk_component

log = logging.getLogger(__name__)


@dataclass
class NormEstimate:
    value: float
    iterations: int
    converged: bool
    restarts: list[float] = field(default_factory=list)
    dense: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def op_norm_l2(op: DiscretizedOperator, tol: float = 1e-4, max_iter: int = 200, restarts: int = 3,
               seed: int = 0, dense_check: bool = False) -> NormEstimate:
    """||op||_{L^2 -> L^2} in the quadrature inner product by power iteration on op* op.

    Each restart uses a fresh seeded random vector; the largest estimate wins.
    With ``dense_check`` (and a small grid) the weighted SVD value is attached.
    """
    grid = op.grid
    w = grid.weights
    rng = np.random.default_rng(seed)
    best, total_iter, ok, seen = 0.0, 0, True, []
    for _ in range(restarts):
        v = rng.standard_normal(grid.size)
        v /= math.sqrt(np.dot(w, v * v))
        est, prev, conv = 0.0, -1.0, False
        for it in range(1, max_iter + 1):
            u = op.matvec(v)
            z = op.rmatvec(u)
            nz = math.sqrt(np.dot(w, z * z))
            est = math.sqrt(max(np.dot(w, u * u), 0.0))
            total_iter += 1
            if nz == 0.0:
                conv = True
                break
            v = z / nz
            if prev >= 0 and abs(est - prev) <= tol * max(est, 1e-300):
                conv = True
                break
            prev = est
        seen.append(est)
        ok = ok and conv
        best = max(best, est)
    out = NormEstimate(best, total_iter, ok, seen)
    if dense_check and grid.size <= DENSE_LIMIT:
        out.dense = dense_norm(op)
    return out


def dense_norm(op: DiscretizedOperator) -> float:
    """Weighted spectral norm ||W^{1/2} A W^{-1/2}||_2 of the materialized matrix."""
    A = op.to_dense()
    s = np.sqrt(op.grid.weights)
    return float(np.linalg.norm(s[:, None] * A / s[None, :], 2))


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def fit_slope(x: Sequence[float], y: Sequence[float], floor: float = 1e-300) -> float:
    """Slope of log2(y) against x (least squares)."""
    y = np.maximum(np.asarray(y, dtype=float), floor)
    return float(np.polyfit(np.asarray(x, dtype=float), np.log2(y), 1)[0])


# ---------------------------------------------------------------------------
# almost-orthogonality


def cotlar_scan(factory: OperatorFactory, base=None, distances: Sequence[int] = (0, 1, 2, 3, 4),
                norm_kw: dict | None = None) -> dict:
    """Norms of T_j* T_k and T_j T_k* against |j - k| along each factor axis."""
    fam = factory.family
    nu = fam.nu
    base = tuple(base or (0,) * nu)
    norm_kw = norm_kw or {}
    rows, seen = [], set()
    for m in distances:
        for mu in range(nu):
            k = tuple(b + (m if i == mu else 0) for i, b in enumerate(base))
            if k in seen or any(v > J for v, J in zip(k, fam.J)):
                continue
            seen.add(k)
            Tj, Tk = factory.t_piece(base), factory.t_piece(k)
            a = op_norm_l2(Tj.adjoint().compose(Tk), **norm_kw).value
            b = op_norm_l2(Tj.compose(Tk.adjoint()), **norm_kw).value
            rows.append({"j": list(base), "k": list(k), "distance": m, "TjStarTk": a, "TjTkStar": b})
    per_distance = {}
    for r in rows:
        per_distance[r["distance"]] = max(per_distance.get(r["distance"], 0.0), r["TjStarTk"], r["TjTkStar"])
    ds = sorted(per_distance)
    fit = [d for d in ds if d >= 1] or ds
    slope = fit_slope(fit, [per_distance[d] for d in fit]) if len(fit) >= 2 else float("nan")
    return {"rows": rows, "max_by_distance": {str(d): per_distance[d] for d in ds},
            "decay_exponent": -slope}


def refinement_gate(build: Callable[[Grid], DiscretizedOperator], grid: Grid, f: Callable,
                    tol: float = 0.05) -> dict:
    """Relative change of ||Op f||_2 when the grid spacing is halved."""
    coarse = build(grid).apply(grid.sample(f)).norm(2)
    fine_grid = grid.refined()
    fine = build(fine_grid).apply(fine_grid.sample(f)).norm(2)
    change = relative_error(coarse, fine)
    return {"coarse": coarse, "fine": fine, "relative_change": change, "passed": change < tol}


def partial_sum_growth(factory: OperatorFactory, J_list: Sequence[Sequence[int]],
                       norm_kw: dict | None = None) -> dict:
    """||sum_{j <= J} T_j|| for each truncation J."""
    norm_kw = norm_kw or {}
    rows = []
    for J in J_list:
        est = op_norm_l2(factory.t_full(tuple(J)), **norm_kw)
        rows.append({"J": list(J), "norm": est.value, "converged": est.converged})
    norms = [r["norm"] for r in rows]
    return {"rows": rows, "ratio": max(norms) / max(min(norms), 1e-300)}


def square_function_check(factory: OperatorFactory, Jmax: int, fs: Sequence[GridFunction],
                          sign_sets: int = 20, seed: int = 0) -> dict:
    """Two-sided comparison of ||(sum_j |D_j f|^2)^{1/2}|| with ||f||, plus
    the randomized-sign test on ||sum_j eps_j D_j f||."""
    rng = np.random.default_rng(seed)
    idx = factory.d_indices(Jmax)
    rows = []
    for f in fs:
        parts = {j: factory.d(j).apply(f).values for j in idx}
        sq = np.sqrt(sum(p * p for p in parts.values()))
        sfun = GridFunction(f.grid, sq).norm(2)
        fn = f.norm(2)
        signed = []
        for _ in range(sign_sets):
            eps = rng.choice([-1.0, 1.0], size=len(idx))
            signed.append(GridFunction(f.grid, sum(e * parts[j] for e, j in zip(eps, idx))).norm(2))
        rows.append({"f_norm": fn, "square_norm": sfun, "ratio": sfun / max(fn, 1e-300),
                     "signed_max_ratio": max(signed) / max(fn, 1e-300),
                     "signed_spread": max(signed) / max(min(signed), 1e-300)})
    return {"rows": rows, "lower": min(r["ratio"] for r in rows), "upper": max(r["ratio"] for r in rows),
            "signed_upper": max(r["signed_max_ratio"] for r in rows),
            "signed_spread": max(r["signed_spread"] for r in rows)}


def reconstruction_residual(factory: OperatorFactory, Jmax: int, f: GridFunction) -> dict:
    """sup |sum_{j <= Jmax} D_j f - psi0^{2 nu} f|, relative to sup |f|."""
    total = factory.d_sum(Jmax).apply(f).values
    target = factory.cutoffs.psi0(f.grid.points) ** (2 * factory.gamma.nu) * f.values
    err = float(np.max(np.abs(total - target)))
    return {"Jmax": Jmax, "absolute": err, "relative": err / max(f.norm(math.inf), 1e-300)}


def remainder_scan(factory: OperatorFactory, Jmax: int, Ms: Sequence[int] = (0, 1, 2, 3),
                   norm_kw: dict | None = None) -> dict:
    """||R_M|| for each M, with R_M the far-from-diagonal part of (sum_j D_j)^2."""
    norm_kw = norm_kw or {}
    rows = []
    for M in Ms:
        est = op_norm_l2(factory.r_m(M, Jmax), **norm_kw)
        rows.append({"M": M, "norm": est.value, "converged": est.converged})
    norms = [r["norm"] for r in rows]
    return {"rows": rows, "decreasing": all(b < a for a, b in zip(norms, norms[1:]))}


def maximal_check(maximal, fs: Sequence[GridFunction], p_values=(1.5, 2.0, 4.0, math.inf)) -> dict:
    """||M f||_p / ||f||_p per test function and exponent, the spread of the
    ratios across the functions, and the pointwise L^infinity bound."""
    rows = []
    bound_ok = True
    cap = maximal.volume * float(np.max(maximal.psi))
    for i, f in enumerate(fs):
        Mf = maximal.apply(f)
        bound_ok &= bool(np.all(Mf.values <= f.norm(math.inf) * cap * (1 + 1e-12)))
        for p in p_values:
            rows.append({"f": i, "p": p, "ratio": Mf.norm(p) / max(f.norm(p), 1e-300)})
    spread = {}
    for p in p_values:
        r = [row["ratio"] for row in rows if row["p"] == p]
        spread[str(p)] = max(r) / max(min(r), 1e-300)
    return {"rows": rows, "max_ratio": max(r["ratio"] for r in rows), "spread": spread,
            "linf_bound_holds": bound_ok}


def bump_family(grid: Grid, scales: Sequence[int] = (0, 1, 2, 3, 4), radius: float = 0.5) -> list[GridFunction]:
    """Smooth bumps of radius radius * 2^{-m} (box-normalized) centred in the box."""
    c = grid.box.mean(axis=1)
    half = (grid.box[:, 1] - grid.box[:, 0]) / 2
    rho = np.linalg.norm((grid.points - c) / half, axis=1)
    out = []
    for m in scales:
        s = rho / (radius * 2.0**-m)
        vals = np.where(s < 1, np.exp(-1.0 / np.maximum(1 - s * s, 1e-300) + 1.0), 0.0)
        out.append(GridFunction(grid, vals))
    return out


def vector_decay_scan(factory: OperatorFactory, Jmax: int, kind: str = "tkk", shifts: Sequence = (),
                      norm_kw: dict | None = None) -> dict:
    """Block-diagonal norms: max_j ||D_j T_{j+k1} D_{j+k2}|| (or ||B_j D_{j+k}||) per shift."""
    norm_kw = norm_kw or {}
    idx = factory.d_indices(Jmax)
    rows = []
    for shift in shifts:
        best = 0.0
        for j in idx:
            if kind == "tkk":
                k1, k2 = shift
                a = tuple(x + y for x, y in zip(j, k1))
                b = tuple(x + y for x, y in zip(j, k2))
                if not all(0 <= v <= Jmax for v in a + b):
                    continue
                op = tkk_component(factory, j, k1, k2)
            else:
                a = tuple(x + y for x, y in zip(j, shift))
                if not all(0 <= v <= Jmax for v in a):
                    continue
                op = bk_component(factory, j, shift)
            if op.is_zero:
                continue
            best = max(best, op_norm_l2(op, **norm_kw).value)
        size = max(index_distance(s, (0,) * len(s)) for s in (shift if kind == "tkk" else (shift,)))
        rows.append({"shift": [list(s) for s in shift] if kind == "tkk" else list(shift),
                     "size": size, "norm": best})
    return {"rows": rows}


def sample_functions(grid: Grid, count: int = 3, seed: int = 0) -> list[GridFunction]:
    """Smooth-ish test functions: a bump, an oscillation and seeded noise."""
    rng = np.random.default_rng(seed)
    c = grid.box.mean(axis=1)
    half = (grid.box[:, 1] - grid.box[:, 0]) / 2
    x = (grid.points - c) / half
    out = [
        np.exp(-8 * np.sum(x * x, axis=1)),
        np.cos(3 * np.pi * x[:, 0]) * np.exp(-2 * np.sum(x * x, axis=1)),
    ]
    while len(out) < count:
        out.append(rng.standard_normal(grid.size))
    return [GridFunction(grid, v) for v in out[:count]]


def signed_combinations(n: int, count: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    if 2**n <= count:
        return [np.array(s, dtype=float) for s in itertools.product([-1, 1], repeat=n)]
    return [rng.choice([-1.0, 1.0], size=n) for _ in range(count)]


# ---------------------------------------------------------------------------
# L^1 translation modulus


def _shifted(values: np.ndarray, shape: tuple[int, ...], offset: Sequence[int]) -> np.ndarray:
    """h(. - z) on the grid for z = offset * spacing, zero-extended."""
    arr = values.reshape(shape)
    out = np.zeros_like(arr)
    src, dst = [], []
    for k, n in zip(offset, shape):
        if k >= 0:
            src.append(slice(0, n - k))
            dst.append(slice(k, n))
        else:
            src.append(slice(-k, n))
            dst.append(slice(0, n + k))
    out[tuple(dst)] = arr[tuple(src)]
    return out.reshape(-1)


def l1_delta_modulus(h: GridFunction, shifts: Sequence[Sequence[int]],
                     deltas: Sequence[float] = tuple(np.round(np.arange(1, 11) / 10, 1)),
                     margin: float = 0.25, edge_tol: float = 1e-12) -> dict:
    """sup_z int |h(y - z) - h(y)| dy / |z|^delta over node-multiple shifts z.

    Shifts are integer node offsets.  Each must stay within ``margin`` of
    the box extent, and h must vanish on the boundary layer it uncovers.
    """
    grid = h.grid
    extent = grid.box[:, 1] - grid.box[:, 0]
    rows = []
    for off in shifts:
        off = tuple(int(k) for k in off)
        if len(off) != grid.dim or not any(off):
            raise ValueError(f"shift {off} must be a nonzero {grid.dim}-vector of node offsets")
        z = np.array(off) * grid.spacing
        if np.any(np.abs(z) > margin * extent):
            raise ValueError(f"shift {z.tolist()} exceeds the box margin")
        arr = h.values.reshape(grid.shape)
        for ax, k in enumerate(off):
            if k == 0:
                continue
            layer = np.take(arr, range(grid.shape[ax] - abs(k), grid.shape[ax]) if k > 0 else range(abs(k)), axis=ax)
            if np.max(np.abs(layer), initial=0.0) > edge_tol:
                raise ValueError("h does not vanish near the boundary; the shift would leave the box")
        diff = np.abs(_shifted(h.values, grid.shape, off) - h.values)
        rows.append({"offset": list(off), "norm_z": float(np.linalg.norm(z)),
                     "integral": float(np.dot(grid.weights, diff))})
    moduli = {}
    for d in deltas:
        moduli[str(float(d))] = max(r["integral"] / r["norm_z"] ** d for r in rows)
    z = np.array([r["norm_z"] for r in rows])
    I = np.maximum(np.array([r["integral"] for r in rows]), 1e-300)
    exponent = float(np.polyfit(np.log(z), np.log(I), 1)[0]) if len(set(z)) >= 2 else float("nan")
    return {"rows": rows, "modulus": moduli, "growth_exponent": exponent}
