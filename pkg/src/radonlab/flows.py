"""Flow maps gamma_t(x): time-1 RK4 flows of the frozen field sum_alpha t^alpha X_alpha."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .fields import GammaSpec


class FlowError(RuntimeError):
    pass


class FlowExitError(FlowError):
    def __init__(self, point, t):
        self.point = tuple(float(v) for v in point)
        self.t = tuple(float(v) for v in np.atleast_1d(t))
        super().__init__(f"trajectory left the box at {self.point} (t = {self.t})")


@dataclass(frozen=True)
class FlowConfig:
    step_count: int = 64
    box: np.ndarray | None = None
    inverse_mode: str = "negate-time"
    eps_w: float = 1e-4
    inverse_tol: float = 1e-12

    def __post_init__(self):
        if self.step_count < 16:
            raise ValueError("step_count must be at least 16")
        if self.inverse_mode not in ("negate-time", "root-find"):
            raise ValueError(f"unknown inverse mode {self.inverse_mode!r}")
        if self.box is not None:
            object.__setattr__(self, "box", np.asarray(self.box, dtype=float))


def scale_t(t, j, factor_dims) -> np.ndarray:
    """2^{-j} t: factor mu of t is multiplied by 2^{-j_mu} (j_mu = inf gives 0)."""
    t = np.asarray(t, dtype=float)
    factors = []
    for jm, nd in zip(j, factor_dims):
        factors.extend([0.0 if np.isinf(jm) else 2.0 ** (-float(jm))] * nd)
    return t * np.array(factors)


def _velocity(fields, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """V_t(x) = sum_a c[:, a] X_a(x) with per-row coefficients."""
    out = np.zeros_like(x)
    for a, X in enumerate(fields):
        c = coeffs[:, a]
        if np.any(c):
            out += c[:, None] * X(x)
    return out


def _broadcast(gamma: GammaSpec, t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    single = t.ndim == 1 and x.ndim == 1
    t2 = np.atleast_2d(t)
    x2 = np.atleast_2d(x)
    if t2.shape[1] != gamma.N:
        raise ValueError(f"t has {t2.shape[1]} coordinates, gamma expects {gamma.N}")
    if x2.shape[1] != gamma.dim:
        raise ValueError(f"x has dimension {x2.shape[1]}, gamma acts on R^{gamma.dim}")
    m = max(t2.shape[0], x2.shape[0])
    t2 = np.broadcast_to(t2, (m, gamma.N))
    x2 = np.broadcast_to(x2, (m, gamma.dim))
    return t2, np.array(x2), single


def step_counts(gamma: GammaSpec, t, cfg: FlowConfig, time: float = 1.0) -> np.ndarray:
    """RK4 steps per row: the next power of two >= step_count * max(1, |time| sup|V_t|).

    sup|V_t| is bounded by sum_a |t^a| sup|X_a| so the count depends on t
    alone, never on which batch a point happens to be flowed in.
    """
    coeffs = gamma.monomials(np.atleast_2d(t))
    bound = np.abs(coeffs) @ gamma.term_sup_norms * abs(time)
    raw = cfg.step_count * np.maximum(1.0, bound)
    return (2 ** np.ceil(np.log2(raw) - 1e-12)).astype(np.int64)


def flow(gamma: GammaSpec, t, x, cfg: FlowConfig | None = None, time: float = 1.0) -> np.ndarray:
    """Batch flow: rows of t (m, N) and x (m, n) broadcast against each other."""
    cfg = cfg or FlowConfig()
    t2, x2, single = _broadcast(gamma, t, x)
    coeffs = gamma.monomials(t2)
    out = x2.copy()
    active = np.any(coeffs != 0.0, axis=1)  # t = 0 is the identity, exactly
    fields = list(gamma.terms.values())
    if np.any(active) and all(X.is_constant for X in fields):
        # translation-invariant fields: the flow is an exact translation
        vel = np.stack([X(np.zeros(gamma.dim)) for X in fields])
        out[active] = x2[active] + time * coeffs[active] @ vel
        _check_box(out, cfg.box, t2)
    elif np.any(active):
        steps = step_counts(gamma, t2, cfg, time)
        for n_steps in np.unique(steps[active]):
            rows = np.nonzero(active & (steps == n_steps))[0]
            out[rows] = _rk4(fields, coeffs[rows], x2[rows], time, int(n_steps), cfg.box, t2[rows])
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.all(np.isfinite(out), axis=1)))
        raise FlowError(f"non-finite flow value from x = {tuple(x2[bad])}, t = {tuple(t2[bad])}")
    return out[0] if single else out


def _check_box(y, box, t_rows) -> None:
    if box is None:
        return
    outside = np.any((y < box[:, 0] - 1e-12) | (y > box[:, 1] + 1e-12), axis=1)
    if np.any(outside):
        i = int(np.argmax(outside))
        raise FlowExitError(y[i], t_rows[i])


def _rk4(fields, coeffs, x, time, n_steps, box, t_rows) -> np.ndarray:
    h = time / n_steps
    y = x.copy()
    for _ in range(n_steps):
        k1 = _velocity(fields, coeffs, y)
        k2 = _velocity(fields, coeffs, y + 0.5 * h * k1)
        k3 = _velocity(fields, coeffs, y + 0.5 * h * k2)
        k4 = _velocity(fields, coeffs, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_box(y, box, t_rows)
    return y


def gamma_flow(gamma: GammaSpec, t, x, cfg: FlowConfig | None = None) -> np.ndarray:
    return flow(gamma, t, x, cfg)


def gamma_inverse(gamma: GammaSpec, t, x, cfg: FlowConfig | None = None) -> np.ndarray:
    """gamma_t^{-1}(x)."""
    cfg = cfg or FlowConfig()
    if cfg.inverse_mode == "negate-time":
        return flow(gamma, t, x, cfg, time=-1.0)
    t2, x2, single = _broadcast(gamma, t, x)
    start = flow(gamma, t2, x2, cfg, time=-1.0)
    out = np.empty_like(x2)
    for i in range(x2.shape[0]):
        def residual(y, i=i):
            return flow(gamma, t2[i], y, cfg) - x2[i]
        sol = optimize.root(residual, start[i], method="hybr", tol=cfg.inverse_tol)
        res = float(np.linalg.norm(residual(sol.x)))
        if not sol.success and res > 1e-10:
            raise FlowError(f"root-find inverse did not converge (residual {res:.3e})")
        out[i] = sol.x
    return out[0] if single else out


def theta_map(gamma: GammaSpec, j, k, s, t, x, cfg: FlowConfig | None = None) -> np.ndarray:
    """gamma_{2^{-k} t}( gamma_{2^{-j} s}^{-1}(x) )."""
    fd = gamma.factor_dims
    y = gamma_inverse(gamma, scale_t(s, j, fd), x, cfg)
    return flow(gamma, scale_t(t, k, fd), y, cfg)


def canonical_w(gamma: GammaSpec, t, x, cfg: FlowConfig | None = None) -> np.ndarray:
    """W(t, x) = d/de at e = 1 of gamma_{e t}(gamma_t^{-1}(x)), by central difference."""
    cfg = cfg or FlowConfig()
    t2, x2, single = _broadcast(gamma, t, x)
    out = np.zeros_like(x2)
    active = np.any(t2 != 0.0, axis=1)
    if np.any(active):
        tt, xx = t2[active], x2[active]
        y = gamma_inverse(gamma, tt, xx, cfg)
        e = cfg.eps_w
        plus = flow(gamma, (1 + e) * tt, y, cfg)
        minus = flow(gamma, (1 - e) * tt, y, cfg)
        out[active] = (plus - minus) / (2 * e)
    return out[0] if single else out


def rk4_order(gamma: GammaSpec, t, x, step_counts_list=(16, 32, 64, 128), reference=4096) -> dict:
    """Observed convergence order from errors against a fine reference flow."""
    ref = flow(gamma, t, x, FlowConfig(step_count=reference))
    errors = []
    for n in step_counts_list:
        approx = flow(gamma, t, x, FlowConfig(step_count=n))
        errors.append(float(np.max(np.abs(np.atleast_2d(approx - ref)))))
    h = 1.0 / np.asarray(step_counts_list, dtype=float)
    err = np.maximum(np.asarray(errors), 1e-300)
    slope = float(np.polyfit(np.log(h), np.log(err), 1)[0])
    return {"steps": list(step_counts_list), "errors": errors, "slope": slope}
