"""Vector fields with multi-parameter formal degrees.

Fields are carried as sympy coefficient expressions in the coordinates
``x0, ..., x{n-1}`` (or as opaque numeric callables, in which case brackets
fall back to central differences).  The coefficient language is polynomials
plus ``exp``, ``sin``, ``cos``, rational functions and the flat function
``flat(x) = exp(-1/x**2)`` (with ``flat(0) = 0``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp
from scipy.stats import qmc

SPAN_TOL = 1e-7
ZERO_TOL = 1e-10
RANK_TOL = 1e-8
COEFF_BOUND = 1e3
FD_STEP = 1e-5


class FieldError(ValueError):
    """Structured error raised by the field algebra."""


class FieldEvaluationError(FieldError):
    def __init__(self, message: str, point):
        super().__init__(f"{message} at point {tuple(float(v) for v in point)}")
        self.point = tuple(float(v) for v in point)


class ClosureError(FieldError):
    pass


# ---------------------------------------------------------------------------
# the flat primitive


@functools.lru_cache(maxsize=None)
def _flat_derivative_poly(order: int) -> Callable:
    # d^k/dx^k exp(-1/x^2) = P_k(1/x) exp(-1/x^2)
    x, s = sp.symbols("x s")
    expr = sp.diff(sp.exp(-1 / x**2), x, order) / sp.exp(-1 / x**2)
    poly = sp.expand(sp.simplify(expr).subs(x, 1 / s))
    return sp.lambdify(s, poly, "numpy")


def flat_numeric(x, order=0):
    """k-th derivative of exp(-1/x^2), vectorized, exactly 0 near x = 0."""
    x = np.asarray(x, dtype=float)
    order = int(order)
    out = np.zeros(np.broadcast(x).shape)
    # exp(-1/x^2) underflows to 0 well before |x| = 0.03
    mask = np.abs(x) > 0.03
    if np.any(mask):
        xm = x[mask] if x.ndim else x
        vals = np.exp(-1.0 / xm**2)
        if order:
            vals = vals * _flat_derivative_poly(order)(1.0 / xm)
        if x.ndim:
            out[mask] = vals
        else:
            out = np.asarray(vals, dtype=float)
    return out


class Flat(sp.Function):
    """``Flat(x, k)`` is the k-th derivative of exp(-1/x^2) (0 at x = 0)."""

    nargs = 2

    @classmethod
    def eval(cls, x, k):
        if x.is_zero:
            return sp.Integer(0)
        return None

    def fdiff(self, argindex=1):
        if argindex != 1:
            raise sp.ArgumentIndexError(self, argindex)
        x, k = self.args
        return Flat(x, k + 1)

    def _sympystr(self, printer):
        x, k = self.args
        if k == 0:
            return f"flat({printer._print(x)})"
        return f"flat{int(k)}({printer._print(x)})"


def flat(x):
    return Flat(sp.sympify(x), 0)


_LAMBDIFY_MODULES = [{"Flat": flat_numeric}, "numpy"]
_ALLOWED_FUNCS = (sp.exp, sp.sin, sp.cos, Flat)


def coordinate_symbols(n: int) -> tuple[sp.Symbol, ...]:
    return tuple(sp.Symbol(f"x{i}", real=True) for i in range(n))


def parse_coefficient(text, variables: Sequence[str] | None, n: int) -> sp.Expr:
    """Parse a coefficient string in the whitelisted language."""
    syms = coordinate_symbols(n)
    local = {f"x{i}": s for i, s in enumerate(syms)}
    if variables:
        if len(variables) != n:
            raise FieldError(f"expected {n} variable names, got {len(variables)}")
        local.update(dict(zip(variables, syms)))
    local.update({"exp": sp.exp, "sin": sp.sin, "cos": sp.cos, "flat": flat})
    try:
        expr = sp.sympify(text, locals=local)
    except (sp.SympifyError, TypeError, SyntaxError) as exc:
        raise FieldError(f"cannot parse coefficient {text!r}: {exc}") from exc
    _check_whitelist(expr, syms)
    return expr


def _check_whitelist(expr: sp.Expr, syms: Sequence[sp.Symbol]) -> None:
    free = expr.free_symbols - set(syms)
    if free:
        raise FieldError(f"unknown symbols {sorted(map(str, free))} in {expr}")
    for node in sp.preorder_traversal(expr):
        if isinstance(node, sp.Function) and not isinstance(node, _ALLOWED_FUNCS):
            raise FieldError(f"function {node.func} is outside the coefficient whitelist")


def _as_points(points, dim: int) -> tuple[np.ndarray, bool]:
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != dim:
        raise FieldError(f"points have dimension {pts.shape[-1]}, field has {dim}")
    return pts, single


# ---------------------------------------------------------------------------
# vector fields


class VectorField:
    """A smooth vector field on R^n.

    Symbolic fields hold a tuple of sympy coefficient expressions; numeric
    fields wrap a callable ``fn(points (m, n)) -> (m, n)``.
    """

    __slots__ = ("dim", "coeffs", "_fn", "name", "__dict__")

    def __init__(self, coeffs: Sequence, name: str | None = None):
        exprs = tuple(sp.sympify(c) for c in coeffs)
        self.dim = len(exprs)
        syms = coordinate_symbols(self.dim)
        for e in exprs:
            _check_whitelist(e, syms)
        self.coeffs = exprs
        self._fn = None
        self.name = name

    @classmethod
    def from_strings(cls, coeffs: Sequence[str], variables=None, name=None) -> "VectorField":
        n = len(coeffs)
        return cls([parse_coefficient(c, variables, n) for c in coeffs], name=name)

    @classmethod
    def from_callable(cls, dim: int, fn: Callable, name: str | None = None) -> "VectorField":
        obj = cls.__new__(cls)
        obj.dim = int(dim)
        obj.coeffs = None
        obj._fn = fn
        obj.name = name
        return obj

    @classmethod
    def coordinate(cls, dim: int, axis: int) -> "VectorField":
        return cls([1 if i == axis else 0 for i in range(dim)], name=f"d{axis}")

    @property
    def is_symbolic(self) -> bool:
        return self.coeffs is not None

    @property
    def is_polynomial(self) -> bool:
        if not self.is_symbolic:
            return False
        syms = coordinate_symbols(self.dim)
        return all(c.is_polynomial(*syms) for c in self.coeffs)

    def is_symbolic_zero(self) -> bool:
        return self.is_symbolic and all(c == 0 for c in self.coeffs)

    @property
    def is_constant(self) -> bool:
        return self.is_symbolic and all(not sp.sympify(c).free_symbols for c in self.coeffs)

    @functools.cached_property
    def _evaluator(self):
        syms = coordinate_symbols(self.dim)
        return [sp.lambdify(syms, c, modules=_LAMBDIFY_MODULES) for c in self.coeffs]

    @functools.cached_property
    def _jacobian_evaluator(self):
        syms = coordinate_symbols(self.dim)
        return [[sp.lambdify(syms, sp.diff(c, s), modules=_LAMBDIFY_MODULES) for s in syms]
                for c in self.coeffs]

    def __call__(self, points) -> np.ndarray:
        pts, single = _as_points(points, self.dim)
        if self.is_symbolic:
            cols = [np.broadcast_to(np.asarray(f(*pts.T), dtype=float), (pts.shape[0],))
                    for f in self._evaluator]
            out = np.stack(cols, axis=-1)
        else:
            out = np.asarray(self._fn(pts), dtype=float).reshape(pts.shape)
        _check_finite(out, pts, "non-finite field value")
        return out[0] if single else out

    def jacobian(self, points) -> np.ndarray:
        """Matrix ``J[i, k] = d coeff_i / d x_k`` at each point, shape (m, n, n)."""
        pts, single = _as_points(points, self.dim)
        m = pts.shape[0]
        if self.is_symbolic:
            jac = np.empty((m, self.dim, self.dim))
            for i, row in enumerate(self._jacobian_evaluator):
                for k, f in enumerate(row):
                    jac[:, i, k] = np.broadcast_to(np.asarray(f(*pts.T), dtype=float), (m,))
        else:
            jac = np.empty((m, self.dim, self.dim))
            for k in range(self.dim):
                step = np.zeros(self.dim)
                step[k] = FD_STEP
                jac[:, :, k] = (self(pts + step) - self(pts - step)) / (2 * FD_STEP)
        _check_finite(jac.reshape(m, -1), pts, "non-differentiable coefficient")
        return jac[0] if single else jac

    def combine(self, other: "VectorField", a: float = 1.0, b: float = 1.0) -> "VectorField":
        _same_dim(self, other)
        if self.is_symbolic and other.is_symbolic:
            return VectorField([sp.expand(a * p + b * q) for p, q in zip(self.coeffs, other.coeffs)])
        return VectorField.from_callable(self.dim, lambda pts: a * self(pts) + b * other(pts))

    def scaled(self, c: float) -> "VectorField":
        if self.is_symbolic:
            return VectorField([sp.expand(c * e) for e in self.coeffs], name=self.name)
        return VectorField.from_callable(self.dim, lambda pts: c * self(pts), name=self.name)

    def __repr__(self) -> str:
        if self.is_symbolic:
            return f"VectorField({[str(c) for c in self.coeffs]})"
        return f"VectorField(<numeric, dim={self.dim}>)"


def _check_finite(values: np.ndarray, pts: np.ndarray, message: str) -> None:
    bad = ~np.all(np.isfinite(values), axis=-1)
    if np.any(bad):
        raise FieldEvaluationError(message, pts[int(np.argmax(bad))])


def _same_dim(X: VectorField, Y: VectorField) -> None:
    if X.dim != Y.dim:
        raise FieldError(f"dimension mismatch: {X.dim} vs {Y.dim}")


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y] = XY - YX; symbolic when both are symbolic, else central differences."""
    _same_dim(X, Y)
    if X.is_symbolic and Y.is_symbolic:
        syms = coordinate_symbols(X.dim)
        coeffs = []
        for i in range(X.dim):
            expr = sum(X.coeffs[k] * sp.diff(Y.coeffs[i], syms[k])
                       - Y.coeffs[k] * sp.diff(X.coeffs[i], syms[k]) for k in range(X.dim))
            coeffs.append(sp.expand(expr))
        return VectorField(coeffs)

    def bracket(pts):
        return (np.einsum("mik,mk->mi", Y.jacobian(pts), X(pts))
                - np.einsum("mik,mk->mi", X.jacobian(pts), Y(pts)))

    return VectorField.from_callable(X.dim, bracket)


# ---------------------------------------------------------------------------
# formal degrees


@dataclass(frozen=True)
class FormalDegree:
    components: tuple[int, ...]

    def __post_init__(self):
        comps = tuple(int(c) for c in self.components)
        if any(c < 0 for c in comps):
            raise FieldError(f"formal degrees are nonnegative, got {comps}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, *components: int) -> "FormalDegree":
        return cls(tuple(components))

    @property
    def nu(self) -> int:
        return len(self.components)

    @property
    def total(self) -> int:
        return sum(self.components)

    def is_pure(self) -> bool:
        return sum(1 for c in self.components if c) == 1

    def __add__(self, other: "FormalDegree") -> "FormalDegree":
        if self.nu != other.nu:
            raise FieldError("degrees have different numbers of parameters")
        return FormalDegree(tuple(a + b for a, b in zip(self.components, other.components)))

    def __le__(self, other: "FormalDegree") -> bool:
        return all(a <= b for a, b in zip(self.components, other.components))

    def __iter__(self):
        return iter(self.components)

    def __str__(self) -> str:
        return "(" + ",".join(map(str, self.components)) + ")"


@dataclass(frozen=True)
class DegreedField:
    field: VectorField
    degree: FormalDegree
    label: str
    depth: int = 0
    leaf_degrees: tuple[FormalDegree, ...] = ()

    def __post_init__(self):
        if not self.leaf_degrees:
            object.__setattr__(self, "leaf_degrees", (self.degree,))
        total = self.leaf_degrees[0]
        for d in self.leaf_degrees[1:]:
            total = total + d
        if total != self.degree:
            raise FieldError(f"degree {self.degree} of {self.label} is not the sum of its leaves")

    def bracket(self, other: "DegreedField") -> "DegreedField":
        return DegreedField(
            lie_bracket(self.field, other.field),
            self.degree + other.degree,
            f"[{self.label},{other.label}]",
            depth=self.depth + other.depth + 1,
            leaf_degrees=self.leaf_degrees + other.leaf_degrees,
        )

    def sort_key(self):
        return (self.degree.total, self.depth, self.label)


# ---------------------------------------------------------------------------
# gamma


def multi_index_degree(alpha: Sequence[int], factor_dims: Sequence[int]) -> FormalDegree:
    out, start = [], 0
    for nd in factor_dims:
        out.append(sum(alpha[start:start + nd]))
        start += nd
    return FormalDegree(tuple(out))


@dataclass(frozen=True)
class GammaSpec:
    """gamma_t(x) = exp(sum_alpha t^alpha X_alpha) x."""

    factor_dims: tuple[int, ...]
    terms: Mapping[tuple[int, ...], VectorField]
    names: Mapping[tuple[int, ...], str] = field(default_factory=dict)
    box: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "factor_dims", tuple(int(d) for d in self.factor_dims))
        terms = {tuple(int(a) for a in k): v for k, v in self.terms.items()}
        if not terms:
            raise FieldError("gamma needs at least one term")
        N = sum(self.factor_dims)
        dims = {v.dim for v in terms.values()}
        if len(dims) != 1:
            raise FieldError(f"terms live in different dimensions {sorted(dims)}")
        for alpha in terms:
            if len(alpha) != N or sum(alpha) <= 0 or min(alpha) < 0:
                raise FieldError(f"multi-index {alpha} is invalid for N = {N}")
        object.__setattr__(self, "terms", dict(sorted(terms.items())))
        names = {tuple(k): v for k, v in dict(self.names).items()}
        object.__setattr__(self, "names", names)
        if self.box is not None:
            object.__setattr__(self, "box", np.asarray(self.box, dtype=float))

    @property
    def nu(self) -> int:
        return len(self.factor_dims)

    @property
    def N(self) -> int:
        return sum(self.factor_dims)

    @property
    def dim(self) -> int:
        return next(iter(self.terms.values())).dim

    @property
    def max_order(self) -> int:
        return max(sum(a) for a in self.terms)

    @property
    def alphas(self) -> tuple[tuple[int, ...], ...]:
        return tuple(self.terms)

    def degree(self, alpha) -> FormalDegree:
        return multi_index_degree(alpha, self.factor_dims)

    def label(self, alpha) -> str:
        return self.names.get(tuple(alpha), "X" + "".join(map(str, alpha)))

    def degreed(self, alpha) -> DegreedField:
        return DegreedField(self.terms[alpha], self.degree(alpha), self.label(alpha))

    def pure(self) -> list[DegreedField]:
        return [self.degreed(a) for a in self.terms if self.degree(a).is_pure()]

    def non_pure(self) -> list[DegreedField]:
        return [self.degreed(a) for a in self.terms if not self.degree(a).is_pure()]

    def monomials(self, t) -> np.ndarray:
        """t^alpha for every term; t has shape (..., N), result (..., A)."""
        t = np.asarray(t, dtype=float)
        A = np.array(self.alphas)  # (A, N)
        return np.prod(t[..., None, :] ** A, axis=-1)

    def working_box(self) -> np.ndarray:
        if self.box is not None:
            return self.box
        return np.array([[-1.0, 1.0]] * self.dim)

    @functools.cached_property
    def term_sup_norms(self) -> np.ndarray:
        """Sampled sup over the working box of |X_alpha|, one entry per term."""
        probes = default_probes(self.working_box(), 64)
        return np.array([float(np.max(np.linalg.norm(X(probes), axis=1)))
                         for X in self.terms.values()])


def default_probes(box, count: int = 200) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    sampler = qmc.Halton(d=box.shape[0], scramble=False)
    unit = sampler.random(count + 1)[1:]  # skip the corner point
    return qmc.scale(unit, box[:, 0], box[:, 1])


# ---------------------------------------------------------------------------
# closure


@dataclass(frozen=True)
class Closure:
    elements: tuple[DegreedField, ...]
    truncated: bool
    max_depth: int

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)

    def __getitem__(self, i):
        return self.elements[i]

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.elements]

    def up_to_depth(self, k: int) -> list[DegreedField]:
        return [e for e in self.elements if e.depth <= k]


def _numerically_zero(X: VectorField, probes: np.ndarray, zero_tol: float) -> bool:
    if X.is_symbolic_zero():
        return True
    return float(np.max(np.abs(X(probes)))) < zero_tol


def generate_closure(
    gamma: GammaSpec,
    max_depth: int = 6,
    max_degree: FormalDegree | None = None,
    probes: np.ndarray | None = None,
    zero_tol: float = ZERO_TOL,
) -> Closure:
    """Truncated bracket closure of the pure powers.

    Only right-normed brackets [P_i, [P_j, ...]] are generated; every
    bracket of brackets is a constant-coefficient combination of these
    with the same multiset of leaves, hence the same degree.  A bracket
    that is a constant multiple of an element of the same degree (such as
    [Y, X] = -[X, Y]) is not added again.
    """
    if max_depth < 1:
        raise ClosureError("maxBracketDepth must be >= 1")
    pure = gamma.pure()
    if not pure:
        raise ClosureError("no pure powers: the finite-type condition cannot be met")
    if max_degree is None:
        max_degree = FormalDegree((8,) * gamma.nu)
    if probes is None:
        probes = default_probes(gamma.working_box())

    values: dict[str, np.ndarray] = {}
    elements: list[DegreedField] = []

    def admit(cand: DegreedField) -> bool:
        if cand.label in values:
            return False
        vals = cand.field(probes)
        if float(np.max(np.abs(vals))) < zero_tol:
            return False
        for other in elements:
            if other.degree == cand.degree and _is_multiple(vals, values[other.label], zero_tol):
                return False
        values[cand.label] = vals
        elements.append(cand)
        return True

    gens = [p for p in sorted(pure, key=DegreedField.sort_key)
            if p.degree <= max_degree and admit(p)]
    level = list(gens)
    truncated = False
    for depth in range(1, max_depth + 2):
        nxt = []
        for gen in gens:
            for inner in level:
                if gen.label == inner.label:
                    continue
                degree = gen.degree + inner.degree
                if depth > max_depth or not degree <= max_degree:
                    # cut off by a limit: remember whether something was lost
                    if not truncated and not _numerically_zero(
                            lie_bracket(gen.field, inner.field), probes, zero_tol):
                        truncated = True
                    continue
                cand = gen.bracket(inner)
                if admit(cand):
                    nxt.append(cand)
        level = nxt
        if not level:
            break
    elements.sort(key=DegreedField.sort_key)
    return Closure(tuple(elements), truncated, max_depth)


def _is_multiple(a: np.ndarray, b: np.ndarray, zero_tol: float) -> bool:
    bb = float(np.sum(b * b))
    if bb == 0.0:
        return False
    c = float(np.sum(a * b)) / bb
    return float(np.max(np.abs(a - c * b))) <= zero_tol + 1e-9 * float(np.max(np.abs(a)))


# ---------------------------------------------------------------------------
# pointwise span tests


@dataclass
class ConditionReport:
    condition: str
    satisfied: bool
    worst_residual: float = 0.0
    worst_coefficient: float = 0.0
    witness: str | None = None
    witness_point: tuple[float, ...] | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "satisfied": bool(self.satisfied),
            "worst_residual": float(self.worst_residual),
            "worst_coefficient": float(self.worst_coefficient),
            "witness": self.witness,
            "witness_point": None if self.witness_point is None else [float(v) for v in self.witness_point],
            "details": self.details,
        }

    @property
    def verdict(self) -> str:
        return "PASS" if self.satisfied else "FAIL"


def span_fit(target: np.ndarray, columns: Sequence[np.ndarray], rcond: float = 1e-10):
    """Pointwise least-squares fit of ``target`` by ``columns``.

    target: (m, n); columns: list of (m, n).  Returns per-point residual
    norms and the norm of the minimum-norm coefficient vector.  Rank is
    decided on unit-normalized columns so that tiny but independent
    directions still count (an absolute cutoff would silently drop them).
    """
    m = target.shape[0]
    res = np.linalg.norm(target, axis=1)
    coef = np.zeros(m)
    if not columns:
        return res, coef
    A_all = np.stack(columns, axis=-1)  # (m, n, k)
    for i in range(m):
        res[i], coef[i] = _min_norm_fit(A_all[i], target[i], rcond)
    return res, coef


def _min_norm_fit(A: np.ndarray, v: np.ndarray, rcond: float) -> tuple[float, float]:
    norms = np.linalg.norm(A, axis=0)
    keep = norms > 1e-300
    if not np.any(keep):
        return float(np.linalg.norm(v)), 0.0
    A, d = A[:, keep], norms[keep]
    As = A / d
    U, s, Vt = np.linalg.svd(As, full_matrices=True)
    r = int(np.sum(s > rcond * s[0]))
    w = Vt[:r].T @ ((U[:, :r].T @ v) / s[:r])
    residual = float(np.linalg.norm(As @ w - v))
    # A c = As w with c = w / d; the null-space component of w that
    # minimizes |c| gives the unscaled minimum-norm solution
    Z = Vt[r:].T
    if Z.shape[1]:
        scale = 1.0 / d
        z = np.linalg.lstsq(Z * scale[:, None], -(w * scale), rcond=None)[0]
        w = w + Z @ z
    return residual, float(np.linalg.norm(w / d))


def _span_report(condition, targets, pool, probes, span_tol, coeff_bound) -> ConditionReport:
    report = ConditionReport(condition, True)
    cache: dict[str, np.ndarray] = {}

    def values(df: DegreedField) -> np.ndarray:
        if df.label not in cache:
            cache[df.label] = df.field(probes)
        return cache[df.label]

    failures = []
    for tgt in targets:
        cols = [values(Y) for Y in pool if Y.degree <= tgt.degree]
        res, coef = span_fit(values(tgt), cols)
        # fixed reduction order: first worst probe wins ties
        i_res = int(np.argmax(res))
        i_coef = int(np.argmax(coef))
        bad = (res[i_res] >= span_tol) or (coef[i_coef] > coeff_bound)
        report.worst_residual = max(report.worst_residual, float(res[i_res]))
        report.worst_coefficient = max(report.worst_coefficient, float(coef[i_coef]))
        if bad:
            failures.append(tgt.label)
            if report.satisfied:
                report.satisfied = False
                idx = i_res if res[i_res] >= span_tol else i_coef
                report.witness = tgt.label
                report.witness_point = tuple(float(v) for v in probes[idx])
    report.details = {
        "span_tol": span_tol,
        "coeff_bound": coeff_bound,
        "probes": int(len(probes)),
        "targets": len(targets),
        "failures": failures,
    }
    return report


def check_finite_type(
    closure: Iterable[DegreedField],
    candidate_f: Sequence[DegreedField],
    probes: np.ndarray,
    span_tol: float = SPAN_TOL,
    coeff_bound: float = COEFF_BOUND,
) -> ConditionReport:
    """Every closure element X of degree d is spanned by {Y in F : e <= d}."""
    closure = list(closure)
    labels = {e.label for e in closure}
    missing = [Y.label for Y in candidate_f if Y.label not in labels]
    if missing:
        raise FieldError(f"candidate set is not a subset of the closure: {missing}")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] == 0:
        raise FieldError("probe set is empty")
    report = _span_report("finite-type", closure, list(candidate_f), probes, span_tol, coeff_bound)
    report.details["candidate"] = [Y.label for Y in candidate_f]
    return report


def search_finite_type(
    closure: Closure,
    probes: np.ndarray,
    span_tol: float = SPAN_TOL,
    coeff_bound: float = COEFF_BOUND,
) -> ConditionReport:
    """Search F_k = {closure elements of depth <= k} for a spanning set.

    If the closure was not truncated it is all of S (finite), so the
    finite-type condition holds with F = S provided it self-spans.  A
    truncated closure needs some F_k with k below the deepest level.
    """
    deepest = max(e.depth for e in closure)
    last = None
    ks = range(deepest + 1) if not closure.truncated else range(deepest)
    for k in ks:
        F = closure.up_to_depth(k)
        rep = check_finite_type(closure, F, probes, span_tol, coeff_bound)
        rep.details["depth_k"] = k
        rep.details["truncated_closure"] = closure.truncated
        if rep.satisfied:
            return rep
        last = rep
    if last is None:
        last = ConditionReport("finite-type", False, details={"reason": "closure has a single level"})
    return last


def check_algebraic(
    gamma: GammaSpec,
    closure: Iterable[DegreedField],
    probes: np.ndarray,
    span_tol: float = SPAN_TOL,
    coeff_bound: float = COEFF_BOUND,
) -> ConditionReport:
    """Every non-pure (X_alpha, deg alpha) is spanned by closure elements of degree <= deg alpha."""
    targets = gamma.non_pure()
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    report = _span_report("algebraic", targets, list(closure), probes, span_tol, coeff_bound)
    report.details["vacuous"] = not targets
    return report


def check_hormander(
    fields: Sequence[VectorField],
    point,
    max_depth: int,
    rank_tol: float = RANK_TOL,
) -> ConditionReport:
    """Rank of the iterated brackets of ``fields`` at ``point``."""
    if max_depth < 1:
        raise FieldError("maxDepth must be >= 1")
    point = np.asarray(point, dtype=float)
    n = point.shape[0]
    gens = list(fields)
    vectors = [X(point) for X in gens]
    ranks, smallest = [], []

    def rank_of(vecs):
        s = np.linalg.svd(np.array(vecs).T, compute_uv=False) if vecs else np.zeros(0)
        return int(np.sum(s > rank_tol)), (float(s[n - 1]) if len(s) >= n else 0.0)

    r, smin = rank_of(vectors)
    ranks.append(r)
    smallest.append(smin)
    level = gens
    neighbourhood = point + 0.05 * default_probes(np.array([[-1.0, 1.0]] * n), 16)
    for _ in range(2, max_depth + 1):
        if ranks[-1] == n:
            break
        nxt = []
        for g in gens:
            for inner in level:
                b = lie_bracket(g, inner)
                if _numerically_zero(b, np.vstack([point, neighbourhood]), ZERO_TOL):
                    continue
                nxt.append(b)
        vectors.extend(b(point) for b in nxt)
        r, smin = rank_of(vectors)
        ranks.append(r)
        smallest.append(smin)
        level = nxt
        if not level:
            break
    full = [i + 1 for i, rk in enumerate(ranks) if rk == n]
    min_depth = full[0] if full else None
    return ConditionReport(
        "hormander",
        min_depth is not None,
        witness_point=tuple(float(v) for v in point),
        details={
            "rank_by_depth": ranks,
            "smallest_singular_value_by_depth": smallest,
            "min_depth": min_depth,
            "dim": n,
            "rank_tol": rank_tol,
        },
    )
