"""Discretized integral operators on a grid.

Every operator here is an average of ``f`` along flows,

    Op f(x) = a(x) sum_q c_q b(y_q(x)) f(y_q(x)),

realized as a sparse matrix with multilinear interpolation at the flow
targets ``y_q(x)``.  Sums and compositions are kept lazy.  Adjoints are
taken in the quadrature inner product <f, g> = sum_i w_i f_i g_i.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .fields import DegreedField, GammaSpec, generate_closure, search_finite_type, default_probes
from .flows import FlowConfig, flow, scale_t
from .grid import CutoffSet, Cutoff, Grid, GridFunction, interpolation_weights, sigma
from .kernels import BumpFamily, ProductKernel, make_lp_family, mollifier

log = logging.getLogger(__name__)

INF = math.inf
DENSE_LIMIT = 4096


class OperatorError(ValueError):
    pass


def _as_values(f, grid: Grid) -> np.ndarray:
    if isinstance(f, GridFunction):
        if f.grid != grid:
            raise OperatorError("grid function lives on a different grid")
        return f.values
    v = np.asarray(f, dtype=float).reshape(-1)
    if v.size != grid.size:
        raise OperatorError(f"expected {grid.size} values, got {v.size}")
    return v


@dataclass(frozen=True, eq=False)
class DiscretizedOperator:
    grid: Grid
    matvec: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    rmatvec: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    meta: Mapping = field(default_factory=dict)
    matrix: sparse.csr_matrix | None = field(default=None, repr=False)

    @classmethod
    def from_matrix(cls, grid: Grid, matrix, meta=None) -> "DiscretizedOperator":
        M = sparse.csr_matrix(matrix)
        MT = M.T.tocsr()
        w = grid.weights
        return cls(grid, lambda v: M @ v, lambda g: (MT @ (w * g)) / w, dict(meta or {}), M)

    @classmethod
    def zero(cls, grid: Grid, meta=None) -> "DiscretizedOperator":
        z = sparse.csr_matrix((grid.size, grid.size))
        return cls.from_matrix(grid, z, {**(meta or {}), "op": "zero"})

    @classmethod
    def identity(cls, grid: Grid) -> "DiscretizedOperator":
        return cls.from_matrix(grid, sparse.identity(grid.size, format="csr"), {"op": "identity"})

    @classmethod
    def multiplier(cls, grid: Grid, values, meta=None) -> "DiscretizedOperator":
        return cls.from_matrix(grid, sparse.diags(np.asarray(values, dtype=float)), meta)

    @property
    def is_zero(self) -> bool:
        return self.meta.get("op") == "zero"

    def apply(self, f) -> GridFunction:
        return GridFunction(self.grid, self.matvec(_as_values(f, self.grid)))

    def adjoint_apply(self, g) -> GridFunction:
        return GridFunction(self.grid, self.rmatvec(_as_values(g, self.grid)))

    def adjoint(self) -> "DiscretizedOperator":
        return DiscretizedOperator(self.grid, self.rmatvec, self.matvec,
                                   {"op": "adjoint", "of": dict(self.meta)})

    def compose(self, other: "DiscretizedOperator") -> "DiscretizedOperator":
        """self after other."""
        if self.is_zero or other.is_zero:
            return DiscretizedOperator.zero(self.grid)
        a, b = self, other
        return DiscretizedOperator(self.grid, lambda v: a.matvec(b.matvec(v)),
                                   lambda g: b.rmatvec(a.rmatvec(g)),
                                   {"op": "compose", "terms": [dict(a.meta), dict(b.meta)]})

    __matmul__ = compose

    def __add__(self, other: "DiscretizedOperator") -> "DiscretizedOperator":
        return op_sum([self, other])

    def __sub__(self, other: "DiscretizedOperator") -> "DiscretizedOperator":
        return op_sum([self, other.scaled(-1.0)])

    def scaled(self, c: float) -> "DiscretizedOperator":
        c = float(c)
        if self.matrix is not None:
            return DiscretizedOperator.from_matrix(self.grid, c * self.matrix,
                                                   {"op": "scale", "c": c, "of": dict(self.meta)})
        a = self
        return DiscretizedOperator(self.grid, lambda v: c * a.matvec(v), lambda g: c * a.rmatvec(g),
                                   {"op": "scale", "c": c, "of": dict(a.meta)})

    def __mul__(self, c: float) -> "DiscretizedOperator":
        return self.scaled(c)

    __rmul__ = __mul__

    def to_dense(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        n = self.grid.size
        if n > limit:
            raise OperatorError(f"refusing to materialize {n} x {n} (limit {limit})")
        if self.matrix is not None:
            return self.matrix.toarray()
        eye = np.eye(n)
        return np.stack([self.matvec(eye[:, i]) for i in range(n)], axis=1)


def op_sum(ops: Sequence[DiscretizedOperator], meta=None) -> DiscretizedOperator:
    ops = [o for o in ops if not o.is_zero]
    if not ops:
        raise OperatorError("empty operator sum") if meta is None else None
    grid = ops[0].grid
    if all(o.matrix is not None for o in ops):
        total = ops[0].matrix
        for o in ops[1:]:
            total = total + o.matrix
        return DiscretizedOperator.from_matrix(grid, total, meta or {"op": "sum", "count": len(ops)})
    return DiscretizedOperator(
        grid,
        lambda v: sum(o.matvec(v) for o in ops),
        lambda g: sum(o.rmatvec(g) for o in ops),
        meta or {"op": "sum", "count": len(ops)},
    )


# ---------------------------------------------------------------------------
# assembly


def averaging_matrix(
    grid: Grid,
    targets: Callable[[np.ndarray, np.ndarray], np.ndarray],
    nodes: np.ndarray,
    coeffs: np.ndarray,
    outer: Callable | None,
    inner: Callable | None,
    batch_points: int = 400_000,
) -> sparse.csr_matrix:
    """Sparse matrix of f -> outer(x) sum_q coeffs[q] inner(y_q(x)) f(y_q(x)).

    ``targets(t_rows, x_rows)`` maps matching rows of parameters and points
    to flow targets.  Rows where ``outer`` vanishes are left empty.
    """
    pts = grid.points
    a = np.ones(grid.size) if outer is None else outer(pts)
    rows = np.nonzero(a)[0]
    keep = coeffs != 0.0
    nodes, coeffs = nodes[keep], coeffs[keep]
    total = sparse.csr_matrix((grid.size, grid.size))
    if rows.size == 0 or nodes.shape[0] == 0:
        return total
    x = pts[rows]
    per_batch = max(1, batch_points // rows.size)
    for start in range(0, nodes.shape[0], per_batch):
        nq = nodes[start:start + per_batch]
        cq = coeffs[start:start + per_batch]
        t_rows = np.repeat(nq, rows.size, axis=0)
        x_rows = np.tile(x, (nq.shape[0], 1))
        y = targets(t_rows, x_rows)
        idx, wts = interpolation_weights(grid, y)
        val = np.repeat(cq, rows.size) * np.tile(a[rows], nq.shape[0])
        if inner is not None:
            val = val * inner(y)
        data = (wts * val[:, None]).ravel()
        r = np.repeat(np.tile(rows, nq.shape[0]), idx.shape[1])
        part = sparse.csr_matrix((data, (r, idx.ravel())), shape=(grid.size, grid.size))
        total = total + part
    total.sum_duplicates()
    return total


def translation_matrix(grid: Grid, displacements: np.ndarray, coeffs: np.ndarray,
                       outer: Callable | None) -> sparse.csr_matrix:
    """Same matrix as ``averaging_matrix`` when every flow is x -> x + d_q.

    The multilinear stencil of x + d depends on d alone, so the node sum is
    collapsed into one stencil of (integer offset, weight) pairs; per-axis
    index clipping reproduces the clamp-to-box rule exactly.
    """
    pts = grid.points
    a = np.ones(grid.size) if outer is None else outer(pts)
    rows = np.nonzero(a)[0]
    n = grid.dim
    keep = coeffs != 0.0
    d, c = displacements[keep], coeffs[keep]
    if rows.size == 0 or c.size == 0:
        return sparse.csr_matrix((grid.size, grid.size))
    shift = d / grid.spacing
    base = np.floor(shift).astype(np.int64)
    frac = shift - base
    offsets, wts = [], []
    for corner in range(2**n):
        bits = np.array([(corner >> (n - 1 - ax)) & 1 for ax in range(n)])
        w = c * np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
        offsets.append(base + bits)
        wts.append(w)
    offsets, wts = np.concatenate(offsets), np.concatenate(wts)
    uniq, inv = np.unique(offsets, axis=0, return_inverse=True)
    stencil = np.bincount(inv.reshape(-1), weights=wts, minlength=len(uniq))
    nz = stencil != 0.0
    uniq, stencil = uniq[nz], stencil[nz]
    shape = np.array(grid.shape)
    multi = np.stack(np.unravel_index(rows, grid.shape), axis=1)
    cols = np.clip(multi[:, None, :] + uniq[None, :, :], 0, shape - 1)
    cols = np.ravel_multi_index(tuple(np.moveaxis(cols, -1, 0)), grid.shape)
    vals = a[rows][:, None] * stencil[None, :]
    r = np.repeat(rows, len(stencil))
    M = sparse.csr_matrix((vals.ravel(), (r, cols.ravel())), shape=(grid.size, grid.size))
    M.sum_duplicates()
    return M


def translation_velocities(gamma: GammaSpec) -> np.ndarray | None:
    """(A, n) constant velocities when every term of gamma is a constant field."""
    fields = list(gamma.terms.values())
    if not all(X.is_constant for X in fields):
        return None
    return np.stack([X(np.zeros(gamma.dim)) for X in fields])


def _tensor_nodes(per_factor: Sequence[tuple[np.ndarray, np.ndarray]]):
    idx = np.stack(np.meshgrid(*[np.arange(len(p)) for p, _ in per_factor], indexing="ij"), -1)
    idx = idx.reshape(-1, len(per_factor))
    t = np.concatenate([p[idx[:, m]] for m, (p, _) in enumerate(per_factor)], axis=-1)
    w = np.prod([w[idx[:, m]] for m, (_, w) in enumerate(per_factor)], axis=0)
    return t, w


def midpoint_nodes(dim: int, n: int, radius: float = 1.0):
    """Midpoint tensor rule on [-radius, radius]^dim (no node on an axis for even n)."""
    h = 2.0 * radius / n
    axis = -radius + h * (np.arange(n) + 0.5)
    return _tensor_nodes([(axis[:, None], np.full(n, h))] * dim)


def sigma_quadrature(dim: int, n: int):
    """Nodes, weights*sigma and the reported integral of sigma on R^dim."""
    t, w = midpoint_nodes(dim, n, 1.0)
    c = w * sigma(t)
    return t, c, float(np.sum(c))


def unit_ball_quadrature(dim: int, n: int):
    """Midpoint nodes inside |t| <= 1 with weights rescaled to the exact ball volume."""
    t, w = midpoint_nodes(dim, n, 1.0)
    inside = np.linalg.norm(t, axis=1) <= 1.0
    t, w = t[inside], w[inside]
    volume = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)
    return t, w * (volume / np.sum(w)), volume


def lp_quadrature(q: int, radius: float, j: int, per_axis: int = 32):
    """Nodes and coefficients of the j-th Littlewood-Paley piece on R^q.

    The two mollifiers are normalized on the nodes themselves, so the
    discrete pieces telescope exactly: the j = 0 weights sum to 1 and every
    j > 0 piece sums to 0.
    """
    lp = make_lp_family((q,), radius, (max(j, 1),))
    n = max(8, per_axis >> (q - 1))
    u, w = _tensor_nodes([lp.factor_grid(0, n)])
    r = lp.factor_radius
    inner = w * mollifier(u, r / 2)
    inner /= inner.sum()
    if j == 0:
        return u, inner
    outer = w * mollifier(u, r)
    return u, inner - outer / outer.sum()


def factor_gamma(fields: Sequence[DegreedField]) -> GammaSpec:
    """GammaSpec of x -> exp(t . X^mu) x for a single factor's fields."""
    q = len(fields)
    terms = {tuple(int(i == k) for i in range(q)): f.field for k, f in enumerate(fields)}
    names = {tuple(int(i == k) for i in range(q)): f.label for k, f in enumerate(fields)}
    return GammaSpec((q,), terms, names)


def _index_scale(j, degrees) -> np.ndarray:
    """2^{-j d_i} per coordinate (0 for j = inf)."""
    if j == INF:
        return np.zeros(len(degrees))
    return np.array([2.0 ** (-j * d) for d in degrees])


def j_subset(j: Sequence, E: Sequence[int]) -> tuple:
    """j_E: j_mu for mu in E, infinity elsewhere."""
    return tuple(j[m] if m in E else INF for m in range(len(j)))


# ---------------------------------------------------------------------------
# the factory


@dataclass
class OperatorFactory:
    """Builds and caches the operators of one experiment.

    ``finite_set`` is the spanning set whose factor-mu pure elements drive
    the one-parameter operators D_j^mu and A_j^mu; by default it is found by
    searching the bracket closure (falling back to the pure powers).
    """

    gamma: GammaSpec
    grid: Grid
    cutoffs: CutoffSet | None = None
    family: BumpFamily | None = None
    flow_cfg: FlowConfig = field(default_factory=lambda: FlowConfig(step_count=16))
    tquad: int = 8
    sigma_quad: int = 8
    lp_quad: int = 32
    lp_radius: float = 0.5
    finite_set: list[DegreedField] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.grid.dim != self.gamma.dim:
            raise OperatorError("grid and gamma live in different dimensions")
        if self.cutoffs is None:
            self.cutoffs = CutoffSet.for_box(self.grid.box)
        if self.finite_set is None:
            self.finite_set = _default_finite_set(self.gamma)

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def _flow_matrix(self, gamma: GammaSpec, t, coeffs, outer, inner) -> sparse.csr_matrix:
        vel = translation_velocities(gamma)
        if vel is not None and inner is None and self.flow_cfg.box is None:
            return translation_matrix(self.grid, gamma.monomials(t) @ vel, coeffs, outer)
        return averaging_matrix(self.grid, self._targets(gamma), t, coeffs, outer, inner)

    def _targets(self, gamma: GammaSpec):
        cfg = self.flow_cfg
        return lambda t, x: flow(gamma, t, x, cfg)

    # -- T ----------------------------------------------------------------

    def _require_family(self) -> BumpFamily:
        if self.family is None:
            raise OperatorError("this operator needs a kernel family")
        return self.family

    def t_piece(self, j) -> DiscretizedOperator:
        """T_j f(x) = psi(x) int f(gamma_{2^{-j} u}(x)) eta_j(u) du; zero outside N^nu."""
        j = tuple(int(v) for v in j)
        fam = self._require_family()
        if any(v < 0 for v in j) or any(v > J for v, J in zip(j, fam.J)):
            return DiscretizedOperator.zero(self.grid, {"op": "T_j", "j": list(j)})

        def build():
            per_factor = [fam.factor_grid(mu, self.tquad) for mu in range(fam.nu)]
            u, w = _tensor_nodes(per_factor)
            coeffs = w * fam.member(j)(u)
            t = scale_t(u, j, fam.factor_dims)
            M = self._flow_matrix(self.gamma, t, coeffs, self.cutoffs.psi, None)
            return DiscretizedOperator.from_matrix(self.grid, M, {"op": "T_j", "j": list(j)})

        return self._cached(("T_j", j), build)

    def t_full(self, J=None) -> DiscretizedOperator:
        """T with the kernel truncated at J: the sum of the pieces on their own quadratures."""
        fam = self._require_family()
        J = tuple(fam.J if J is None else J)
        kernel = ProductKernel(fam, J)
        return self._cached(("T", J), lambda: op_sum([self.t_piece(j) for j in kernel.indices()],
                                                      {"op": "T", "J": list(J)}))

    # -- one-parameter factor operators -----------------------------------

    def factor_fields(self, mu: int) -> list[DegreedField]:
        out = [f for f in self.finite_set if f.degree.is_pure() and f.degree.components[mu] > 0]
        if not out:
            raise OperatorError(f"no pure fields of factor {mu} in the spanning set")
        return out

    def d_mu(self, mu: int, j: int) -> DiscretizedOperator:
        """D_j^mu f(x) = psi0(x) int f(e^{t.X} x) psi0(e^{t.X} x) eta_j^{(2^j)}(t) dt."""
        if j < 0:
            return DiscretizedOperator.zero(self.grid)

        def build():
            fields = self.factor_fields(mu)
            degrees = [f.degree.components[mu] for f in fields]
            u, coeffs = lp_quadrature(len(fields), self.lp_radius, j, self.lp_quad)
            t = u * _index_scale(j, degrees)
            M = averaging_matrix(self.grid, self._targets(factor_gamma(fields)), t, coeffs,
                                 self.cutoffs.psi0, self.cutoffs.psi0)
            return DiscretizedOperator.from_matrix(self.grid, M, {"op": "D_mu", "mu": mu, "j": j})

        return self._cached(("D_mu", mu, j), build)

    def d(self, j) -> DiscretizedOperator:
        """D_j = D_{j_1}^1 ... D_{j_nu}^nu; zero when any j_mu < 0."""
        j = tuple(int(v) for v in j)
        if any(v < 0 for v in j):
            return DiscretizedOperator.zero(self.grid)

        def build():
            op = self.d_mu(0, j[0])
            for mu in range(1, self.gamma.nu):
                op = op.compose(self.d_mu(mu, j[mu]))
            return op

        return self._cached(("D", j), build)

    def a_mu(self, mu: int, j) -> DiscretizedOperator:
        """A_j^mu with psi1 in place of psi0 and sigma in place of eta; j may be infinite."""
        def build():
            fields = self.factor_fields(mu)
            degrees = [f.degree.components[mu] for f in fields]
            u, c, _ = sigma_quadrature(len(fields), self.sigma_quad)
            t = u * _index_scale(j, degrees)
            M = averaging_matrix(self.grid, self._targets(factor_gamma(fields)), t, c,
                                 self.cutoffs.psi1, self.cutoffs.psi1)
            return DiscretizedOperator.from_matrix(self.grid, M, {"op": "A_mu", "mu": mu, "j": str(j)})

        return self._cached(("A_mu", mu, j), build)

    def a(self, j) -> DiscretizedOperator:
        j = tuple(j)

        def build():
            op = self.a_mu(0, j[0])
            for mu in range(1, self.gamma.nu):
                op = op.compose(self.a_mu(mu, j[mu]))
            return op

        return self._cached(("A", j), build)

    def sigma_integral(self, mu: int) -> float:
        return sigma_quadrature(len(self.factor_fields(mu)), self.sigma_quad)[2]

    def m(self, j) -> DiscretizedOperator:
        """M_j f(x) = psi2(x) int f(gamma_{2^{-j}t}(x)) psi2(gamma_{2^{-j}t}(x)) sigma(t) dt."""
        j = tuple(j)

        def build():
            u, c, _ = sigma_quadrature(self.gamma.N, self.sigma_quad)
            t = scale_t(u, j, self.gamma.factor_dims)
            M = averaging_matrix(self.grid, self._targets(self.gamma), t, c,
                                 self.cutoffs.psi2, self.cutoffs.psi2)
            return DiscretizedOperator.from_matrix(self.grid, M, {"op": "M", "j": [str(v) for v in j]})

        return self._cached(("M", j), build)

    def m_sigma_integral(self) -> float:
        return sigma_quadrature(self.gamma.N, self.sigma_quad)[2]

    def b(self, j) -> DiscretizedOperator:
        """B_j = sum over E of (-1)^{|E|} A_{j_{E^c}} M_{j_E}."""
        j = tuple(j)
        nu = self.gamma.nu

        def build():
            terms = []
            for size in range(nu + 1):
                for E in itertools.combinations(range(nu), size):
                    Ec = [m for m in range(nu) if m not in E]
                    term = self.a(j_subset(j, Ec)).compose(self.m(j_subset(j, E)))
                    terms.append(term.scaled((-1.0) ** size))
            return op_sum(terms, {"op": "B", "j": list(j)})

        return self._cached(("B", j), build)

    # -- near-diagonal split ----------------------------------------------

    def d_indices(self, Jmax: int) -> list[tuple[int, ...]]:
        return list(itertools.product(range(Jmax + 1), repeat=self.gamma.nu))

    def _pair_operator(self, Jmax: int, keep: Callable[[tuple, tuple], bool], meta) -> DiscretizedOperator:
        idx = self.d_indices(Jmax)
        ops = {j: self.d(j) for j in idx}
        pairs = {j: [k for k in idx if keep(j, k)] for j in idx}

        def matvec(v):
            dk = {k: ops[k].matvec(v) for k in idx}
            out = np.zeros_like(v)
            for j in idx:
                if pairs[j]:
                    out += ops[j].matvec(sum(dk[k] for k in pairs[j]))
            return out

        def rmatvec(g):
            dj = {j: ops[j].rmatvec(g) for j in idx}
            out = np.zeros_like(g)
            for k in idx:
                js = [j for j in idx if k in pairs[j]]
                if js:
                    out += ops[k].rmatvec(sum(dj[j] for j in js))
            return out

        return DiscretizedOperator(self.grid, matvec, rmatvec, meta)

    def u_m(self, M: int, Jmax: int) -> DiscretizedOperator:
        return self._pair_operator(Jmax, lambda j, k: index_distance(j, k) <= M,
                                   {"op": "U_M", "M": M, "Jmax": Jmax})

    def r_m(self, M: int, Jmax: int) -> DiscretizedOperator:
        return self._pair_operator(Jmax, lambda j, k: index_distance(j, k) > M,
                                   {"op": "R_M", "M": M, "Jmax": Jmax})

    def d_sum(self, Jmax: int) -> DiscretizedOperator:
        return op_sum([self.d(j) for j in self.d_indices(Jmax)], {"op": "sum D_j", "Jmax": Jmax})

    def v_m(self, M: int, Jmax: int, neumann_terms: int, plateau: Cutoff | None = None,
            q_norm: float | None = None) -> "NeumannInverse":
        """Truncated Neumann series for U_M on the psi0 plateau."""
        plateau = plateau or self.cutoffs.psi0
        chi = (plateau(self.grid.points) >= 1.0).astype(float)
        U = self.u_m(M, Jmax)
        P = DiscretizedOperator.multiplier(self.grid, chi, {"op": "plateau"})
        Q = P.compose(DiscretizedOperator.identity(self.grid) - U).compose(P)
        if q_norm is None:
            from .analysis import op_norm_l2
            q_norm = op_norm_l2(Q).value
        if q_norm >= 1.0:
            raise OperatorError(f"remainder norm {q_norm:.3f} >= 1: increase M or Jmax")
        return NeumannInverse(Q, P, U, neumann_terms, q_norm, self.cutoffs.psi1(self.grid.points))

    # -- maximal ----------------------------------------------------------

    def maximal(self, delta_grid: Sequence[Sequence[float]], ball_quad: int | None = None) -> "MaximalOperator":
        n = ball_quad or self.tquad
        t, w, volume = unit_ball_quadrature(self.gamma.N, n)
        averages = []
        for delta in delta_grid:
            delta = tuple(float(d) for d in delta)
            if len(delta) != self.gamma.nu or any(not 0 < d <= 1 for d in delta):
                raise OperatorError(f"delta {delta} must lie in (0, 1]^nu")
            scale = np.repeat(delta, self.gamma.factor_dims)
            M = self._flow_matrix(self.gamma, t * scale, w, None, None)
            averages.append(DiscretizedOperator.from_matrix(self.grid, M, {"op": "average", "delta": list(delta)}))
        return MaximalOperator(self.grid, averages, self.cutoffs.psi(self.grid.points), volume)


def index_distance(j, k) -> int:
    """|j - k| as the l1 distance of multi-indices."""
    return int(sum(abs(a - b) for a, b in zip(j, k)))


def _default_finite_set(gamma: GammaSpec) -> list[DegreedField]:
    try:
        probes = default_probes(gamma.working_box(), 64)
        closure = generate_closure(gamma, max_depth=3, probes=probes)
        report = search_finite_type(closure, probes)
        if report.satisfied:
            return closure.up_to_depth(report.details["depth_k"])
    except Exception as exc:  # the factor operators only need the pure powers
        log.debug("finite-type search failed: %s", exc)
    return gamma.pure()


@dataclass(frozen=True, eq=False)
class NeumannInverse:
    """V_M = sum_{i <= K} Q^i chi_P with Q = chi_P (I - U_M) chi_P."""

    Q: DiscretizedOperator
    P: DiscretizedOperator
    U: DiscretizedOperator
    terms: int
    q_norm: float
    psi1: np.ndarray

    def apply(self, f) -> GridFunction:
        v = self.P.matvec(_as_values(f, self.P.grid))
        out = v.copy()
        for _ in range(self.terms):
            v = self.Q.matvec(v)
            out = out + v
        return GridFunction(self.P.grid, out)

    def reproducing_residual(self, f) -> float:
        """|| psi1 U_M V_M f - psi1 f ||_2 / || psi1 f ||_2."""
        fv = _as_values(f, self.P.grid)
        Vf = self.apply(fv).values
        diff = self.psi1 * (self.U.matvec(Vf) - fv)
        base = GridFunction(self.P.grid, self.psi1 * fv).norm(2)
        return GridFunction(self.P.grid, diff).norm(2) / max(base, 1e-300)


@dataclass(frozen=True, eq=False)
class MaximalOperator:
    """M f(x) = psi(x) max over delta of int_{|t|<=1} |f(gamma_{delta t}(x))| dt."""

    grid: Grid
    averages: list[DiscretizedOperator]
    psi: np.ndarray
    volume: float

    def apply(self, f) -> GridFunction:
        v = np.abs(_as_values(f, self.grid))
        best = np.max(np.stack([A.matvec(v) for A in self.averages]), axis=0)
        return GridFunction(self.grid, self.psi * best)


# ---------------------------------------------------------------------------
# vector-valued operators


def in_range(j, Jmax) -> bool:
    return all(0 <= v <= Jmax for v in j)


def vector_tkk(factory: OperatorFactory, k1, k2, fs: Mapping[tuple, GridFunction], Jmax: int) -> dict:
    """{D_j T_{j+k1} D_{j+k2} f_j}; indices outside N^nu (or the truncation) give 0."""
    out = {}
    for j, f in fs.items():
        a = tuple(x + y for x, y in zip(j, k1))
        b = tuple(x + y for x, y in zip(j, k2))
        if not (in_range(j, Jmax) and in_range(a, Jmax) and in_range(b, Jmax)):
            out[j] = GridFunction(f.grid, np.zeros(f.grid.size))
            continue
        out[j] = tkk_component(factory, j, k1, k2).apply(f)
    return out


def tkk_component(factory: OperatorFactory, j, k1, k2) -> DiscretizedOperator:
    a = tuple(x + y for x, y in zip(j, k1))
    b = tuple(x + y for x, y in zip(j, k2))
    return factory.d(j).compose(factory.t_piece(a)).compose(factory.d(b))


def vector_bk(factory: OperatorFactory, k, fs: Mapping[tuple, GridFunction], Jmax: int) -> dict:
    """{B_j D_{j+k} f_j} with the same zero-extension convention."""
    out = {}
    for j, f in fs.items():
        a = tuple(x + y for x, y in zip(j, k))
        if not (in_range(j, Jmax) and in_range(a, Jmax)):
            out[j] = GridFunction(f.grid, np.zeros(f.grid.size))
            continue
        out[j] = factory.b(j).compose(factory.d(a)).apply(f)
    return out


def bk_component(factory: OperatorFactory, j, k) -> DiscretizedOperator:
    a = tuple(x + y for x, y in zip(j, k))
    return factory.b(j).compose(factory.d(a))


# convenience wrappers with the operation names used in the docs


def build_tj(gamma, family, j, cutoffs, grid, tquad=8, flow_cfg=None) -> DiscretizedOperator:
    fac = OperatorFactory(gamma, grid, cutoffs, family, flow_cfg or FlowConfig(step_count=16), tquad)
    return fac.t_piece(j)


def build_t(gamma, kernel: ProductKernel, cutoffs, grid, tquad=8, flow_cfg=None) -> DiscretizedOperator:
    fac = OperatorFactory(gamma, grid, cutoffs, kernel.family, flow_cfg or FlowConfig(step_count=16), tquad)
    return fac.t_full(kernel.J)
