"""Uniform tensor grids, grid functions, interpolation and cutoffs."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

from .kernels import smooth_step

MAGIC = b"RLGF"
FORMAT_VERSION = 1


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """Node-based uniform grid: ``shape[i]`` nodes spanning ``box[i]`` inclusive."""

    box: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        shape = tuple(int(s) for s in np.broadcast_to(self.shape, (box.shape[0],)))
        if any(s < 2 for s in shape):
            raise GridError("every axis needs at least 2 nodes")
        if np.any(box[:, 1] <= box[:, 0]):
            raise GridError("box must have positive extent on every axis")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def uniform(cls, box, n: int) -> "Grid":
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        return cls(box, (int(n),) * box.shape[0])

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> np.ndarray:
        return (self.box[:, 1] - self.box[:, 0]) / (np.array(self.shape) - 1)

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.shape)]

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Tensor trapezoid weights, flattened in C order."""
        w = np.ones(1)
        for n, h in zip(self.shape, self.spacing):
            wa = np.full(n, h)
            wa[0] = wa[-1] = h / 2
            w = np.multiply.outer(w, wa).ravel()
        return w

    def refined(self) -> "Grid":
        """Same box with the spacing halved."""
        return Grid(self.box, tuple(2 * s - 1 for s in self.shape))

    def function(self, values) -> "GridFunction":
        return GridFunction(self, values)

    def sample(self, f) -> "GridFunction":
        return GridFunction(self, np.asarray(f(self.points), dtype=float))

    def to_dict(self) -> dict:
        return {"box": self.box.tolist(), "shape": list(self.shape)}

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.shape == other.shape and np.array_equal(self.box, other.box)

    def __hash__(self) -> int:
        return hash((self.shape, self.box.tobytes()))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.size:
            raise GridError(f"{vals.size} values for a grid of {self.grid.size} nodes")
        if not np.all(np.isfinite(vals)):
            raise GridError("grid function has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + _vals(other))

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values - _vals(other))

    def __mul__(self, c) -> "GridFunction":
        return GridFunction(self.grid, self.values * (c.values if isinstance(c, GridFunction) else c))

    __rmul__ = __mul__

    def __abs__(self) -> "GridFunction":
        return GridFunction(self.grid, np.abs(self.values))

    def norm(self, p: float = 2.0) -> float:
        if np.isinf(p):
            return float(np.max(np.abs(self.values)))
        return float(np.dot(self.grid.weights, np.abs(self.values) ** p) ** (1.0 / p))

    def inner(self, other: "GridFunction") -> float:
        return float(np.dot(self.grid.weights, self.values * _vals(other)))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    # -- IO -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = json.dumps({"version": FORMAT_VERSION, "shape": list(self.grid.shape),
                             "box": self.grid.box.tolist(), "dtype": "<f8"},
                            sort_keys=True).encode()
        return MAGIC + struct.pack("<I", len(header)) + header + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridFunction":
        if data[:4] != MAGIC:
            raise GridError("not a grid-function file")
        (hlen,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8:8 + hlen])
        if header.get("version") != FORMAT_VERSION:
            raise GridError(f"unsupported grid-function version {header.get('version')}")
        vals = np.frombuffer(data[8 + hlen:], dtype=header["dtype"])
        return cls(Grid(np.array(header["box"]), tuple(header["shape"])), vals)

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".csv":
            path.write_text(self.to_csv())
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridFunction":
        path = Path(path)
        if path.suffix == ".csv":
            return cls.from_csv(path.read_text())
        return cls.from_bytes(path.read_bytes())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version={FORMAT_VERSION} shape={','.join(map(str, self.grid.shape))} "
                  f"box={json.dumps(self.grid.box.tolist())}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(self.grid.dim)] + ["value"])
        for p, v in zip(self.grid.points, self.values):
            writer.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# schema_version="):
            raise GridError("missing grid-function CSV header")
        meta = dict(item.split("=", 1) for item in lines[0][2:].split(" ", 2))
        shape = tuple(int(s) for s in meta["shape"].split(","))
        box = np.array(json.loads(meta["box"]))
        rows = list(csv.reader(lines[2:]))
        vals = np.array([float(r[-1]) for r in rows])
        return cls(Grid(box, shape), vals)


def _vals(g) -> np.ndarray:
    return g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float)


# ---------------------------------------------------------------------------
# interpolation


def interpolation_weights(grid: Grid, targets: np.ndarray):
    """Multilinear stencil of each target: (indices, weights), both (m, 2^n).

    Targets outside the box are clamped to it.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m, n = targets.shape
    if n != grid.dim:
        raise GridError(f"targets have dimension {n}, grid has {grid.dim}")
    shape = np.array(grid.shape)
    pos = (targets - grid.box[:, 0]) / grid.spacing
    pos = np.clip(pos, 0.0, shape - 1)
    base = np.minimum(np.floor(pos).astype(np.int64), shape - 2)
    frac = pos - base
    strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(n)], dtype=np.int64)
    idx = np.zeros((m, 2**n), dtype=np.int64)
    wts = np.ones((m, 2**n))
    for corner in range(2**n):
        for axis in range(n):
            bit = (corner >> (n - 1 - axis)) & 1
            idx[:, corner] += (base[:, axis] + bit) * strides[axis]
            wts[:, corner] *= frac[:, axis] if bit else 1.0 - frac[:, axis]
    return idx, wts


def interpolation_matrix(grid: Grid, targets: np.ndarray) -> sparse.csr_matrix:
    idx, wts = interpolation_weights(grid, targets)
    m = idx.shape[0]
    rows = np.repeat(np.arange(m), idx.shape[1])
    return sparse.csr_matrix((wts.ravel(), (rows, idx.ravel())), shape=(m, grid.size))


def interpolate(f: GridFunction, targets: np.ndarray) -> np.ndarray:
    idx, wts = interpolation_weights(f.grid, targets)
    return np.sum(f.values[idx] * wts, axis=1)


# ---------------------------------------------------------------------------
# cutoffs


@dataclass(frozen=True)
class Cutoff:
    """Radial plateau bump in box-normalized coordinates.

    With rho = |(x - center) / half_width|, the value is 1 for rho <= plateau
    and 0 for rho >= support.
    """

    center: tuple[float, ...]
    half_width: tuple[float, ...]
    plateau: float
    support: float

    def __post_init__(self):
        if not 0 < self.plateau < self.support:
            raise GridError("cutoff needs 0 < plateau < support")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        rho = np.linalg.norm((x - np.array(self.center)) / np.array(self.half_width), axis=-1)
        s = (rho - self.plateau) / (self.support - self.plateau)
        return smooth_step(0.5 + 0.5 * np.clip(s, -1.0, 2.0))

    def dominates(self, other: "Cutoff") -> bool:
        """self == 1 on the support of other."""
        return self.center == other.center and self.half_width == other.half_width \
            and other.support <= self.plateau


DEFAULT_RADII = {"psi": (0.6, 0.85), "psi0": (0.6, 0.85), "psi1": (0.4, 0.6), "psi2": (0.25, 0.4)}


@dataclass(frozen=True)
class CutoffSet:
    psi: Cutoff
    psi0: Cutoff
    psi1: Cutoff
    psi2: Cutoff

    @classmethod
    def for_box(cls, box, radii: dict | None = None) -> "CutoffSet":
        box = np.asarray(box, dtype=float)
        center = tuple(float(c) for c in box.mean(axis=1))
        half = tuple(float(h) for h in (box[:, 1] - box[:, 0]) / 2)
        r = dict(DEFAULT_RADII)
        r.update(radii or {})
        out = cls(**{name: Cutoff(center, half, *r[name]) for name in ("psi", "psi0", "psi1", "psi2")})
        if not (out.psi0.dominates(out.psi1) and out.psi1.dominates(out.psi2)):
            raise GridError("cutoffs must nest: psi2 < psi1 < psi0")
        return out

    def to_dict(self) -> dict:
        return {name: [getattr(self, name).plateau, getattr(self, name).support]
                for name in ("psi", "psi0", "psi1", "psi2")}


def sigma0(s) -> np.ndarray:
    """Nonnegative 1-D profile equal to 1 on |s| <= 1/2, vanishing for |s| >= 1."""
    return smooth_step(np.abs(np.asarray(s, dtype=float)))


def sigma(t) -> np.ndarray:
    """sigma(t) = prod_i sigma0(t_i)."""
    t = np.asarray(t, dtype=float)
    return np.prod(sigma0(t), axis=-1)


def sigma_integral(dim: int) -> float:
    """Integral of sigma over R^dim (Gauss-Legendre on [-1, 1], exact to rounding)."""
    x, w = np.polynomial.legendre.leggauss(200)
    return float(np.dot(w, sigma0(x))) ** dim
