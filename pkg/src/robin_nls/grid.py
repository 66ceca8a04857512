"""Truncated uniform grid on [0, L], discrete fields and quadrature.

The half-line is cut at ``x = L`` with a homogeneous Dirichlet closure, so
every field carries ``u(x_N) = 0``. Integrals use the composite trapezoid
rule. The gradient norm is the cell-wise (summation-by-parts) form
``sum |u_{j+1} - u_j|^2 / h``, which is the quadratic form of the ghost-point
Laplacian used by the time stepper under trapezoid weights.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "GridTailError",
    "TruncationWarning",
    "norms",
    "derivative",
    "second_moment",
    "boundary_trace",
    "tail_fraction",
    "check_tail",
    "chirped_gaussian",
    "write_field_csv",
    "read_field_csv",
]

MIN_NODES = 16
TAIL_TOLERANCE = 1e-8


class GridTailError(ValueError):
    """Raised when a field carries too much weight near the truncation point."""


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid:
    L: float = 40.0
    N: int = 4096

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"truncation length must be positive, got L={self.L}")
        if int(self.N) != self.N or self.N < MIN_NODES:
            raise ValueError(f"need an integer N >= {MIN_NODES}, got N={self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.N + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def refine(self, levels: int = 1) -> "Grid":
        return Grid(self.L, self.N * 2**levels)

    def zeros(self) -> "Field":
        return Field(np.zeros(self.N + 1, dtype=complex), self)

    def sample(self, fn) -> "Field":
        """Evaluate ``fn(x)`` on the nodes and impose the Dirichlet closure."""
        values = np.asarray(fn(self.x), dtype=complex) * np.ones(self.N + 1)
        values[-1] = 0.0
        return Field(values, self)


@dataclass(frozen=True)
class Field:
    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.N + 1,):
            raise ValueError(
                f"field has shape {v.shape}, grid expects ({self.grid.N + 1},)"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        if v[-1] != 0:
            raise ValueError("field must vanish at x = L (Dirichlet closure)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __mul__(self, scalar) -> "Field":
        return Field(self.values * scalar, self.grid)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


def _trapz(grid: Grid, integrand: np.ndarray) -> float:
    return float(np.dot(grid.weights, integrand))


def norms(f: Field, p: float) -> tuple[float, float, float]:
    """Return ``(mass, ux_sq, lp_pp)``: ``||u||^2``, ``||u_x||^2`` and ``||u||_{p+2}^{p+2}``."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    u = f.values
    g = f.grid
    amp2 = np.abs(u) ** 2
    mass = _trapz(g, amp2)
    ux_sq = float(np.sum(np.abs(np.diff(u)) ** 2) / g.h)
    lp_pp = _trapz(g, amp2 ** (0.5 * p + 1.0))
    return mass, ux_sq, lp_pp


def derivative(f: Field, boundary_value: complex | None = None) -> np.ndarray:
    """Nodal first derivative.

    Central differences inside, second-order one-sided stencils at both ends.
    ``boundary_value`` replaces the stencil at ``x = 0`` (e.g. the value
    imposed by the boundary condition).
    """
    u = f.values
    h = f.grid.h
    du = np.empty_like(u)
    du[1:-1] = (u[2:] - u[:-2]) / (2 * h)
    du[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
    du[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    if boundary_value is not None:
        du[0] = boundary_value
    return du


def tail_fraction(f: Field, weight_power: int = 0) -> float:
    """Share of ``int x^k |u|^2`` carried by the last quarter of the domain."""
    g = f.grid
    integrand = g.x**weight_power * np.abs(f.values) ** 2
    total = _trapz(g, integrand)
    if total == 0:
        return 0.0
    tail = g.x >= 0.75 * g.L
    return _trapz(g, np.where(tail, integrand, 0.0)) / total


def check_tail(f: Field, weight_power: int = 2, tol: float = TAIL_TOLERANCE, strict=False) -> float:
    frac = tail_fraction(f, weight_power)
    if frac > tol:
        msg = f"tail carries {frac:.3e} of the x^{weight_power}-weighted mass (limit {tol:g})"
        if strict:
            raise GridTailError(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=2)
    return frac


def second_moment(f: Field) -> float:
    """``int x^2 |u|^2 dx``; warns when the tail pollutes the result."""
    check_tail(f, 2)
    g = f.grid
    return _trapz(g, g.x**2 * np.abs(f.values) ** 2)


def boundary_trace(f: Field) -> complex:
    return complex(f.values[0])


def chirped_gaussian(
    grid: Grid,
    amplitude: float = 1.0,
    chirp: float = 0.0,
    center: float = 0.0,
    width: float = 1.0,
) -> Field:
    """``A exp(-(x - x0)^2 / (2 w^2)) exp(i c x^2)`` on the grid.

    A positive chirp gives a positive virial ``Im int x u' conj(u)``.
    """
    return grid.sample(
        lambda x: amplitude
        * np.exp(-((x - center) ** 2) / (2 * width**2))
        * np.exp(1j * chirp * x**2)
    )


def write_field_csv(f: Field, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "re", "im"])
        for x, u in zip(f.grid.x, f.values):
            writer.writerow([repr(float(x)), repr(float(u.real)), repr(float(u.imag))])


def read_field_csv(path) -> Field:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) < MIN_NODES + 1:
        raise ValueError(f"{path}: too few rows for a field")
    x = np.array([float(r["x"]) for r in rows])
    u = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    N = len(rows) - 1
    grid = Grid(float(x[-1]), N)
    if x[0] != 0 or not np.allclose(x, grid.x, rtol=0, atol=1e-9 * grid.L):
        raise ValueError(f"{path}: nodes are not a uniform grid starting at 0")
    return Field(u, grid)
