"""Domain, grid, field and problem-data types shared by the solver stack.

The model tracks four particle densities on a rectangle.  Components 1 and 4
move along x with speeds +c and -c, components 2 and 3 along y with speeds
+c and -c.  Everything here is plain numpy; all containers are immutable
after construction and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "BroadwellError",
    "DomainError",
    "GridSizeError",
    "DataError",
    "ConfigError",
    "PreconditionError",
    "NumericsError",
    "ModelParams",
    "RectDomain",
    "TimeSlab",
    "SlabGrid",
    "Field4",
    "SpaceData",
    "EdgeData",
    "space_constant",
    "space_zero",
    "space_bump",
    "space_trig",
    "space_affine",
    "space_table",
    "edge_constant",
    "edge_zero",
    "edge_trig",
    "edge_affine",
    "edge_table",
    "ProblemData",
    "EdgeViolation",
    "evaluate_data",
    "check_compatibility",
    "NormReport",
    "norm_report",
    "TOL_COMPAT_CLOSED",
    "TOL_COMPAT_TABLE",
]

# Default edge-compatibility tolerances: closed-form presets are exact,
# tabulated data carry interpolation noise.
TOL_COMPAT_CLOSED = 1e-9
TOL_COMPAT_TABLE = 1e-6

_REL_TOL = 1e-9
_DATA_SELECTORS = (
    "initial1",
    "initial2",
    "initial3",
    "initial4",
    "inflow1",
    "inflow2",
    "inflow3",
    "inflow4",
)


class BroadwellError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(BroadwellError, ValueError):
    """A coordinate fell outside the domain of the requested datum."""


class GridSizeError(BroadwellError, ValueError):
    """A grid is too small for the requested stencil operation."""


class DataError(BroadwellError, ValueError):
    """Initial/boundary data violate non-negativity or boundedness."""


class ConfigError(BroadwellError, ValueError):
    """Invalid run configuration or quadrature settings."""


class PreconditionError(BroadwellError, ValueError):
    """A documented operation precondition was violated."""


class NumericsError(BroadwellError, ArithmeticError):
    """The computation produced values inconsistent with its guarantees."""


# ---------------------------------------------------------------------------
# parameters, domain, grid


@dataclass(frozen=True)
class ModelParams:
    """Physical constants: particle speed c, cross-section S, relaxation sigma.

    ``sigma`` may be None for runs that only use the plain integral operator.
    The relaxed operator requires sigma > 2*c*S strictly.
    """

    c: float
    S: float
    sigma: float | None = None

    def __post_init__(self) -> None:
        if not (self.c > 0.0):
            raise ConfigError(f"particle speed must be positive, got c={self.c}")
        if not (self.S > 0.0):
            raise ConfigError(f"cross-section must be positive, got S={self.S}")
        if self.sigma is not None and not (self.sigma >= 0.0):
            raise ConfigError(f"relaxation constant must be >= 0, got {self.sigma}")

    @property
    def sigma_threshold(self) -> float:
        return 2.0 * self.c * self.S

    def require_relaxation(self) -> float:
        """Return sigma, checking the strict positivity threshold."""
        if self.sigma is None or self.sigma <= self.sigma_threshold:
            raise PreconditionError(
                f"relaxed operator needs sigma > 2*c*S = {self.sigma_threshold}, "
                f"got sigma={self.sigma}"
            )
        return self.sigma

    def with_default_sigma(self, factor: float = 1.05) -> "ModelParams":
        """Copy with sigma set just above the positivity threshold."""
        return ModelParams(self.c, self.S, factor * self.sigma_threshold)


@dataclass(frozen=True)
class RectDomain:
    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self) -> None:
        if not (self.a1 < self.b1 and self.a2 < self.b2):
            raise ConfigError(f"degenerate rectangle {self!r}")

    @property
    def span_x(self) -> float:
        return self.b1 - self.a1

    @property
    def span_y(self) -> float:
        return self.b2 - self.a2

    def contains(self, x: float, y: float, tol: float | None = None) -> bool:
        tx = (tol if tol is not None else _REL_TOL * (1.0 + self.span_x))
        ty = (tol if tol is not None else _REL_TOL * (1.0 + self.span_y))
        return (self.a1 - tx <= x <= self.b1 + tx) and (self.a2 - ty <= y <= self.b2 + ty)


@dataclass(frozen=True)
class TimeSlab:
    tau: float
    tau_prime: float

    def __post_init__(self) -> None:
        if not (self.tau < self.tau_prime):
            raise ConfigError(f"empty time slab [{self.tau}, {self.tau_prime}]")

    @property
    def length(self) -> float:
        return self.tau_prime - self.tau


@dataclass(frozen=True)
class SlabGrid:
    """Uniform lattice over one closed space-time slab.

    First/last points coincide with the slab and rectangle bounds exactly.
    """

    slab: TimeSlab
    domain: RectDomain
    nt: int
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if min(self.nt, self.nx, self.ny) < 2:
            raise ConfigError(f"need >= 2 points per axis, got {self.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.nx, self.ny)

    @property
    def ht(self) -> float:
        return self.slab.length / (self.nt - 1)

    @property
    def hx(self) -> float:
        return self.domain.span_x / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.domain.span_y / (self.ny - 1)

    @cached_property
    def ts(self) -> np.ndarray:
        return np.linspace(self.slab.tau, self.slab.tau_prime, self.nt)

    @cached_property
    def xs(self) -> np.ndarray:
        return np.linspace(self.domain.a1, self.domain.b1, self.nx)

    @cached_property
    def ys(self) -> np.ndarray:
        return np.linspace(self.domain.a2, self.domain.b2, self.ny)

    def cfl_ok(self, c: float) -> bool:
        """Whether c*ht <= min(hx, hy); needed by the grid-locked oracle only."""
        return c * self.ht <= min(self.hx, self.hy) * (1.0 + 1e-12)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class Field4:
    """Four density lattices on a slab grid, stored as one (4, nt, nx, ny) array.

    ``physical`` marks a field certified non-negative (up to roundoff) by the
    relaxed operator or by a converged solve.
    """

    grid: SlabGrid
    values: np.ndarray
    physical: bool = False

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (4, *self.grid.shape):
            raise ConfigError(
                f"field shape {v.shape} does not match grid {(4, *self.grid.shape)}"
            )
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: SlabGrid) -> "Field4":
        return cls(grid, np.zeros((4, *grid.shape)))

    @classmethod
    def constant(cls, grid: SlabGrid, levels: float | Sequence[float]) -> "Field4":
        k = np.broadcast_to(np.asarray(levels, dtype=float).reshape(-1, 1, 1, 1), (4, *grid.shape))
        return cls(grid, np.array(k))

    def component(self, i: int) -> np.ndarray:
        """Density lattice for direction i in 1..4."""
        if i not in (1, 2, 3, 4):
            raise ConfigError(f"direction must be 1..4, got {i}")
        return self.values[i - 1]

    def sup_norm(self) -> float:
        """max_i sup |N_i| over the lattice."""
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def with_values(self, values: np.ndarray, physical: bool = False) -> "Field4":
        return Field4(self.grid, values, physical)


# ---------------------------------------------------------------------------
# data functions (initial plane and inflow faces)


def _as_float_array(a) -> np.ndarray:
    return np.asarray(a, dtype=float)


class SpaceData:
    """One initial-plane datum f(x, y): non-negative, continuous, C^1.

    Wraps either a closed-form preset or a tabulated lattice with bilinear
    interpolation.  ``spec`` round-trips through JSON run configs.
    """

    def __init__(self, fn: Callable, spec: dict, is_table: bool = False,
                 table_axes: tuple[np.ndarray, np.ndarray] | None = None):
        self._fn = fn
        self.spec = spec
        self.is_table = is_table
        self.table_axes = table_axes

    def __call__(self, x, y):
        return self._fn(_as_float_array(x), _as_float_array(y))

    def eval_grid(self, xs, ys) -> np.ndarray:
        """Evaluate on the Cartesian product, returning (len(xs), len(ys))."""
        xs = np.atleast_1d(_as_float_array(xs))
        ys = np.atleast_1d(_as_float_array(ys))
        return self._fn(xs[:, None], ys[None, :])


class EdgeData:
    """One inflow datum f(t, s) on a boundary face; s is the edge coordinate."""

    def __init__(self, fn: Callable, spec: dict, is_table: bool = False,
                 table_axes: tuple[np.ndarray, np.ndarray] | None = None):
        self._fn = fn
        self.spec = spec
        self.is_table = is_table
        self.table_axes = table_axes

    def __call__(self, t, s):
        return self._fn(_as_float_array(t), _as_float_array(s))

    def eval_grid(self, ts, ss) -> np.ndarray:
        ts = np.atleast_1d(_as_float_array(ts))
        ss = np.atleast_1d(_as_float_array(ss))
        return self._fn(ts[:, None], ss[None, :])


def _bump1d(u: np.ndarray) -> np.ndarray:
    # smooth compactly supported profile on (-1, 1), peak value 1 at u=0
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    denom = np.where(inside, 1.0 - u * u, 1.0)
    with np.errstate(under="ignore"):
        vals = np.exp(1.0 - 1.0 / denom)
    return np.where(inside, vals, 0.0)


def space_constant(value: float) -> SpaceData:
    v = float(value)
    return SpaceData(lambda x, y: np.broadcast_to(v, np.broadcast_shapes(x.shape, y.shape)).copy(),
                     {"kind": "constant", "value": v})


def space_zero() -> SpaceData:
    d = space_constant(0.0)
    d.spec = {"kind": "zero"}
    return d


def space_bump(amplitude: float, center: tuple[float, float],
               width: tuple[float, float]) -> SpaceData:
    """Compactly supported smooth bump; identically zero outside the widths."""
    a = float(amplitude)
    x0, y0 = float(center[0]), float(center[1])
    wx, wy = float(width[0]), float(width[1])
    if a < 0 or wx <= 0 or wy <= 0:
        raise DataError("bump needs amplitude >= 0 and positive widths")
    spec = {"kind": "bump", "amplitude": a, "center": [x0, y0], "width": [wx, wy]}
    return SpaceData(lambda x, y: a * _bump1d((x - x0) / wx) * _bump1d((y - y0) / wy), spec)


def space_trig(base: float, amplitude: float, freq: tuple[float, float],
               phase: tuple[float, float] = (0.0, 0.0)) -> SpaceData:
    """base + amplitude*sin(fx*x+px)*sin(fy*y+py); needs base >= |amplitude|."""
    b, a = float(base), float(amplitude)
    fx, fy = float(freq[0]), float(freq[1])
    px, py = float(phase[0]), float(phase[1])
    if b < abs(a):
        raise DataError(f"trig preset dips negative: base={b} < |amplitude|={abs(a)}")
    spec = {"kind": "trig", "base": b, "amplitude": a, "freq": [fx, fy], "phase": [px, py]}
    return SpaceData(lambda x, y: b + a * np.sin(fx * x + px) * np.sin(fy * y + py), spec)


def space_affine(const: float, slope_x: float, slope_y: float) -> SpaceData:
    k0, kx, ky = float(const), float(slope_x), float(slope_y)
    spec = {"kind": "affine", "const": k0, "slope_x": kx, "slope_y": ky}
    return SpaceData(lambda x, y: k0 + kx * x + ky * y + 0.0 * (x + y), spec)


def space_table(xs: np.ndarray, ys: np.ndarray, values: np.ndarray,
                spec: dict | None = None) -> SpaceData:
    """Tabulated lattice with bilinear interpolation; exact at the nodes."""
    xs = _as_float_array(xs)
    ys = _as_float_array(ys)
    values = _as_float_array(values)
    if values.shape != (xs.size, ys.size):
        raise DataError(f"table shape {values.shape} != ({xs.size}, {ys.size})")
    interp = RegularGridInterpolator((xs, ys), values, method="linear",
                                     bounds_error=True)

    def fn(x, y):
        xb, yb = np.broadcast_arrays(x, y)
        pts = np.stack([xb.ravel(), yb.ravel()], axis=-1)
        return interp(pts).reshape(xb.shape)

    return SpaceData(fn, spec or {"kind": "table"}, is_table=True, table_axes=(xs, ys))


def edge_constant(value: float) -> EdgeData:
    v = float(value)
    return EdgeData(lambda t, s: np.broadcast_to(v, np.broadcast_shapes(t.shape, s.shape)).copy(),
                    {"kind": "constant", "value": v})


def edge_zero() -> EdgeData:
    d = edge_constant(0.0)
    d.spec = {"kind": "zero"}
    return d


def edge_trig(base: float, amplitude: float, freq: tuple[float, float],
              phase: tuple[float, float] = (0.0, 0.0)) -> EdgeData:
    b, a = float(base), float(amplitude)
    ft, fs = float(freq[0]), float(freq[1])
    pt, ps = float(phase[0]), float(phase[1])
    if b < abs(a):
        raise DataError(f"trig preset dips negative: base={b} < |amplitude|={abs(a)}")
    spec = {"kind": "trig", "base": b, "amplitude": a, "freq": [ft, fs], "phase": [pt, ps]}
    return EdgeData(lambda t, s: b + a * np.sin(ft * t + pt) * np.sin(fs * s + ps), spec)


def edge_affine(const: float, slope_t: float, slope_s: float) -> EdgeData:
    k0, kt, ks = float(const), float(slope_t), float(slope_s)
    spec = {"kind": "affine", "const": k0, "slope_t": kt, "slope_s": ks}
    return EdgeData(lambda t, s: k0 + kt * t + ks * s + 0.0 * (t + s), spec)


def edge_table(ts: np.ndarray, ss: np.ndarray, values: np.ndarray,
               spec: dict | None = None) -> EdgeData:
    ts = _as_float_array(ts)
    ss = _as_float_array(ss)
    values = _as_float_array(values)
    if values.shape != (ts.size, ss.size):
        raise DataError(f"table shape {values.shape} != ({ts.size}, {ss.size})")
    interp = RegularGridInterpolator((ts, ss), values, method="linear",
                                     bounds_error=True)

    def fn(t, s):
        tb, sb = np.broadcast_arrays(t, s)
        pts = np.stack([tb.ravel(), sb.ravel()], axis=-1)
        return interp(pts).reshape(tb.shape)

    return EdgeData(fn, spec or {"kind": "table"}, is_table=True, table_axes=(ts, ss))


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class ProblemData:
    """Initial plane data plus the four inflow-face data.

    ``inflow[0]`` feeds direction 1 on the face x=a1, ``inflow[1]`` direction 2
    on y=a2, ``inflow[2]`` direction 3 on y=b2, ``inflow[3]`` direction 4 on
    x=b1.  Edge data take (t, y) for directions 1 and 4, (t, x) for 2 and 3.
    """

    domain: RectDomain
    tau: float
    initial: tuple[SpaceData, SpaceData, SpaceData, SpaceData]
    inflow: tuple[EdgeData, EdgeData, EdgeData, EdgeData]
    validate: bool = True

    def __post_init__(self) -> None:
        if len(self.initial) != 4 or len(self.inflow) != 4:
            raise DataError("need exactly four initial and four inflow data")
        if self.validate:
            self._sample_check()

    @property
    def has_table(self) -> bool:
        return any(d.is_table for d in self.initial) or any(d.is_table for d in self.inflow)

    @property
    def default_tol_compat(self) -> float:
        return TOL_COMPAT_TABLE if self.has_table else TOL_COMPAT_CLOSED

    def edge_coords(self, i: int, n: int = 33) -> np.ndarray:
        """Sample coordinates along the inflow face of direction i."""
        d = self.domain
        if i in (1, 4):
            return np.linspace(d.a2, d.b2, n)
        return np.linspace(d.a1, d.b1, n)

    def _sample_check(self, n: int = 33) -> None:
        # non-negativity and finiteness on sample points; tables are checked on
        # their own lattices where interpolation is exact
        d = self.domain
        xs = np.linspace(d.a1, d.b1, n)
        ys = np.linspace(d.a2, d.b2, n)
        for idx, dat in enumerate(self.initial, start=1):
            ax = dat.table_axes if dat.is_table else (xs, ys)
            v = dat.eval_grid(*ax)
            if not np.all(np.isfinite(v)):
                raise DataError(f"initial{idx} has non-finite values")
            if np.min(v) < -1e-12 * (1.0 + np.max(np.abs(v))):
                raise DataError(f"initial{idx} is negative (min {np.min(v):.3e})")
        ts = np.linspace(self.tau, self.tau + 1.0, n)
        for idx, dat in enumerate(self.inflow, start=1):
            ax = dat.table_axes if dat.is_table else (ts, self.edge_coords(idx, n))
            v = dat.eval_grid(*ax)
            if not np.all(np.isfinite(v)):
                raise DataError(f"inflow{idx} has non-finite values")
            if np.min(v) < -1e-12 * (1.0 + np.max(np.abs(v))):
                raise DataError(f"inflow{idx} is negative (min {np.min(v):.3e})")


def evaluate_data(data: ProblemData, which: str, point: tuple) -> float:
    """Evaluate one datum at a point.

    ``which`` is one of initial1..initial4 (point = (x, y)) or
    inflow1..inflow4 (point = (t, s) with s the edge coordinate).
    Raises DomainError outside the selector's domain.
    """
    if which not in _DATA_SELECTORS:
        raise ConfigError(f"unknown data selector {which!r}")
    d = data.domain
    idx = int(which[-1])
    if which.startswith("initial"):
        x, y = float(point[0]), float(point[1])
        if not d.contains(x, y):
            raise DomainError(f"({x}, {y}) outside rectangle for {which}")
        return float(data.initial[idx - 1](x, y))
    t, s = float(point[0]), float(point[1])
    if t < data.tau - _REL_TOL * (1.0 + abs(data.tau)):
        raise DomainError(f"t={t} precedes the initial time {data.tau}")
    lo, hi = (d.a2, d.b2) if idx in (1, 4) else (d.a1, d.b1)
    if not (lo - _REL_TOL * (1 + hi - lo) <= s <= hi + _REL_TOL * (1 + hi - lo)):
        raise DomainError(f"edge coordinate {s} outside [{lo}, {hi}] for {which}")
    return float(data.inflow[idx - 1](t, s))


@dataclass(frozen=True)
class EdgeViolation:
    """One compatibility defect: the face, the worst gap, and where it occurs."""

    edge: str
    gap: float
    position: float


def check_compatibility(data: ProblemData, tol_compat: float | None = None,
                        samples: int = 129) -> list[EdgeViolation]:
    """Compare initial data against inflow data on the four faces at t=tau.

    Returns an empty list iff every face identity holds within tolerance at
    all sampled edge points.  Violations are data, not errors.
    """
    tol = data.default_tol_compat if tol_compat is None else float(tol_compat)
    d = data.domain
    ys = np.linspace(d.a2, d.b2, samples)
    xs = np.linspace(d.a1, d.b1, samples)
    tau = np.array([data.tau])
    cases = [
        ("x=a1", data.initial[0].eval_grid([d.a1], ys)[0],
         data.inflow[0].eval_grid(tau, ys)[0], ys),
        ("y=a2", data.initial[1].eval_grid(xs, [d.a2])[:, 0],
         data.inflow[1].eval_grid(tau, xs)[0], xs),
        ("y=b2", data.initial[2].eval_grid(xs, [d.b2])[:, 0],
         data.inflow[2].eval_grid(tau, xs)[0], xs),
        ("x=b1", data.initial[3].eval_grid([d.b1], ys)[0],
         data.inflow[3].eval_grid(tau, ys)[0], ys),
    ]
    out = []
    for name, init_vals, edge_vals, coords in cases:
        gaps = np.abs(init_vals - edge_vals)
        worst = int(np.argmax(gaps))
        if gaps[worst] > tol:
            out.append(EdgeViolation(name, float(gaps[worst]), float(coords[worst])))
    return out


# ---------------------------------------------------------------------------
# lattice norms


@dataclass(frozen=True)
class NormReport:
    """Per-component sup norms and finite-difference partial-derivative sups.

    ``n1[i]`` is the max of the four statistics for component i and
    ``n_script`` the max over components; these are the quantities every
    smallness hypothesis is phrased in.
    """

    sup: np.ndarray
    dt: np.ndarray
    dx: np.ndarray
    dy: np.ndarray

    @property
    def n1(self) -> np.ndarray:
        return np.max(np.stack([self.sup, self.dt, self.dx, self.dy]), axis=0)

    @property
    def n_script(self) -> float:
        return float(np.max(self.n1))


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    # endpoint sample positions of the difference stencil at each lattice site:
    # central in the interior, one-sided 2-point at the faces
    lo = np.arange(n) - 1
    hi = np.arange(n) + 1
    lo[0], hi[0] = 0, 1
    lo[-1], hi[-1] = n - 2, n - 1
    return lo, hi


def _plane_values(grid: SlabGrid, c: float) -> tuple[np.ndarray, ...]:
    # signed distances to the four planes where solution derivatives may jump;
    # planes 1/4 live in (t, x), planes 2/3 in (t, y)
    ts = grid.ts - grid.slab.tau
    p1 = (grid.xs[None, :] - grid.domain.a1) - c * ts[:, None]
    p4 = (grid.domain.b1 - grid.xs[None, :]) - c * ts[:, None]
    p2 = (grid.ys[None, :] - grid.domain.a2) - c * ts[:, None]
    p3 = (grid.domain.b2 - grid.ys[None, :]) - c * ts[:, None]
    return p1, p2, p3, p4


def _stencil_masks(grid: SlabGrid, c: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean (nt, nx, ny) masks of dt/dx/dy stencils that avoid the planes."""
    p1, p2, p3, p4 = _plane_values(grid, c)
    tlo, thi = _pair_indices(grid.nt)
    xlo, xhi = _pair_indices(grid.nx)
    ylo, yhi = _pair_indices(grid.ny)

    def no_cross(p, lo, hi, axis):
        a = np.take(p, lo, axis=axis)
        b = np.take(p, hi, axis=axis)
        return a * b >= 0.0

    # d/dt stencils move through time: every plane can be crossed
    okt_x = no_cross(p1, tlo, thi, 0) & no_cross(p4, tlo, thi, 0)   # (nt, nx)
    okt_y = no_cross(p2, tlo, thi, 0) & no_cross(p3, tlo, thi, 0)   # (nt, ny)
    mask_t = okt_x[:, :, None] & okt_y[:, None, :]
    # d/dx stencils move along x: only the x-planes vary
    okx = no_cross(p1, xlo, xhi, 1) & no_cross(p4, xlo, xhi, 1)     # (nt, nx)
    mask_x = np.broadcast_to(okx[:, :, None], grid.shape)
    oky = no_cross(p2, ylo, yhi, 1) & no_cross(p3, ylo, yhi, 1)     # (nt, ny)
    mask_y = np.broadcast_to(oky[:, None, :], grid.shape)
    return mask_t, mask_x, mask_y


def norm_report(field: Field4, c: float | None = None) -> NormReport:
    """Sup norm and finite-difference partial sups for each component.

    Central differences in the interior, one-sided at the faces.  When ``c``
    is given, stencils straddling any of the four characteristic planes are
    excluded from the derivative sups (the sup norm still sees every point).
    """
    grid = field.grid
    if min(grid.shape) < 3:
        raise GridSizeError(f"norm_report needs >= 3 points per axis, got {grid.shape}")
    sup = np.max(np.abs(field.values), axis=(1, 2, 3))
    if c is None:
        mask_t = mask_x = mask_y = np.ones(grid.shape, dtype=bool)
    else:
        mask_t, mask_x, mask_y = _stencil_masks(grid, c)

    def masked_sup(deriv: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return np.max(np.where(mask[None], np.abs(deriv), 0.0), axis=(1, 2, 3))

    gt = np.gradient(field.values, grid.ht, axis=1)
    gx = np.gradient(field.values, grid.hx, axis=2)
    gy = np.gradient(field.values, grid.hy, axis=3)
    return NormReport(sup=sup, dt=masked_sup(gt, mask_t),
                      dx=masked_sup(gx, mask_x), dy=masked_sup(gy, mask_y))
