"""Backward characteristic tracing and shifted initial/boundary data.

Each velocity component is transported along a straight space-time line.
Traced backward from an interior point, the line first meets either the
initial plane t=tau (region A) or the component's inflow face (region B);
the "foot" is that first hit.  The shifted data read the matching datum
directly at an interior point by composing it with the characteristic shift.

Direction 4 moves with velocity -c along x, so its shifted initial datum is
evaluated at x + c*(t - tau); the region-A indicator x + c*(t-tau) <= b1 and
the trace formulas are consistent with that choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DomainError,
    ModelParams,
    PreconditionError,
    ProblemData,
    RectDomain,
    TimeSlab,
)

__all__ = [
    "CharFoot",
    "DIRECTIONS",
    "direction_axis",
    "direction_velocity_sign",
    "trace",
    "shifted_eval",
    "ShiftedNormReport",
    "shifted_norm_bound",
    "data_norm_1",
]

# direction -> (axis, velocity sign): 1 moves +c along x, 2 +c along y,
# 3 -c along y, 4 -c along x
DIRECTIONS = {1: ("x", +1), 2: ("y", +1), 3: ("y", -1), 4: ("x", -1)}


def direction_axis(i: int) -> str:
    return DIRECTIONS[i][0]


def direction_velocity_sign(i: int) -> int:
    return DIRECTIONS[i][1]


@dataclass(frozen=True)
class CharFoot:
    """Where the backward characteristic of direction i starts integrating."""

    direction: int
    region: str                      # "A" (initial plane) or "B" (inflow face)
    foot_time: float
    foot_point: tuple[float, float]  # (x, y) at foot_time


def _check_in_slab(slab: TimeSlab, domain: RectDomain, t: float, x: float, y: float) -> None:
    tol_t = 1e-9 * (1.0 + slab.length)
    if not (slab.tau - tol_t <= t <= slab.tau_prime + tol_t) or not domain.contains(x, y):
        raise PreconditionError(f"point (t={t}, x={x}, y={y}) outside the closed slab")


def trace(params: ModelParams, slab: TimeSlab, domain: RectDomain, i: int,
          point: tuple[float, float, float]) -> CharFoot:
    """Classify the backward characteristic of direction i through ``point``.

    Region A iff the characteristic reaches t=tau without leaving the
    rectangle; ties (foot exactly on the dividing plane) resolve to A, where
    compatibility makes both branch values agree.
    """
    if i not in DIRECTIONS:
        raise PreconditionError(f"direction must be 1..4, got {i}")
    t, x, y = (float(v) for v in point)
    _check_in_slab(slab, domain, t, x, y)
    c = params.c
    axis, vsign = DIRECTIONS[i]
    w = x if axis == "x" else y
    # distance travelled backward before hitting the component's inflow face
    if vsign > 0:
        dist = w - (domain.a1 if axis == "x" else domain.a2)
    else:
        dist = (domain.b1 if axis == "x" else domain.b2) - w
    back = c * (t - slab.tau)
    if dist >= back:  # tie-break: region A
        ft = slab.tau
        w_foot = w - vsign * back
        region = "A"
    else:
        ft = t - dist / c
        w_foot = w - vsign * dist  # exactly the face coordinate
        region = "B"
    if axis == "x":
        return CharFoot(i, region, ft, (w_foot, y))
    return CharFoot(i, region, ft, (x, w_foot))


_SHIFTED_SELECTORS = (
    "initial1", "initial2", "initial3", "initial4",
    "inflow1", "inflow2", "inflow3", "inflow4",
)


def shifted_eval(data: ProblemData, params: ModelParams, slab: TimeSlab,
                 domain: RectDomain, which: str,
                 point: tuple[float, float, float]) -> float:
    """Evaluate one shifted datum at an interior space-time point.

    ``initial{i}`` composes the initial datum with the backward shift to
    t=tau; ``inflow{i}`` composes the inflow datum with the travel time from
    the face.  Raises DomainError if the shift lands outside the source
    domain (the caller classified the region wrongly).
    """
    if which not in _SHIFTED_SELECTORS:
        raise PreconditionError(f"unknown shifted selector {which!r}")
    t, x, y = (float(v) for v in point)
    c = params.c
    i = int(which[-1])
    axis, vsign = DIRECTIONS[i]
    if which.startswith("initial"):
        back = c * (t - slab.tau)
        if axis == "x":
            src = (x - vsign * back, y)
        else:
            src = (x, y - vsign * back)
        if not domain.contains(*src):
            raise DomainError(
                f"shift of {which} lands at {src}, outside the rectangle")
        return float(data.initial[i - 1](*src))
    if vsign > 0:
        dist = (x - domain.a1) if axis == "x" else (y - domain.a2)
    else:
        dist = (domain.b1 - x) if axis == "x" else (domain.b2 - y)
    t_src = t - dist / c
    if t_src < slab.tau - 1e-9 * (1.0 + slab.length):
        raise DomainError(
            f"shift of {which} lands at t={t_src}, before the initial time")
    s = y if axis == "x" else x
    return float(data.inflow[i - 1](t_src, s))


# ---------------------------------------------------------------------------
# norms of the shifted data


def data_norm_1(values: np.ndarray, h0: float, h1: float) -> tuple[float, float, float]:
    """(sup, d/axis0 sup, d/axis1 sup) of a 2-d lattice by finite differences."""
    sup = float(np.max(np.abs(values)))
    d0 = float(np.max(np.abs(np.gradient(values, h0, axis=0))))
    d1 = float(np.max(np.abs(np.gradient(values, h1, axis=1))))
    return sup, d0, d1


@dataclass(frozen=True)
class ShiftedNormReport:
    """Finite-difference C^1 norms of the eight shifted data over one slab.

    ``shifted[name]`` bounds the shifted datum; ``raw[name]`` the datum
    itself.  ``q`` is the max over the shifted entries, the data-size number
    every smallness condition uses.  Transporting the initial data multiplies
    the time partial by c, and reading a face datum inside the domain
    multiplies its time partial by 1/c; both stay below the combined factor
    ``gamma`` = 1 + c + 1/c.
    """

    shifted: dict[str, float]
    raw: dict[str, float]
    initial_factor_ok: bool
    boundary_factor_ok: bool
    gamma_ok: bool

    @property
    def q(self) -> float:
        return max(self.shifted.values())

    @property
    def raw_max(self) -> float:
        return max(self.raw.values())


def _sample_axes_space(dat, domain: RectDomain, n: int) -> tuple[np.ndarray, np.ndarray]:
    if dat.is_table and dat.table_axes is not None:
        return dat.table_axes
    return (np.linspace(domain.a1, domain.b1, n), np.linspace(domain.a2, domain.b2, n))


def _sample_axes_edge(dat, slab: TimeSlab, lo: float, hi: float,
                      n: int) -> tuple[np.ndarray, np.ndarray]:
    if dat.is_table and dat.table_axes is not None:
        ts, ss = dat.table_axes
        keep = (ts >= slab.tau - 1e-12) & (ts <= slab.tau_prime + 1e-12)
        ts = ts[keep] if np.count_nonzero(keep) >= 2 else np.linspace(slab.tau, slab.tau_prime, n)
        return ts, ss
    return (np.linspace(slab.tau, slab.tau_prime, n), np.linspace(lo, hi, n))


def shifted_norm_bound(data: ProblemData, params: ModelParams, slab: TimeSlab,
                       n: int = 33) -> ShiftedNormReport:
    """Estimate the C^1 norm of every shifted datum over the given slab.

    The sup and spatial partials of a shifted datum equal those of its source
    over the reached part of the source domain; the time partial follows from
    the shift (factor c for initial data, 1/c for face data).  Sups are taken
    over the full source lattice, which contains the reached set, so the
    estimates are conservative.
    """
    c = params.c
    dom = data.domain
    shifted: dict[str, float] = {}
    raw: dict[str, float] = {}
    init_ok = True
    bdry_ok = True
    for i, dat in enumerate(data.initial, start=1):
        xs, ys = _sample_axes_space(dat, dom, n)
        vals = dat.eval_grid(xs, ys)
        sup, dxs, dys = data_norm_1(vals, xs[1] - xs[0], ys[1] - ys[0])
        raw_n1 = max(sup, dxs, dys)
        adv = dxs if direction_axis(i) == "x" else dys
        shf = max(sup, c * adv, dxs, dys)
        raw[f"initial{i}"] = raw_n1
        shifted[f"initial{i}"] = shf
        init_ok &= shf <= (1.0 + c) * raw_n1 * (1.0 + 1e-12)
    for i, dat in enumerate(data.inflow, start=1):
        lo, hi = (dom.a2, dom.b2) if i in (1, 4) else (dom.a1, dom.b1)
        ts, ss = _sample_axes_edge(dat, slab, lo, hi, n)
        vals = dat.eval_grid(ts, ss)
        sup, dts, dss = data_norm_1(vals, ts[1] - ts[0], ss[1] - ss[0])
        raw_n1 = max(sup, dts, dss)
        shf = max(sup, dts, dts / c, dss)
        raw[f"inflow{i}"] = raw_n1
        shifted[f"inflow{i}"] = shf
        bdry_ok &= shf <= (1.0 + 1.0 / c) * raw_n1 * (1.0 + 1e-12)
    gamma = 1.0 + c + 1.0 / c
    gamma_ok = all(
        shifted[k] <= gamma * raw[k] * (1.0 + 1e-12) for k in shifted
    )
    return ShiftedNormReport(shifted=shifted, raw=raw, initial_factor_ok=init_ok,
                             boundary_factor_ok=bdry_ok, gamma_ok=gamma_ok)
