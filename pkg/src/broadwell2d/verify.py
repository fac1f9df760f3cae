"""Independent verification: residuals, balances, an upwind oracle, constants.

Everything here deliberately avoids the characteristic-quadrature code path.
The residual differentiates the solution directly, the balances integrate
densities and fluxes with the trapezoid rule, and the oracle is a
grid-locked first-order upwind scheme, so agreement with the solver is
evidence rather than tautology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .characteristics import DIRECTIONS, shifted_norm_bound
from .core import (
    ConfigError,
    Field4,
    GridSizeError,
    ModelParams,
    ProblemData,
    RectDomain,
    SlabGrid,
    TimeSlab,
    norm_report,
)
from .core import _pair_indices, _plane_values  # shared stencil bookkeeping
from .operators import OMEGA, QuadratureSpec, apply_T
from .solver import growth_coeff_plain

__all__ = [
    "pde_residual",
    "BalanceReport",
    "conservation_balance",
    "upwind_oracle",
    "random_trig_field",
    "MeasuredConstants",
    "measure_constants",
    "VerificationReport",
]

EPS_QUAD = 0.05  # quadrature slack allowed on top of the analytic constants


@dataclass(frozen=True)
class VerificationReport:
    """Aggregated verification quantities for one finished run.

    All entries are finite and non-negative; ``checks`` maps each property to
    whether it met its threshold.  ``oracle_gap`` is None when the grid
    violates the oracle's CFL bound.
    """

    residual_sup: tuple[float, float, float, float]
    mass_balance: float
    momentum_x: float
    momentum_y: float
    oracle_gap: float | None
    measured_contraction: float
    contraction_bound: float
    measured_norm_growth: float
    norm_growth_bound: float
    thresholds: dict
    checks: dict

    def as_dict(self) -> dict:
        return {
            "residual_sup": list(self.residual_sup),
            "mass_balance": self.mass_balance,
            "momentum_x": self.momentum_x,
            "momentum_y": self.momentum_y,
            "oracle_gap": self.oracle_gap,
            "measured_contraction": self.measured_contraction,
            "contraction_bound": self.contraction_bound,
            "measured_norm_growth": self.measured_norm_growth,
            "norm_growth_bound": self.norm_growth_bound,
            "thresholds": dict(self.thresholds),
            "checks": dict(self.checks),
        }


def _collision(values: np.ndarray, two_cS: float) -> np.ndarray:
    return two_cS * (values[1] * values[2] - values[0] * values[3])


# ---------------------------------------------------------------------------
# residual of the differential form


def pde_residual(params: ModelParams, solution: Field4) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise defect of each kinetic equation on the lattice.

    Central differences on interior points in time and in the component's own
    advection axis; stencils straddling one of the four characteristic planes
    are skipped (the solution's derivatives may jump there).  Returns the
    (4, nt, nx, ny) residual lattice with NaN at skipped points and the per
    component sup over the rest.
    """
    grid = solution.grid
    if min(grid.shape) < 3:
        raise GridSizeError(f"residual needs >= 3 points per axis, got {grid.shape}")
    c = params.c
    v = solution.values
    q = _collision(v, 2.0 * c * params.S)
    p1, p2, p3, p4 = _plane_values(grid, c)
    tlo, thi = _pair_indices(grid.nt)

    def no_cross(p, lo, hi, axis):
        return np.take(p, lo, axis=axis) * np.take(p, hi, axis=axis) >= 0.0

    okt_x = no_cross(p1, tlo, thi, 0) & no_cross(p4, tlo, thi, 0)
    okt_y = no_cross(p2, tlo, thi, 0) & no_cross(p3, tlo, thi, 0)
    res = np.full_like(v, np.nan)
    sup = np.zeros(4)
    interior_t = slice(1, grid.nt - 1)
    for i in (1, 2, 3, 4):
        axis, vsign = DIRECTIONS[i]
        comp = v[i - 1]
        dt = (comp[2:] - comp[:-2]) / (2.0 * grid.ht)  # (nt-2, nx, ny)
        if axis == "x":
            adv = (comp[:, 2:, :] - comp[:, :-2, :]) / (2.0 * grid.hx)
            planes = (p1, p4)
            xlo, xhi = _pair_indices(grid.nx)
            ok_adv = no_cross(planes[0], xlo, xhi, 1) & no_cross(planes[1], xlo, xhi, 1)
            mask = (okt_x[interior_t, 1:-1] & ok_adv[interior_t, 1:-1])[:, :, None] \
                & okt_y[interior_t, None, :]
            r = dt[:, 1:-1, :] + vsign * c * adv[interior_t] \
                - OMEGA[i] * q[interior_t, 1:-1, :]
            block = res[i - 1, interior_t, 1:-1, :]
            block[mask] = r[mask]
            res[i - 1, interior_t, 1:-1, :] = block
        else:
            adv = (comp[:, :, 2:] - comp[:, :, :-2]) / (2.0 * grid.hy)
            ylo, yhi = _pair_indices(grid.ny)
            ok_adv = no_cross(p2, ylo, yhi, 1) & no_cross(p3, ylo, yhi, 1)
            mask = okt_x[interior_t, :, None] \
                & (okt_y[interior_t, 1:-1] & ok_adv[interior_t, 1:-1])[:, None, :]
            r = dt[:, :, 1:-1] + vsign * c * adv[interior_t] \
                - OMEGA[i] * q[interior_t, :, 1:-1]
            block = res[i - 1, interior_t, :, 1:-1]
            block[mask] = r[mask]
            res[i - 1, interior_t, :, 1:-1] = block
        valid = np.abs(r)[mask]
        sup[i - 1] = float(valid.max()) if valid.size else 0.0
    return res, sup


# ---------------------------------------------------------------------------
# collision-invariant balances


@dataclass(frozen=True)
class BalanceReport:
    """Cumulative collision-invariant balance gaps over the slab.

    For each invariant (total density, and the two momentum components) the
    time series tracks integral(t) - integral(tau) + accumulated boundary
    outflux; it would vanish identically for the exact solution.
    """

    times: np.ndarray
    mass_series: np.ndarray
    momentum_x_series: np.ndarray
    momentum_y_series: np.ndarray

    @property
    def mass_gap(self) -> float:
        return float(np.max(np.abs(self.mass_series)))

    @property
    def momentum_x_gap(self) -> float:
        return float(np.max(np.abs(self.momentum_x_series)))

    @property
    def momentum_y_gap(self) -> float:
        return float(np.max(np.abs(self.momentum_y_series)))


def _trapz2(a: np.ndarray, hx: float, hy: float) -> np.ndarray:
    return np.trapezoid(np.trapezoid(a, dx=hy, axis=-1), dx=hx, axis=-1)


def _cumtrapz(series: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(series)
    out[1:] = np.cumsum(0.5 * dt * (series[1:] + series[:-1]))
    return out


def conservation_balance(params: ModelParams, solution: Field4) -> BalanceReport:
    """Mass and momentum balances of a slab field against its boundary fluxes.

    The collision term cancels in all three balances, so the gaps measure
    only discretization error: O(h^2) on solver output, O(h) on the oracle.
    """
    grid = solution.grid
    c = params.c
    v = solution.values
    hx, hy, ht = grid.hx, grid.hy, grid.ht

    densities = {
        "mass": v.sum(axis=0),
        "mom_x": c * (v[0] - v[3]),
        "mom_y": c * (v[1] - v[2]),
    }
    # net outflux through the boundary for each invariant
    flux_x = {"mass": c * (v[0] - v[3]), "mom_x": c * c * (v[0] + v[3]),
              "mom_y": np.zeros_like(v[0])}
    flux_y = {"mass": c * (v[1] - v[2]), "mom_y": c * c * (v[1] + v[2]),
              "mom_x": np.zeros_like(v[0])}

    series = {}
    for name in densities:
        total = _trapz2(densities[name], hx, hy)                      # (nt,)
        out_x = np.trapezoid(flux_x[name][:, -1, :] - flux_x[name][:, 0, :],
                             dx=hy, axis=-1)
        out_y = np.trapezoid(flux_y[name][:, :, -1] - flux_y[name][:, :, 0],
                             dx=hx, axis=-1)
        series[name] = (total - total[0]) + _cumtrapz(out_x + out_y, ht)
    return BalanceReport(times=grid.ts, mass_series=series["mass"],
                         momentum_x_series=series["mom_x"],
                         momentum_y_series=series["mom_y"])


# ---------------------------------------------------------------------------
# first-order upwind oracle


def upwind_oracle(params: ModelParams, slab: TimeSlab, domain: RectDomain,
                  data: ProblemData, grid: SlabGrid) -> Field4:
    """Explicit first-order upwind solution on the slab grid.

    Each component differences against its own upwind neighbour, the
    collision source is applied pointwise explicitly, and inflow faces are
    injected from the boundary data every step.  Requires c*ht <= min(hx, hy).
    """
    if grid.slab != slab or grid.domain != domain:
        raise ConfigError("oracle grid does not match the requested slab/domain")
    if not grid.cfl_ok(params.c):
        raise ConfigError(
            f"CFL violated: c*ht={params.c * grid.ht:.3e} > min(hx, hy)="
            f"{min(grid.hx, grid.hy):.3e}")
    c = params.c
    two_cS = 2.0 * c * params.S
    lam_x = c * grid.ht / grid.hx
    lam_y = c * grid.ht / grid.hy
    xs, ys, ts = grid.xs, grid.ys, grid.ts

    u = np.empty((4, *grid.shape))
    for i in range(4):
        u[i, 0] = data.initial[i].eval_grid(xs, ys)
    for k in range(grid.nt - 1):
        cur = u[:, k]
        q = _collision(cur, two_cS)
        nxt = u[:, k + 1]
        nxt[0] = cur[0] - lam_x * (cur[0] - np.roll(cur[0], 1, axis=0)) + grid.ht * q
        nxt[1] = cur[1] - lam_y * (cur[1] - np.roll(cur[1], 1, axis=1)) - grid.ht * q
        nxt[2] = cur[2] + lam_y * (np.roll(cur[2], -1, axis=1) - cur[2]) - grid.ht * q
        nxt[3] = cur[3] + lam_x * (np.roll(cur[3], -1, axis=0) - cur[3]) + grid.ht * q
        t_next = np.array([ts[k + 1]])
        nxt[0][0, :] = data.inflow[0].eval_grid(t_next, ys)[0]
        nxt[1][:, 0] = data.inflow[1].eval_grid(t_next, xs)[0]
        nxt[2][:, -1] = data.inflow[2].eval_grid(t_next, xs)[0]
        nxt[3][-1, :] = data.inflow[3].eval_grid(t_next, ys)[0]
    return Field4(grid, u)


# ---------------------------------------------------------------------------
# measured contraction and growth constants


def random_trig_field(grid: SlabGrid, rng: np.random.Generator,
                      target_norm: float, c_for_norm: float | None = None,
                      sign_indefinite: bool = True) -> Field4:
    """Smooth separable trig field scaled so its C^1 lattice norm is target_norm."""
    ts, xs, ys = grid.ts, grid.xs, grid.ys
    vals = np.empty((4, *grid.shape))
    for i in range(4):
        ft, fx, fy = rng.uniform(0.5, 4.0, size=3)
        pt, px, py = rng.uniform(0.0, 2.0 * np.pi, size=3)
        amp = rng.uniform(0.5, 1.0)
        base = 0.0 if sign_indefinite else amp * 1.5
        vals[i] = base + amp * (np.sin(ft * ts + pt)[:, None, None]
                                * np.sin(fx * xs + px)[None, :, None]
                                * np.sin(fy * ys + py)[None, None, :])
    f = Field4(grid, vals)
    measured = norm_report(f, c_for_norm).n_script
    if measured <= 0.0:
        return Field4(grid, np.full((4, *grid.shape), target_norm))
    return Field4(grid, vals * (target_norm / measured))


@dataclass(frozen=True)
class MeasuredConstants:
    """Observed operator statistics over random trials vs the analytic bounds."""

    trials: int
    contraction_bound: float          # 4cS(tau'-tau)
    max_contraction_ratio: float      # max ||TM-TN|| / ((||M||+||N||)||M-N||)
    growth_p: float                   # analytic quadratic coefficient
    growth_q: float                   # measured data size
    max_growth_ratio: float           # max (N(TM)-q)/N(M)^2
    eps_quad: float

    @property
    def contraction_ok(self) -> bool:
        return self.max_contraction_ratio <= self.contraction_bound * (1.0 + self.eps_quad)

    @property
    def growth_ok(self) -> bool:
        return self.max_growth_ratio <= self.growth_p * (1.0 + self.eps_quad)


def measure_constants(params: ModelParams, slab: TimeSlab, domain: RectDomain,
                      data: ProblemData, trials: int, *,
                      grid: SlabGrid | None = None, ball_radius: float = 0.5,
                      seed: int = 0, quad: QuadratureSpec | None = None,
                      workers: int = 1) -> MeasuredConstants:
    """Monte-Carlo check of the contraction and norm-growth inequalities.

    Draws random field pairs inside the C^1 ball of the given radius, applies
    the plain operator, and reports the worst observed ratios next to the
    analytic constants (equal pairs are skipped).
    """
    if trials < 1:
        raise ConfigError("need at least one trial")
    grid = grid or SlabGrid(slab, domain, 17, 17, 17)
    rng = np.random.default_rng(seed)
    c, S = params.c, params.S
    contraction_bound = 4.0 * c * S * slab.length
    p = growth_coeff_plain(c, S, slab.length)
    q_data = shifted_norm_bound(data, params, slab).q

    max_contract = 0.0
    max_growth = 0.0
    for _ in range(trials):
        m = random_trig_field(grid, rng, rng.uniform(0.2, 1.0) * ball_radius, params.c)
        n = random_trig_field(grid, rng, rng.uniform(0.2, 1.0) * ball_radius, params.c)
        tm = apply_T(params, slab, domain, data, m, quad, workers)
        tn = apply_T(params, slab, domain, data, n, quad, workers)
        diff = float(np.max(np.abs(m.values - n.values)))
        if diff > 0.0:
            ratio = float(np.max(np.abs(tm.values - tn.values))) \
                / ((m.sup_norm() + n.sup_norm()) * diff)
            max_contract = max(max_contract, ratio)
        nm = norm_report(m, params.c).n_script
        if nm > 0.0:
            gr = (norm_report(tm, params.c).n_script - q_data) / nm ** 2
            max_growth = max(max_growth, gr)
    return MeasuredConstants(trials=trials, contraction_bound=contraction_bound,
                             max_contraction_ratio=max_contract, growth_p=p,
                             growth_q=q_data, max_growth_ratio=max_growth,
                             eps_quad=EPS_QUAD)
