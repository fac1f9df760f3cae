"""Picard iteration on one slab, the constants engine, and the global marcher.

The smallness machinery turns one number q (the size of the shifted data)
and one radius R0 into a certified slab length and a norm bound for the
fixed point.  The marcher chains slabs: each new slab restarts from the
previous terminal slice, whose size is again controlled by q < gamma*R0, so
the certified step length never collapses and the march reaches any finite
horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .characteristics import ShiftedNormReport, shifted_norm_bound
from .core import (
    BroadwellError,
    DataError,
    Field4,
    ModelParams,
    NormReport,
    NumericsError,
    PreconditionError,
    ProblemData,
    RectDomain,
    SlabGrid,
    TimeSlab,
    TOL_COMPAT_TABLE,
    check_compatibility,
    norm_report,
    space_table,
)
from .operators import QuadratureSpec, apply_T, apply_T_sigma

__all__ = [
    "HypothesesError",
    "NonConvergenceError",
    "MarchError",
    "TheoremConstants",
    "HypothesisCheck",
    "HypothesisVerdict",
    "compute_constants",
    "check_hypotheses",
    "transport_field",
    "SlabSolution",
    "picard_solve",
    "MarchRecord",
    "MarchState",
    "global_march",
]

_SLAB_LEN_TOL = 1e-12


class HypothesesError(BroadwellError):
    """Smallness hypotheses failed; carries the verdict for diagnostics."""

    def __init__(self, verdict: "HypothesisVerdict"):
        self.verdict = verdict
        failed = ", ".join(c.name for c in verdict.checks if not c.passed)
        super().__init__(f"hypotheses failed ({verdict.mode} mode): {failed}")


class NonConvergenceError(BroadwellError):
    """Picard iteration did not reach tol_fix; carries the ratio history."""

    def __init__(self, iterations: int, final_delta: float, ratios: tuple[float, ...]):
        self.iterations = iterations
        self.final_delta = final_delta
        self.ratios = ratios
        super().__init__(
            f"no convergence after {iterations} iterations (last update {final_delta:.3e})")


class MarchError(BroadwellError):
    """Global march failed at a slab; carries the slab index and diagnostics."""

    def __init__(self, n: int, reason: str, detail: object = None):
        self.n = n
        self.reason = reason
        self.detail = detail
        super().__init__(f"march failed at slab {n}: {reason}")


# ---------------------------------------------------------------------------
# constants engine


def growth_coeff_plain(c: float, S: float, slab_len: float) -> float:
    """Quadratic growth coefficient of the plain operator's C^1 bound."""
    return c * S * (8.0 + 4.0 / c + (8.0 + 8.0 * c) * slab_len)


@dataclass(frozen=True)
class TheoremConstants:
    """Every closed-form constant the smallness hypotheses are phrased in.

    mu/lam/delta/gamma depend only on c; q is the measured size of the
    shifted data over the slab, p and p_sigma the quadratic growth
    coefficients of the two operators, f_r0 the data-size threshold and g_q
    the certified slab length for the measured q (inf when q == 0).
    """

    c: float
    S: float
    sigma: float
    R0: float
    slab_length: float
    mu: float
    lam: float
    delta: float
    gamma: float
    p: float
    p_sigma: float
    q: float
    q_sigma: float
    f_r0: float
    g_q: float
    r0_cap: float
    raw_data_max: float
    p_sigma_exceeds_p: bool
    shifted_report: ShiftedNormReport = field(repr=False)

    def g_of(self, q: float) -> float:
        """Certified slab length for a hypothetical data size q."""
        if q <= 0.0:
            return math.inf
        inner = 1.0 / (4.0 * q * (1.0 + self.delta * self.sigma * self.R0)
                       * (self.sigma + self.c * self.S)) - self.mu
        return inner / (self.lam * self.sigma * self.R0)

    def ppp_value(self, step: float) -> float:
        """Data size consistent with an uncapped step of the given length."""
        return self.mu * self.f_r0 / (self.mu + self.lam * self.sigma * self.R0 * step)

    def as_dict(self) -> dict:
        return {
            "c": self.c, "S": self.S, "sigma": self.sigma, "R0": self.R0,
            "slab_length": self.slab_length,
            "mu": self.mu, "lambda": self.lam, "delta": self.delta,
            "gamma": self.gamma, "p": self.p, "p_sigma": self.p_sigma,
            "q": self.q, "q_sigma": self.q_sigma, "f_R0": self.f_r0,
            "g_q": None if math.isinf(self.g_q) else self.g_q,
            "R0_cap": self.r0_cap, "raw_data_max": self.raw_data_max,
            "p_sigma_exceeds_p": self.p_sigma_exceeds_p,
        }


def compute_constants(params: ModelParams, slab: TimeSlab, data: ProblemData,
                      R0: float, n_norm: int = 33) -> TheoremConstants:
    """Evaluate all theorem constants for one slab and data set.

    Requires slab length <= 1 (the constant derivations assume it), R0 > 0
    and sigma set on params.
    """
    if slab.length > 1.0 + _SLAB_LEN_TOL:
        raise PreconditionError(
            f"constants assume slab length <= 1, got {slab.length}")
    if not (R0 > 0.0):
        raise PreconditionError(f"R0 must be positive, got {R0}")
    if params.sigma is None or params.sigma <= 0.0:
        raise PreconditionError("constants need a positive sigma on ModelParams")
    c, S, sigma = params.c, params.S, params.sigma
    dt = slab.length
    mu = 8.0 + 4.0 / c + 8.0 * c
    lam = 16.0 + 16.0 * c
    delta = 4.0 / c + 8.0 + 4.0 * c
    gamma = 1.0 + c + 1.0 / c
    snb = shifted_norm_bound(data, params, slab, n=n_norm)
    q = snb.q
    q_sigma = q * (1.0 + delta * sigma * R0)
    p = growth_coeff_plain(c, S, dt)
    p_sigma = (mu + lam * sigma * R0 * dt) * (sigma + c * S)
    f_r0 = 1.0 / (4.0 * mu * (1.0 + delta * sigma * R0) * (sigma + c * S))
    if q <= 0.0:
        g_q = math.inf
    else:
        g_q = (1.0 / (lam * sigma * R0)) * (
            1.0 / (4.0 * q * (1.0 + delta * sigma * R0) * (sigma + c * S)) - mu)
    r0_cap = (-1.0 + math.sqrt(1.0 + delta * sigma / (mu * (sigma + c * S) * gamma))) \
        / (2.0 * delta * sigma)
    return TheoremConstants(
        c=c, S=S, sigma=sigma, R0=R0, slab_length=dt,
        mu=mu, lam=lam, delta=delta, gamma=gamma,
        p=p, p_sigma=p_sigma, q=q, q_sigma=q_sigma,
        f_r0=f_r0, g_q=g_q, r0_cap=r0_cap,
        raw_data_max=snb.raw_max, p_sigma_exceeds_p=p_sigma > p,
        shifted_report=snb,
    )


@dataclass(frozen=True)
class HypothesisCheck:
    """One inequality: margin = bound/actual - 1 (+inf for a zero actual)."""

    name: str
    passed: bool
    margin: float
    detail: str


@dataclass(frozen=True)
class HypothesisVerdict:
    mode: str
    passed: bool
    checks: tuple[HypothesisCheck, ...]
    p_sigma_q_sigma: float
    r_interval: tuple[float, float] | None
    r_interval_nonempty: bool
    solution_norm_bound: float
    r0_cap: float

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "passed": self.passed,
            "checks": [
                {"name": ck.name, "passed": ck.passed,
                 "margin": None if math.isinf(ck.margin) else ck.margin,
                 "detail": ck.detail}
                for ck in self.checks
            ],
            "p_sigma_q_sigma": self.p_sigma_q_sigma,
            "r_interval": list(self.r_interval) if self.r_interval else None,
            "r_interval_nonempty": self.r_interval_nonempty,
            "solution_norm_bound": self.solution_norm_bound,
            "R0_cap": self.r0_cap,
        }


def _margin(bound: float, actual: float) -> float:
    if actual <= 0.0:
        return math.inf
    return bound / actual - 1.0


def check_hypotheses(consts: TheoremConstants, mode: str = "bounded-slab") -> HypothesisVerdict:
    """Verdict on the smallness hypotheses, with per-condition margins.

    ``bounded-slab`` checks the data-size and slab-length inequalities (both
    non-strict).  ``global`` additionally requires the strict data bound, the
    closed-form cap on R0, and the raw data norms to sit inside the R0 ball.
    Failures are reported, never raised.
    """
    if mode not in ("bounded-slab", "global"):
        raise PreconditionError(f"unknown hypothesis mode {mode!r}")
    checks: list[HypothesisCheck] = []
    q, f = consts.q, consts.f_r0
    checks.append(HypothesisCheck(
        "data_size", q <= f, _margin(f, q),
        f"q={q:.6e} vs f(R0)={f:.6e}"))
    len_bound = min(1.0, consts.g_q)
    checks.append(HypothesisCheck(
        "slab_length", consts.slab_length <= len_bound + _SLAB_LEN_TOL,
        _margin(len_bound, consts.slab_length),
        f"length={consts.slab_length:.6e} vs min(1, g(q))={len_bound:.6e}"))
    if mode == "global":
        checks.append(HypothesisCheck(
            "data_size_strict", q < f, _margin(f, q),
            f"q={q:.6e} must be < f(R0)={f:.6e}"))
        checks.append(HypothesisCheck(
            "r0_cap", consts.R0 < consts.r0_cap, _margin(consts.r0_cap, consts.R0),
            f"R0={consts.R0:.6e} vs cap={consts.r0_cap:.6e}"))
        checks.append(HypothesisCheck(
            "raw_data_in_ball", consts.raw_data_max <= consts.R0,
            _margin(consts.R0, consts.raw_data_max),
            f"max raw data norm={consts.raw_data_max:.6e} vs R0={consts.R0:.6e}"))

    pq = consts.p_sigma * consts.q_sigma
    if pq <= 0.25:
        root = math.sqrt(max(0.0, 1.0 - 4.0 * pq))
        r_lo = (1.0 - root) / (2.0 * consts.p_sigma)
        r_hi_raw = (1.0 + root) / (2.0 * consts.p_sigma)
        r_hi = min(consts.R0, r_hi_raw)
        interval = (r_lo, r_hi)
        nonempty = r_lo <= r_hi
        sol_bound = min(consts.R0, r_hi_raw)
    else:
        interval = None
        nonempty = False
        sol_bound = consts.R0
    return HypothesisVerdict(
        mode=mode, passed=all(ck.passed for ck in checks), checks=tuple(checks),
        p_sigma_q_sigma=pq, r_interval=interval, r_interval_nonempty=nonempty,
        solution_norm_bound=sol_bound, r0_cap=consts.r0_cap)


# ---------------------------------------------------------------------------
# one-slab Picard iteration


def transport_field(params: ModelParams, slab: TimeSlab, domain: RectDomain,
                    data: ProblemData, grid: SlabGrid,
                    quad: QuadratureSpec | None = None, workers: int = 1) -> Field4:
    """Data advected along characteristics with collisions switched off.

    One plain operator application to the zero field; it already satisfies
    the initial and boundary conditions, which makes it the default Picard
    starting point.
    """
    return apply_T(params, slab, domain, data, Field4.zeros(grid), quad, workers)


@dataclass(frozen=True)
class SlabSolution:
    """Converged fixed point on one slab plus iteration diagnostics."""

    field: Field4
    iterations: int
    final_delta: float
    contraction_estimates: tuple[float, ...]
    norm: NormReport


def _clamped_physical(values: np.ndarray, grid: SlabGrid, tol_pos: float) -> Field4:
    worst = float(np.min(values))
    if worst < -tol_pos:
        raise NumericsError(
            f"solution has negative values: min {worst:.3e} < -{tol_pos:.3e}")
    return Field4(grid, np.maximum(values, 0.0), physical=True)


def picard_solve(params: ModelParams, slab: TimeSlab, domain: RectDomain,
                 data: ProblemData, grid: SlabGrid, *, op: str = "plain",
                 guess: Field4 | None = None, tol_fix: float | None = None,
                 max_iter: int = 200, quad: QuadratureSpec | None = None,
                 R0: float | None = None, unsafe: bool = False,
                 workers: int = 1) -> SlabSolution:
    """Iterate the slab operator from a guess until the update is below tol_fix.

    Unless ``unsafe`` is set, the bounded-slab hypotheses (which need R0) and
    the data compatibility conditions are verified first; the guarantees of
    the construction are conditional on them.  ``op`` selects the plain
    operator (cheaper) or the relaxed one (certifies positivity along the
    way; requires sigma > 2cS).
    """
    if op not in ("plain", "relaxed"):
        raise PreconditionError(f"op must be 'plain' or 'relaxed', got {op!r}")
    if grid.slab != slab or grid.domain != domain:
        raise PreconditionError("grid does not match the requested slab/domain")
    q_size = None
    if not unsafe:
        if R0 is None:
            raise PreconditionError("picard_solve needs R0 to check hypotheses "
                                    "(pass unsafe=True to skip)")
        consts = compute_constants(params, slab, data, R0)
        verdict = check_hypotheses(consts, "bounded-slab")
        if not verdict.passed:
            raise HypothesesError(verdict)
        q_size = consts.q
        violations = check_compatibility(data)
        if violations:
            raise DataError(f"incompatible initial/boundary data: {violations}")
    if tol_fix is None:
        if q_size is None:
            q_size = shifted_norm_bound(data, params, slab).q
        tol_fix = 1e-10 * (1.0 + q_size)
    if q_size is None:
        q_size = shifted_norm_bound(data, params, slab).q

    step = apply_T if op == "plain" else apply_T_sigma
    M = guess if guess is not None else step(params, slab, domain, data,
                                             Field4.zeros(grid), quad, workers)
    if M.grid != grid:
        raise PreconditionError("guess grid does not match the solve grid")

    ratios: list[float] = []
    prev_delta = None
    final_delta = math.inf
    for it in range(1, max_iter + 1):
        new = step(params, slab, domain, data, M, quad, workers)
        delta = float(np.max(np.abs(new.values - M.values)))
        if not math.isfinite(delta):
            raise NumericsError("Picard iterate became non-finite")
        if prev_delta is not None and prev_delta > 0.0:
            ratios.append(delta / prev_delta)
        prev_delta = delta
        M = new
        if delta <= tol_fix:
            final_delta = delta
            break
    else:
        raise NonConvergenceError(max_iter, prev_delta, tuple(ratios))

    tol_pos = 1e-12 * (1.0 + q_size)
    fld = _clamped_physical(M.values, grid, tol_pos)
    return SlabSolution(field=fld, iterations=it, final_delta=final_delta,
                        contraction_estimates=tuple(ratios),
                        norm=norm_report(fld, params.c))


# ---------------------------------------------------------------------------
# global time marching


@dataclass(frozen=True)
class MarchRecord:
    """One line of march progress; serializes to the JSON-lines log."""

    n: int
    s_start: float
    s_end: float
    step: float
    capped: bool
    q: float
    g_q: float
    iterations: int
    final_delta: float
    n_script: float
    ppp_gap: float | None

    def as_dict(self) -> dict:
        return {
            "n": self.n, "s_start": self.s_start, "s_end": self.s_end,
            "step": self.step, "capped": self.capped, "q": self.q,
            "g_q": None if math.isinf(self.g_q) else self.g_q,
            "unbounded_step": math.isinf(self.g_q),
            "iterations": self.iterations, "final_delta": self.final_delta,
            "n_script": self.n_script, "ppp_gap": self.ppp_gap,
        }


@dataclass
class MarchState:
    """Slab-by-slab march history and (optionally) the solutions themselves."""

    records: list[MarchRecord]
    s_values: list[float]
    solutions: list[SlabSolution] | None
    step_lower_bound: float
    gamma_r0: float

    @property
    def n_slabs(self) -> int:
        return len(self.records)

    @property
    def reached(self) -> float:
        return self.s_values[-1]

    def solution(self, n: int) -> SlabSolution:
        if self.solutions is None:
            raise PreconditionError("solutions were not kept in memory")
        return self.solutions[n]


def _restart_data(data: ProblemData, grid: SlabGrid, terminal: np.ndarray,
                  new_tau: float) -> ProblemData:
    initial = tuple(
        space_table(grid.xs, grid.ys, terminal[i], {"kind": "table", "source": "restart"})
        for i in range(4)
    )
    return ProblemData(domain=data.domain, tau=new_tau, initial=initial,
                       inflow=data.inflow, validate=False)


def global_march(params: ModelParams, domain: RectDomain, data: ProblemData,
                 R0: float, T_end: float, *, grid_shape: tuple[int, int, int] = (17, 17, 17),
                 op: str = "plain", tol_fix: float | None = None, max_iter: int = 200,
                 quad: QuadratureSpec | None = None, workers: int = 1,
                 keep_solutions: bool = True, sink=None) -> MarchState:
    """March slab by slab from data.tau to T_end.

    Each slab takes the certified step min(g(q), 1, remaining horizon) and
    restarts from the previous terminal slice; restart compatibility, the
    q < gamma*R0 recursion bound and the per-slab norm bound are verified as
    the march goes.  ``sink(n, solution, record)``, when given, persists each
    slab so only the terminal slice stays in memory.
    """
    if params.sigma is None:
        params = params.with_default_sigma()
    if T_end <= data.tau:
        raise PreconditionError(f"horizon {T_end} does not exceed start {data.tau}")

    tau0 = data.tau
    trial0 = TimeSlab(tau0, tau0 + min(1.0, T_end - tau0))
    consts0 = compute_constants(params, trial0, data, R0)
    verdict0 = check_hypotheses(consts0, "global")
    if not verdict0.passed:
        raise HypothesesError(verdict0)
    gamma_r0 = consts0.gamma * R0
    g_floor = consts0.g_of(gamma_r0)
    step_lower_bound = min(1.0, g_floor) if g_floor > 0 else 0.0

    records: list[MarchRecord] = []
    solutions: list[SlabSolution] | None = [] if keep_solutions else None
    s_values = [tau0]
    data_n = data
    s = tau0
    n = 0
    max_slabs = int(math.ceil((T_end - tau0) / max(step_lower_bound, 1e-6))) + 8
    while s < T_end - _SLAB_LEN_TOL:
        if n >= max_slabs:
            raise MarchError(n, f"exceeded the expected slab budget {max_slabs}")
        cap = min(1.0, T_end - s)
        trial = TimeSlab(s, s + cap)
        consts = compute_constants(params, trial, data_n, R0,
                                   n_norm=max(grid_shape[1], grid_shape[2]))
        if not consts.g_q > 0.0:
            raise MarchError(n, f"certified step collapsed (g={consts.g_q:.3e}, "
                                f"q={consts.q:.3e})", consts.as_dict())
        step = min(consts.g_q, cap)
        capped = consts.g_q > step
        slab = TimeSlab(s, s + step)
        if abs(step - cap) > _SLAB_LEN_TOL:
            consts = compute_constants(params, slab, data_n, R0,
                                       n_norm=max(grid_shape[1], grid_shape[2]))
        verdict = check_hypotheses(consts, "bounded-slab")
        if not verdict.passed:
            raise MarchError(n, "slab hypotheses failed", verdict.as_dict())
        if not consts.q < gamma_r0:
            raise MarchError(n, f"data size q={consts.q:.6e} reached gamma*R0="
                                f"{gamma_r0:.6e}", consts.as_dict())

        grid = SlabGrid(slab, domain, *grid_shape)
        try:
            sol = picard_solve(params, slab, domain, data_n, grid, op=op,
                               tol_fix=tol_fix, max_iter=max_iter, quad=quad,
                               unsafe=True, workers=workers)
        except (NonConvergenceError, NumericsError) as exc:
            raise MarchError(n, f"slab solve failed: {exc}") from exc
        n_script = sol.norm.n_script
        if n_script > R0 * (1.0 + 1e-9):
            raise MarchError(n, f"solution norm {n_script:.6e} exceeds R0={R0:.6e}")

        ppp_gap = None if capped else abs(consts.q - consts.ppp_value(step))
        rec = MarchRecord(n=n, s_start=s, s_end=s + step, step=step, capped=capped,
                          q=consts.q, g_q=consts.g_q, iterations=sol.iterations,
                          final_delta=sol.final_delta, n_script=n_script,
                          ppp_gap=ppp_gap)
        records.append(rec)
        if sink is not None:
            sink(n, sol, rec)
        if solutions is not None:
            solutions.append(sol)

        terminal = sol.field.values[:, -1]
        s = s + step
        s_values.append(s)
        if s < T_end - _SLAB_LEN_TOL:
            data_n = _restart_data(data_n, grid, terminal, s)
            violations = check_compatibility(data_n, TOL_COMPAT_TABLE)
            if violations:
                raise MarchError(n + 1, f"restart data incompatible: {violations}")
        n += 1

    return MarchState(records=records, s_values=s_values, solutions=solutions,
                      step_lower_bound=step_lower_bound, gamma_r0=gamma_r0)
