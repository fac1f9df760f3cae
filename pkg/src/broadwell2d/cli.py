"""Batch front end: run configs, subcommands, and the on-disk output layout.

Subcommands: ``check`` (hypothesis verdict), ``solve`` (slab or march run),
``verify`` (independent verification of a finished run), ``bench`` (operator
timings across resolutions).  All physical quantities in configs are plain
numbers in consistent units.  Outputs are deterministic: same config and
seed give byte-identical files regardless of worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    BroadwellError,
    ConfigError,
    EdgeData,
    Field4,
    ModelParams,
    ProblemData,
    RectDomain,
    SlabGrid,
    SpaceData,
    TimeSlab,
    check_compatibility,
    edge_affine,
    edge_constant,
    edge_table,
    edge_trig,
    edge_zero,
    norm_report,
    space_affine,
    space_bump,
    space_constant,
    space_table,
    space_trig,
    space_zero,
)
from .operators import QuadratureSpec, apply_T, apply_T_sigma
from .solver import (
    HypothesesError,
    MarchError,
    NonConvergenceError,
    check_hypotheses,
    compute_constants,
    global_march,
    picard_solve,
)
from .verify import (
    VerificationReport,
    conservation_balance,
    measure_constants,
    pde_residual,
    upwind_oracle,
)

__all__ = ["RunConfig", "load_config", "main",
           "write_field_csv", "read_field_csv",
           "cmd_check", "cmd_solve", "cmd_verify", "cmd_bench"]

_FLOAT_FMT = "%.17g"

# relative verification thresholds; overridable per config (verify section)
DEFAULT_VERIFY = {
    "trials": 20,
    "residual_rel": 0.02,   # vs the solution's own derivative scale
    "balance_rel": 1e-3,    # vs the integrated density scale
    "oracle_rel": 0.5,      # vs the solution sup (first-order oracle is crude)
}


# ---------------------------------------------------------------------------
# run configuration


def _build_space(spec: dict, base_dir: Path) -> SpaceData:
    kind = spec.get("kind")
    if kind == "constant":
        return space_constant(spec["value"])
    if kind == "zero":
        return space_zero()
    if kind == "bump":
        return space_bump(spec["amplitude"], spec["center"], spec["width"])
    if kind == "trig":
        return space_trig(spec["base"], spec["amplitude"], spec["freq"],
                          tuple(spec.get("phase", (0.0, 0.0))))
    if kind == "affine":
        return space_affine(spec.get("const", 0.0), spec.get("slope_x", 0.0),
                            spec.get("slope_y", 0.0))
    if kind == "table":
        xs, ys, vals = _read_table_csv(base_dir / spec["path"], ("x", "y"))
        return space_table(xs, ys, vals, spec)
    raise ConfigError(f"unknown initial-datum kind {kind!r}")


def _build_edge(spec: dict, base_dir: Path) -> EdgeData:
    kind = spec.get("kind")
    if kind == "constant":
        return edge_constant(spec["value"])
    if kind == "zero":
        return edge_zero()
    if kind == "trig":
        return edge_trig(spec["base"], spec["amplitude"], spec["freq"],
                         tuple(spec.get("phase", (0.0, 0.0))))
    if kind == "affine":
        return edge_affine(spec.get("const", 0.0), spec.get("slope_t", 0.0),
                           spec.get("slope_s", 0.0))
    if kind == "table":
        ts, ss, vals = _read_table_csv(base_dir / spec["path"], ("t", "s"))
        return edge_table(ts, ss, vals, spec)
    raise ConfigError(f"unknown inflow-datum kind {kind!r}")


def _read_table_csv(path: Path, cols: tuple[str, str]):
    """Lattice table from a CSV with header (c0, c1, value)."""
    if not path.exists():
        raise ConfigError(f"table file not found: {path}")
    raw = np.genfromtxt(path, delimiter=",", names=True)
    try:
        a = np.asarray(raw[cols[0]], dtype=float)
        b = np.asarray(raw[cols[1]], dtype=float)
        v = np.asarray(raw["value"], dtype=float)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"table {path} needs columns {cols[0]},{cols[1]},value") from exc
    axa = np.unique(a)
    axb = np.unique(b)
    if axa.size * axb.size != v.size:
        raise ConfigError(f"table {path} is not a full lattice")
    grid = np.full((axa.size, axb.size), np.nan)
    ia = np.searchsorted(axa, a)
    ib = np.searchsorted(axb, b)
    grid[ia, ib] = v
    if np.any(np.isnan(grid)):
        raise ConfigError(f"table {path} has duplicate or missing lattice points")
    return axa, axb, grid


@dataclass
class RunConfig:
    """Validated run configuration; see README for the JSON schema."""

    params: ModelParams
    domain: RectDomain
    grid_shape: tuple[int, int, int]
    mode: str                      # "slab" | "march"
    slab: TimeSlab | None
    horizon: float | None
    R0: float
    data: ProblemData
    operator: str                  # "plain" | "relaxed"
    tol_fix: float | None
    tol_compat: float | None
    max_iter: int
    quad: QuadratureSpec
    verify: dict
    output: Path
    seed: int
    workers: int
    raw: dict

    @property
    def run_slab(self) -> TimeSlab:
        if self.mode == "slab":
            return self.slab
        return TimeSlab(self.data.tau, self.data.tau + min(1.0, self.horizon - self.data.tau))

    def make_grid(self, slab: TimeSlab) -> SlabGrid:
        return SlabGrid(slab, self.domain, *self.grid_shape)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.parent
    try:
        p = raw["params"]
        params = ModelParams(p["c"], p["S"], p.get("sigma"))
        d = raw["domain"]
        domain = RectDomain(d["a1"], d["b1"], d["a2"], d["b2"])
        g = raw["grid"]
        grid_shape = (int(g["nt"]), int(g["nx"]), int(g["ny"]))
        mode = raw.get("mode", "slab")
        if mode not in ("slab", "march"):
            raise ConfigError(f"mode must be 'slab' or 'march', got {mode!r}")
        slab = None
        horizon = None
        if mode == "slab":
            s = raw["slab"]
            slab = TimeSlab(s["tau"], s["tau_prime"])
            tau = slab.tau
        else:
            horizon = float(raw["horizon"])
            tau = float(raw.get("tau", 0.0))
        ds = raw["data"]
        initial = tuple(_build_space(s, base) for s in ds["initial"])
        inflow = tuple(_build_edge(s, base) for s in ds["inflow"])
        data = ProblemData(domain=domain, tau=tau, initial=initial, inflow=inflow)
        tols = raw.get("tolerances", {})
        quad_raw = raw.get("quadrature", {})
        quad = QuadratureSpec(quad_raw.get("rule", "trapezoid"), quad_raw.get("substep"))
        verify = dict(DEFAULT_VERIFY)
        verify.update(raw.get("verify", {}))
        cfg = RunConfig(
            params=params, domain=domain, grid_shape=grid_shape, mode=mode,
            slab=slab, horizon=horizon, R0=float(raw["R0"]), data=data,
            operator=raw.get("operator", "plain"),
            tol_fix=tols.get("tol_fix"), tol_compat=tols.get("tol_compat"),
            max_iter=int(tols.get("max_iter", 200)), quad=quad, verify=verify,
            output=Path(raw.get("output", "out")), seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)), raw=raw,
        )
    except KeyError as exc:
        raise ConfigError(f"config {path} is missing required key {exc}") from exc
    if cfg.operator not in ("plain", "relaxed"):
        raise ConfigError(f"operator must be 'plain' or 'relaxed', got {cfg.operator!r}")
    if min(cfg.grid_shape) < 3:
        raise ConfigError(f"grid needs >= 3 points per axis, got {cfg.grid_shape}")
    return cfg


# ---------------------------------------------------------------------------
# on-disk field format


def write_field_csv(field: Field4, outdir: str | Path) -> None:
    """One CSV per time slice: columns x,y,N1..N4; y varies across rows first."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    g = field.grid
    xs, ys = g.xs, g.ys
    for k in range(g.nt):
        rows = []
        for l in range(g.ny):
            for j in range(g.nx):
                vals = field.values[:, k, j, l]
                rows.append(",".join([_FLOAT_FMT % xs[j], _FLOAT_FMT % ys[l]]
                                     + [_FLOAT_FMT % v for v in vals]))
        text = "x,y,N1,N2,N3,N4\n" + "\n".join(rows) + "\n"
        (outdir / f"slice_{k}.csv").write_text(text)


def read_field_csv(indir: str | Path, grid: SlabGrid) -> Field4:
    """Rebuild a slab field from slice CSVs; raises ConfigError on mismatch."""
    indir = Path(indir)
    values = np.empty((4, *grid.shape))
    for k in range(grid.nt):
        p = indir / f"slice_{k}.csv"
        if not p.exists():
            raise ConfigError(f"missing slice file {p}")
        raw = np.loadtxt(p, delimiter=",", skiprows=1)
        if raw.ndim != 2 or raw.shape != (grid.nx * grid.ny, 6):
            raise ConfigError(
                f"slice {p} has shape {raw.shape}, expected {(grid.nx * grid.ny, 6)}")
        comp = raw[:, 2:].reshape(grid.ny, grid.nx, 4)
        values[:, k] = np.transpose(comp, (2, 1, 0))
    return Field4(grid, values)


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(cfg: RunConfig, json_out: bool = False, stream=None) -> int:
    """Evaluate the theorem constants and print the hypothesis verdict."""
    stream = stream or sys.stdout
    mode = "global" if cfg.mode == "march" else "bounded-slab"
    consts = compute_constants(cfg.params if cfg.params.sigma is not None
                               else cfg.params.with_default_sigma(),
                               cfg.run_slab, cfg.data, cfg.R0,
                               n_norm=max(cfg.grid_shape[1], cfg.grid_shape[2]))
    verdict = check_hypotheses(consts, mode)
    if json_out:
        stream.write(json.dumps({"constants": consts.as_dict(),
                                 "verdict": verdict.as_dict()},
                                indent=2, sort_keys=True) + "\n")
    else:
        stream.write(f"constants ({mode} mode):\n")
        for key, val in consts.as_dict().items():
            stream.write(f"  {key} = {val}\n")
        stream.write("checks:\n")
        for ck in verdict.checks:
            status = "pass" if ck.passed else "FAIL"
            margin = "inf" if math.isinf(ck.margin) else f"{ck.margin:+.3%}"
            stream.write(f"  [{status}] {ck.name}: margin {margin} ({ck.detail})\n")
        if verdict.r_interval is not None:
            lo, hi = verdict.r_interval
            empt = "" if verdict.r_interval_nonempty else " (empty)"
            stream.write(f"admissible R interval: [{lo:.6e}, {hi:.6e}]{empt}\n")
        else:
            stream.write("admissible R interval: none (p_sigma*q_sigma > 1/4)\n")
        stream.write(f"solution norm bound: {verdict.solution_norm_bound:.6e}\n")
        stream.write(f"R0 cap (global mode): {verdict.r0_cap:.6e}\n")
        stream.write("verdict: " + ("PASS" if verdict.passed else "FAIL") + "\n")
    return 0 if verdict.passed else 2


def _solve_slab(cfg: RunConfig, unsafe: bool, workers: int):
    slab = cfg.slab
    grid = cfg.make_grid(slab)
    return picard_solve(cfg.params, slab, cfg.domain, cfg.data, grid,
                        op=cfg.operator, tol_fix=cfg.tol_fix, max_iter=cfg.max_iter,
                        quad=cfg.quad, R0=cfg.R0, unsafe=unsafe, workers=workers)


def cmd_solve(cfg: RunConfig, unsafe: bool = False, workers: int | None = None,
              stream=None) -> int:
    """Run the configured solve and write slices, progress, and a summary."""
    stream = stream or sys.stdout
    workers = workers or cfg.workers
    out = cfg.output
    if not unsafe:
        rc = cmd_check(cfg, json_out=False, stream=_NullStream())
        if rc != 0:
            stream.write("hypotheses failed; rerun with --unsafe to force "
                         "(results will be uncertified)\n")
            return 2
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {
        "config": cfg.raw,
        "mode": cfg.mode,
        "certified": not unsafe,
        "slabs": [],
    }
    try:
        if cfg.mode == "slab":
            sol = _solve_slab(cfg, unsafe, workers)
            write_field_csv(sol.field, out / "slab_0")
            rec = {"n": 0, "s_start": cfg.slab.tau, "s_end": cfg.slab.tau_prime,
                   "iterations": sol.iterations, "final_delta": sol.final_delta,
                   "n_script": sol.norm.n_script, "capped": False}
            summary["slabs"].append(rec)
            stream.write(json.dumps(rec, sort_keys=True) + "\n")
        else:
            jsonl = []

            def sink(n, sol, record):
                write_field_csv(sol.field, out / f"slab_{n}")
                line = json.dumps(record.as_dict(), sort_keys=True)
                jsonl.append(line)
                summary["slabs"].append(record.as_dict())
                stream.write(line + "\n")

            state = global_march(cfg.params, cfg.domain, cfg.data, cfg.R0,
                                 cfg.horizon, grid_shape=cfg.grid_shape,
                                 op=cfg.operator, tol_fix=cfg.tol_fix,
                                 max_iter=cfg.max_iter, quad=cfg.quad,
                                 workers=workers, keep_solutions=False, sink=sink)
            (out / "march.jsonl").write_text("\n".join(jsonl) + "\n")
            summary["reached"] = state.reached
            summary["step_lower_bound"] = state.step_lower_bound
            summary["gamma_R0"] = state.gamma_r0
            summary["capped_slabs"] = [r.n for r in state.records if r.capped]
    except HypothesesError as exc:
        stream.write(f"{exc}\n")
        return 2
    except (NonConvergenceError, MarchError) as exc:
        detail = getattr(exc, "detail", None)
        stream.write(f"{exc}\n")
        if detail:
            stream.write(json.dumps(detail, sort_keys=True) + "\n")
        return 3
    if summary["slabs"]:
        summary["max_n_script"] = max(r["n_script"] for r in summary["slabs"]
                                      if "n_script" in r)
        summary["total_iterations"] = sum(r["iterations"] for r in summary["slabs"])
    _dump_json(summary, out / "summary.json")
    stream.write(f"wrote {len(summary['slabs'])} slab(s) to {out}\n")
    return 0


def cmd_verify(cfg: RunConfig, solution_path: str | Path | None = None,
               json_out: bool = False, seed: int | None = None, stream=None,
               workers: int | None = None) -> int:
    """Verify a finished run: residuals, balances, oracle gap, constants."""
    stream = stream or sys.stdout
    workers = workers or cfg.workers
    out = Path(solution_path) if solution_path else cfg.output
    summary_path = out / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json under {out}")
    summary = json.loads(summary_path.read_text())
    slab_recs = summary.get("slabs", [])
    if not slab_recs:
        raise ConfigError(f"summary at {out} lists no slabs")

    residual_sup = np.zeros(4)
    mass_gap = mom_x_gap = mom_y_gap = 0.0
    scale_deriv = 0.0
    scale_density = 0.0
    sup_all = 0.0
    fields = []
    for rec in slab_recs:
        slab = TimeSlab(rec["s_start"], rec["s_end"])
        grid = cfg.make_grid(slab)
        fld = read_field_csv(out / f"slab_{rec['n']}", grid)
        fields.append((slab, fld))
        _, sup = pde_residual(cfg.params, fld)
        residual_sup = np.maximum(residual_sup, sup)
        bal = conservation_balance(cfg.params, fld)
        mass_gap = max(mass_gap, bal.mass_gap)
        mom_x_gap = max(mom_x_gap, bal.momentum_x_gap)
        mom_y_gap = max(mom_y_gap, bal.momentum_y_gap)
        nr = norm_report(fld, cfg.params.c)
        scale_deriv = max(scale_deriv, float(np.max([nr.dt, nr.dx, nr.dy])))
        sup_all = max(sup_all, float(np.max(nr.sup)))
        area = cfg.domain.span_x * cfg.domain.span_y
        scale_density = max(scale_density, 4.0 * float(np.max(nr.sup)) * area)

    oracle_gap = None
    slab0, fld0 = fields[0]
    grid0 = fld0.grid
    if grid0.cfl_ok(cfg.params.c):
        oracle = upwind_oracle(cfg.params, slab0, cfg.domain, cfg.data, grid0)
        oracle_gap = float(np.max(np.abs(oracle.values - fld0.values)))

    seed = cfg.seed if seed is None else seed
    measured = measure_constants(cfg.params, slab0, cfg.domain, cfg.data,
                                 trials=int(cfg.verify["trials"]),
                                 grid=grid0, seed=seed, quad=cfg.quad,
                                 workers=workers)

    vr = cfg.verify
    residual_max = vr.get("residual_max",
                          vr["residual_rel"] * (scale_deriv + 1e-12) + 1e-12)
    balance_max = vr.get("balance_max",
                         vr["balance_rel"] * (scale_density + 1e-12) + 1e-14)
    oracle_max = vr.get("oracle_max", vr["oracle_rel"] * (sup_all + 1e-12))
    checks = {
        "residual": bool(np.max(residual_sup) <= residual_max),
        "mass_balance": mass_gap <= balance_max,
        "momentum_x_balance": mom_x_gap <= balance_max,
        "momentum_y_balance": mom_y_gap <= balance_max,
        "contraction": measured.contraction_ok,
        "norm_growth": measured.growth_ok,
    }
    if oracle_gap is not None:
        checks["oracle_gap"] = oracle_gap <= oracle_max

    report = VerificationReport(
        residual_sup=tuple(float(r) for r in residual_sup),
        mass_balance=mass_gap,
        momentum_x=mom_x_gap,
        momentum_y=mom_y_gap,
        oracle_gap=oracle_gap,
        measured_contraction=measured.max_contraction_ratio,
        contraction_bound=measured.contraction_bound * (1.0 + measured.eps_quad),
        measured_norm_growth=measured.max_growth_ratio,
        norm_growth_bound=measured.growth_p * (1.0 + measured.eps_quad),
        thresholds={"residual_max": residual_max, "balance_max": balance_max,
                    "oracle_max": oracle_max},
        checks=checks,
    )
    doc = report.as_dict()
    if json_out:
        stream.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        for key, val in doc.items():
            stream.write(f"{key}: {val}\n")
    passed = all(checks.values())
    stream.write("verification: " + ("PASS" if passed else "FAIL") + "\n")
    return 0 if passed else 2


def cmd_bench(cfg: RunConfig, json_out: bool = False, stream=None,
              workers: int | None = None) -> int:
    """Time one application of each operator across three resolutions."""
    stream = stream or sys.stdout
    workers = workers or cfg.workers
    params = cfg.params if cfg.params.sigma is not None \
        else cfg.params.with_default_sigma()
    slab = cfg.run_slab
    rows = []
    nt, nx, ny = cfg.grid_shape
    for scale, label in ((0.5, "coarse"), (1.0, "config"), (2.0, "fine")):
        shape = tuple(max(3, int((n - 1) * scale) + 1) for n in (nt, nx, ny))
        grid = SlabGrid(slab, cfg.domain, *shape)
        M = Field4.constant(grid, 0.1)
        timings = {}
        for name, fn in (("apply_T", apply_T), ("apply_T_sigma", apply_T_sigma)):
            t0 = time.perf_counter()
            fn(params, slab, cfg.domain, cfg.data, M, cfg.quad, workers)
            timings[name] = time.perf_counter() - t0
        rows.append({"resolution": label, "shape": list(shape), **timings})
    if json_out:
        stream.write(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    else:
        for row in rows:
            stream.write(f"{row['resolution']:>7} {tuple(row['shape'])}: "
                         f"apply_T {row['apply_T']:.3f}s, "
                         f"apply_T_sigma {row['apply_T_sigma']:.3f}s\n")
    return 0


class _NullStream:
    def write(self, _s: str) -> None:
        pass


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="broadwell2d",
                                 description="Four-velocity planar gas solver")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, desc in (("check", "evaluate the smallness hypotheses"),
                       ("solve", "solve one slab or march to a horizon"),
                       ("verify", "verify a finished run"),
                       ("bench", "time one operator application")):
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker pool size (env BROADWELL_WORKERS)")
        sp.add_argument("--seed", type=int, default=None, help="seed override")
        sp.add_argument("--json", action="store_true", help="JSON output")
        if name == "solve":
            sp.add_argument("--unsafe", action="store_true",
                            help="run even if the hypotheses fail (uncertified)")
        if name == "verify":
            sp.add_argument("--solution", help="path to a finished run directory")
    return ap


def _resolve_workers(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("BROADWELL_WORKERS")
    return int(env) if env else None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output = Path(args.out)
        if args.seed is not None:
            cfg.seed = args.seed
        workers = _resolve_workers(args.workers)
        if args.command == "check":
            return cmd_check(cfg, json_out=args.json)
        if args.command == "solve":
            return cmd_solve(cfg, unsafe=args.unsafe, workers=workers)
        if args.command == "verify":
            return cmd_verify(cfg, solution_path=args.solution, json_out=args.json,
                              seed=args.seed, workers=workers)
        if args.command == "bench":
            return cmd_bench(cfg, json_out=args.json, workers=workers)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BroadwellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
