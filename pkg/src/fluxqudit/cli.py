"""Command-line runner: one stage per invocation, results written to an output directory.

Example::

    fluxqudit --config run.cfg --stage spectrum --out results/

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import capture, density, io, lzsm, reset, spectral
from .circuit import CircuitParams, PhysicalCircuit, from_physical
from .density import Trajectory
from .errors import NumericError, ValidationError

logger = logging.getLogger("fluxqudit")

STAGES = ("spectrum", "sweep-flux", "sweep-beta", "crossings", "capture", "reset", "aim", "design-speed")
DEVIATION_FLAG = 0.05

# defaults reproduce the single-stage scenarios of the reference device
DEFAULT_CIRCUIT = {"u0_k": 32.68, "beta_l": 1.28, "mass_invk": 955.0, "x_e": 0.5087}


@dataclass
class RunConfig:
    stage: str
    params: CircuitParams
    grid: spectral.Grid | None
    out: Path
    workers: int = 1
    view: io.ConfigView = field(default_factory=lambda: io.ConfigView({}))

    @classmethod
    def from_values(cls, values: dict, source=None, stage=None, out=None, workers=None):
        view = io.ConfigView(values, source)
        stage = stage or view.str("stage", "")
        if stage not in STAGES:
            raise io.ConfigError("stage", f"expected one of {', '.join(STAGES)}, got {stage!r}", source)
        out = Path(out or view.str("out", "results"))
        workers = int(workers if workers is not None else view.int("workers", 1))
        if workers < 1:
            raise io.ConfigError("workers", f"must be >= 1, got {workers}", source)
        return cls(stage=stage, params=_circuit(view), grid=_grid(view), out=out, workers=workers, view=view)


def _circuit(view: io.ConfigView) -> CircuitParams:
    x_e = view.float("circuit.x_e", DEFAULT_CIRCUIT["x_e"])
    try:
        if view.has("circuit.l_h"):
            pc = PhysicalCircuit(L=view.float("circuit.l_h"), C=view.float("circuit.c_f"), I_c=view.float("circuit.ic_a"))
            return from_physical(pc, x_e)
        return CircuitParams(
            U0=view.float("circuit.u0_k", DEFAULT_CIRCUIT["u0_k"]),
            beta_L=view.float("circuit.beta_l", DEFAULT_CIRCUIT["beta_l"]),
            M=view.float("circuit.mass_invk", DEFAULT_CIRCUIT["mass_invk"]),
            x_e=x_e,
        )
    except io.ConfigError:
        raise
    except ValidationError as exc:
        raise io.ConfigError("circuit", str(exc), view.source) from exc


def _grid(view: io.ConfigView):
    if not any(view.has(f"grid.{k}") for k in ("x_min", "x_max", "n_points")):
        return None
    d = spectral.DEFAULT_GRID
    try:
        return spectral.Grid(
            view.float("grid.x_min", d.x_min), view.float("grid.x_max", d.x_max), view.int("grid.n_points", d.n_points)
        )
    except ValidationError as exc:
        raise io.ConfigError("grid", str(exc), view.source) from exc


@dataclass
class StageResult:
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    documents: dict = field(default_factory=dict)  # file name -> JSON payload
    dumps: dict = field(default_factory=dict)  # file name -> (stamps, matrices)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)


def _spectrum_stage(cfg: RunConfig) -> StageResult:
    n = cfg.view.int("spectrum.n_levels", 9)
    spec = spectral.solve_spectrum(cfg.params, cfg.grid, n)
    rows = [
        [j + 1, spec.energies[j], str(spec.localization[j]), spec.mean_flux[j], spec.left_mass[j]]
        for j in range(spec.n_levels)
    ]
    res = StageResult()
    res.tables["spectrum.csv"] = (["level", "energy_K", "localization", "mean_flux", "left_mass"], rows)
    res.summary = {
        "localized_levels": len(spec.localized_levels()),
        "barrier_x": spec.barrier_x,
        "grid": [spec.grid.x_min, spec.grid.x_max, spec.grid.n_points],
    }
    res.checks = {"localized_count": len(spec.localized_levels())}
    return res


def _sweep_table(sweep: spectral.SpectrumSweep):
    n = sweep.energies.shape[1]
    header = [sweep.parameter] + [f"E{k}_K" for k in range(1, n + 1)] + [f"loc{k}" for k in range(1, n + 1)]
    rows = [[v, *e, *labels] for v, e, labels in zip(sweep.values, sweep.energies, sweep.localization_table())]
    return header, rows


def _sweep_flux_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    sweep = spectral.sweep_flux(
        cfg.params,
        (v.float("sweep.start", 0.4913), v.float("sweep.stop", 0.5087)),
        v.int("sweep.n_steps", 101),
        n_levels=v.int("sweep.n_levels", 9),
        grid=cfg.grid,
        workers=cfg.workers,
    )
    res = StageResult()
    res.tables["sweep_flux.csv"] = _sweep_table(sweep)
    res.summary = {"n_steps": len(sweep.values)}
    res.checks = {"localized_counts_min": int(sweep.localized_counts().min())}
    return res


def _sweep_beta_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    p = cfg.params
    sweep = spectral.sweep_beta(
        v.float("sweep.u0_beta_k", p.U0 * p.beta_L),
        (v.float("sweep.start", 1.0), v.float("sweep.stop", 2.4)),
        v.int("sweep.n_steps", 57),
        n_levels=v.int("sweep.n_levels", 9),
        M=p.M,
        x_e=p.x_e,
        grid=cfg.grid,
        workers=cfg.workers,
    )
    res = StageResult()
    res.tables["sweep_beta.csv"] = _sweep_table(sweep)
    res.summary = {"n_steps": len(sweep.values), "localized_counts": sweep.localized_counts()}
    return res


def _ramp(view: io.ConfigView) -> reset.RampSchedule:
    return reset.RampSchedule(
        x_e0=view.float("reset.x_e0", 0.5001),
        v_e=view.float("reset.v_e", 0.454),
        x_e_end=view.float("reset.x_e_end", 0.4913),
    )


def _crossing_rows(crossings):
    header = ["n", "lower", "upper", "x_star", "delta_K", "slope_K_per_flux", "width_flux"]
    rows = [[i + 1, c.lower_level, c.upper_level, c.x_star, c.delta, c.slope_diff, c.width] for i, c in enumerate(crossings)]
    return header, rows


def _crossings_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    crossings = spectral.ramp_crossings(
        cfg.params,
        v.float("crossings.start", 0.5001),
        v.float("crossings.stop", 0.4913),
        n_crossings=v.int("crossings.n_crossings", 6),
        grid=cfg.grid,
    )
    res = StageResult()
    res.tables["crossings.csv"] = _crossing_rows(crossings)
    res.summary = {"deltas_K": [c.delta for c in crossings]}
    return res


def _capture_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    spec = spectral.solve_spectrum(cfg.params, cfg.grid, 9)
    omega = v.float("capture.omega_d", float("nan"))
    cp = capture.CaptureParams(
        g=v.float("capture.g_k", 2.0),
        alpha=v.float("capture.alpha", 1.0),
        omega_d=None if np.isnan(omega) else omega,
        gamma=v.float("capture.gamma_k", 0.1),
        gamma_phi=v.float("capture.gamma_phi_k", 0.0),
        drive_amplitude=v.float("capture.drive_amplitude_k", 0.0),
    )
    t_end = v.float("capture.t_end_ns", 2.0)
    traj = capture.evolve_capture(None, spec, cp, t_end, stride=v.float("capture.stride_ns", t_end / 2000))
    res = StageResult()
    res.tables["capture.csv"] = io.trajectory_rows(traj)
    summary = {"final_occupations": traj.final, "meta": traj.meta}
    try:
        summary["rabi_frequency_per_ns"] = capture.rabi_frequency(traj)
    except NumericError as exc:
        summary["rabi_frequency_per_ns"] = None
        summary["rabi_note"] = str(exc)
    res.documents["capture.json"] = summary
    res.summary = {"final_occupations": traj.final}
    res.checks = {"trajectory_invariants": traj.check_invariants() or "ok"}
    return res


def compare_reports(numeric: Trajectory, analytic: Trajectory, threshold: float = DEVIATION_FLAG) -> dict:
    """Occupation deviations between two trajectories on their common stamp range.

    Returns per-level maximal absolute deviations on a merged grid, the
    final-state deviations at the common end of the ramp, and a flag set
    when any final deviation exceeds ``threshold``.
    """
    a = np.asarray(numeric.stamps, dtype=float)
    b = np.asarray(analytic.stamps, dtype=float)
    lo, hi = max(a.min(), b.min()), min(a.max(), b.max())
    if lo > hi:
        raise ValidationError(f"trajectories cover disjoint ranges [{a.min()}, {a.max()}] and [{b.min()}, {b.max()}]")
    dim = min(numeric.dim, analytic.dim)
    grid = np.union1d(a[(a >= lo) & (a <= hi)], b[(b >= lo) & (b <= hi)])
    ia, ib = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
    dev = np.empty((len(grid), dim))
    for k in range(dim):
        ya = np.interp(grid, a[ia], numeric.occupations[ia, k])
        yb = np.interp(grid, b[ib], analytic.occupations[ib, k])
        dev[:, k] = np.abs(ya - yb)
    # the common end lies on the side both trajectories finish on
    end = lo if a[-1] <= a[0] else hi
    fa = np.array([np.interp(end, a[ia], numeric.occupations[ia, k]) for k in range(dim)])
    fb = np.array([np.interp(end, b[ib], analytic.occupations[ib, k]) for k in range(dim)])
    final = np.abs(fa - fb)
    return {
        "range": [float(lo), float(hi)],
        "per_level_max": dev.max(axis=0).tolist(),
        "max_deviation": float(dev.max()),
        "final_numeric": fa.tolist(),
        "final_analytic": fb.tolist(),
        "final_deviation": final.tolist(),
        "max_final_deviation": float(final.max()),
        "threshold": threshold,
        "flagged": bool(final.max() > threshold),
    }


def _chain(cfg: RunConfig, ramp, gamma, deltas=None):
    crossings = spectral.ramp_crossings(cfg.params, ramp.x_e0, ramp.x_e_end, n_crossings=6, grid=cfg.grid)
    chain = lzsm.CrossingChain.from_crossings(crossings, ramp.v_e, gamma, ramp.x_e0, ramp.x_e_end, deltas=deltas)
    return crossings, chain


def _reset_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    ramp = _ramp(v)
    gamma = v.float("reset.gamma_per_ns", 22.7)
    store = v.bool("reset.save_matrices", False)
    traj = reset.evolve_reset(None, cfg.params, ramp, gamma, cfg.grid, store_matrices=store)
    crossings, chain = _chain(cfg, ramp, gamma)
    analytic = lzsm.rate_equation_evolve(chain)
    widths = reset.transition_widths(traj)
    res = StageResult()
    res.tables["reset.csv"] = io.trajectory_rows(traj)
    res.tables["rate_equation.csv"] = io.trajectory_rows(analytic.trajectory)
    res.documents["crossings.json"] = [
        {"levels": [w.lower_level, w.upper_level], "x_star": w.x_star, "width": w.width, "jump": w.jump}
        for w in widths
    ]
    numeric_pr = float(traj.final[-1])
    res.documents["lzsm_report.json"] = {
        "report": lzsm.lzsm_report(chain, numeric=numeric_pr),
        "comparison": compare_reports(traj, analytic.trajectory),
    }
    if store:
        res.dumps["reset_rho.bin"] = (traj.stamps, traj.matrices)
    res.summary = {"final_occupations": traj.final, "return_probability": numeric_pr}
    res.checks = {"trajectory_invariants": traj.check_invariants() or "ok"}
    return res


def _aim_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    ramp = _ramp(v)
    gamma = v.float("aim.gamma_per_ns", v.float("reset.gamma_per_ns", 22.7))
    deltas = v.floats("aim.deltas_k", "") or None
    crossings, chain = _chain(cfg, ramp, gamma, deltas)
    aim = lzsm.aim_final_occupations(chain)
    rate = lzsm.rate_equation_evolve(chain)
    res = StageResult()
    res.tables["aim.csv"] = (
        ["level", "aim_occupation", "rate_equation_occupation"],
        [[k + 1, aim[k], rate.final[k]] for k in range(chain.dim)],
    )
    res.tables["rate_equation.csv"] = io.trajectory_rows(rate.trajectory)
    res.documents["lzsm_report.json"] = lzsm.lzsm_report(chain)
    res.summary = {"aim": aim, "rate_equation_final": rate.final}
    res.checks = {"aim_sum": float(aim.sum()), "rate_sum": float(rate.final.sum())}
    return res


def _design_stage(cfg: RunConfig) -> StageResult:
    v = cfg.view
    design = lzsm.design_ramp_speed(
        v.float("design.delta_max_k", 3e-3), v.float("design.p_target", 0.99), v.float("design.i_p_a", 3e-6)
    )
    span = abs(v.float("design.x_from", 0.5087) - v.float("design.x_to", 0.4913))
    res = StageResult()
    res.documents["design.json"] = {
        "delta_max_K": design.delta_max,
        "target_probability": design.target_probability,
        "I_p_A": design.I_p,
        "v_K_per_ns": design.v,
        "dphi_dt_Wb_per_s": design.dphi_dt_wb_per_s,
        "dphi_dt_phi0_per_us": design.dphi_dt_phi0_per_us,
        "flux_span": span,
        "ramp_duration_us": design.speed.ramp_duration_us(span),
    }
    res.summary = dict(res.documents["design.json"])
    return res


_HANDLERS = {
    "spectrum": _spectrum_stage,
    "sweep-flux": _sweep_flux_stage,
    "sweep-beta": _sweep_beta_stage,
    "crossings": _crossings_stage,
    "capture": _capture_stage,
    "reset": _reset_stage,
    "aim": _aim_stage,
    "design-speed": _design_stage,
}


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def run(cfg: RunConfig) -> StageResult:
    """Run one stage and write its artifacts plus ``manifest.json`` into ``cfg.out``.

    Everything is computed before the output directory is touched, so a
    failing run leaves no files behind.
    """
    result = _HANDLERS[cfg.stage](cfg)
    unused = cfg.view.unused()
    if unused:
        logger.warning("unused config keys: %s", ", ".join(unused))
    cfg.out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, (header, rows) in result.tables.items():
        files[name] = io.write_csv(cfg.out / name, header, rows)
    for name, payload in result.documents.items():
        files[name] = io.write_json(cfg.out / name, payload)
    for name, (stamps, mats) in result.dumps.items():
        files[name] = io.write_density_dump(cfg.out / name, stamps, mats)
    p = cfg.params
    manifest = {
        "stage": cfg.stage,
        "code_version": _version(),
        "config_source": cfg.view.source,
        "config": cfg.view.values,
        "circuit": {"U0_K": p.U0, "beta_L": p.beta_L, "M_invK": p.M, "x_e": p.x_e},
        "grid": None if cfg.grid is None else [cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n_points],
        "workers": cfg.workers,
        "tolerances": {
            "hermiticity": density.HERMITIAN_TOL,
            "trace": density.TRACE_TOL,
            "positivity": density.POSITIVITY_TOL,
            "localization_threshold": spectral.LOCALIZATION_THRESHOLD,
        },
        "checks": result.checks,
        "summary": result.summary,
        "files": {name: io.sha256(path) for name, path in files.items()},
    }
    io.write_json(cfg.out / "manifest.json", manifest)
    return result


def run_checks(cfg: RunConfig) -> dict:
    """Fast invariant suite on the configured circuit; nothing is written."""
    out = {}
    spec = spectral.solve_spectrum(cfg.params, cfg.grid, 9)
    out["spectrum_levels"] = spec.n_levels
    out["localized_levels"] = len(spec.localized_levels())
    traj = capture.evolve_capture(None, spec, capture.CaptureParams(), 0.2, store_matrices=True)
    problems = traj.check_invariants() + density.density_violations(traj.matrices[-1], trace_tol=1e-6)
    out["capture_invariants"] = problems or "ok"
    aim = lzsm.aim_final_occupations(np.linspace(0.1, 0.9, 6))
    out["aim_sum_defect"] = float(abs(aim.sum() - 1.0))
    failures = [k for k, val in out.items() if isinstance(val, list) and val]
    if out["aim_sum_defect"] > 1e-12:
        failures.append("aim_sum_defect")
    if failures:
        raise NumericError(f"invariant checks failed: {', '.join(failures)}")
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="fluxqudit", description="Flux-qudit detector simulations.")
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    parser.add_argument("--stage", choices=STAGES, help="stage to run (overrides the config)")
    parser.add_argument("--out", type=Path, help="output directory (overrides the config)")
    parser.add_argument("--workers", type=int, help="worker processes for sweeps")
    parser.add_argument("--check", action="store_true", help="run the invariant suite only")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        values = io.read_config(args.config) if args.config else {}
        stage = args.stage
        if args.check and not stage and "stage" not in values:
            stage = "spectrum"
        cfg = RunConfig.from_values(values, args.config, stage=stage, out=args.out, workers=args.workers)
        if args.check:
            for key, val in run_checks(cfg).items():
                print(f"{key}: {val}")
            return 0
        result = run(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    for key, val in result.summary.items():
        print(f"{key}: {val}")
    print(f"wrote {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
