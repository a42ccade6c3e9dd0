"""Experiment pipelines behind the CLI verbs.

Each pipeline turns a validated config into CSV tables plus a JSON run
summary.  Tables carry the config echo in their metadata header and no
timestamps, so identical (config, seed) runs are byte-identical; wall time
lives in the summary file only.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from magnonlink import __version__
from magnonlink.model import OPEN_LAYOUT, EFFECTIVE_LAYOUT, build_effective_hamiltonian
from magnonlink.dynamics import TimeGrid, basis_state, sample_constant
from magnonlink.entanglement import (
    concurrence_wootters,
    envelope_series,
    reduce_to_magnons,
)
from magnonlink.control import (
    ControlField,
    ControlProblem,
    constant_guess_field,
    krotov_optimize,
)
from magnonlink.opensys import (
    controlled_open_dynamics,
    lowering_operators,
    open_hamiltonian,
    propagate_master_equation,
    propagate_qsd_trajectories,
)
from magnonlink.config import ExperimentConfig, config_echo
from magnonlink.tables import ResultTable, write_summary, write_table
from magnonlink.validate import validate_suite


class PipelineError(RuntimeError):
    pass


def _meta(config: ExperimentConfig) -> dict[str, str]:
    return {"config": config_echo(config), "version": __version__}


def _times(config: ExperimentConfig) -> np.ndarray:
    if config.sample_times is not None:
        return config.sample_times
    return config.grid.times


def run_experiment(config: ExperimentConfig, out_dir: str | Path, threads: int = 1) -> dict:
    """Dispatch to the pipeline for config.kind; returns the run summary.

    ``threads`` fans independent sweep members (the control T sweep) out to
    worker processes; single runs are unaffected.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / f".{config.output_prefix}.probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PipelineError(f"output directory {out_dir} is not writable: {exc}") from exc

    started = time.time()
    runner = {
        "closed": _run_closed,
        "envelope": _run_envelope,
        "control": _run_control,
        "opensys": _run_opensys,
        "validate": _run_validate,
    }[config.kind]
    try:
        if config.kind == "control":
            summary = runner(config, out_dir, threads)
        else:
            summary = runner(config, out_dir)
    except Exception as exc:
        raise PipelineError(f"{config.kind} experiment failed: {exc}") from exc
    summary["kind"] = config.kind
    summary["seed"] = config.seed
    summary["wall_time_s"] = time.time() - started
    summary_path = out_dir / f"{config.output_prefix}_summary.json"
    write_summary(summary, summary_path)
    summary["summary_path"] = str(summary_path)
    return summary


def _run_closed(config: ExperimentConfig, out_dir: Path) -> dict:
    h = build_effective_hamiltonian(config.model)
    psi0 = basis_state(EFFECTIVE_LAYOUT, config.initial_state)
    times = _times(config)
    amps = sample_constant(h, psi0, times)
    conc = 2.0 * np.abs(amps[:, 0] * amps[:, 1])
    rows = np.column_stack([times, np.abs(amps[:, 0]), np.abs(amps[:, 1]), conc])
    table = ResultTable(["t", "abs_p1", "abs_p2", "concurrence"], rows, _meta(config))
    path = write_table(table, out_dir / f"{config.output_prefix}_series.csv")
    return {
        "tables": [str(path)],
        "final_concurrence": float(conc[-1]),
        "max_concurrence": float(conc.max()),
    }


def _run_envelope(config: ExperimentConfig, out_dir: Path) -> dict:
    h = build_effective_hamiltonian(config.model)
    psi0 = basis_state(EFFECTIVE_LAYOUT, config.initial_state)
    times = _times(config)
    amps = sample_constant(h, psi0, times)
    conc = 2.0 * np.abs(amps[:, 0] * amps[:, 1])
    samples = envelope_series(config.model, times)
    branch_cols = {name: np.full(len(times), np.nan) for name in ("ev1", "ev2", "ev3", "ev4")}
    active = np.empty(len(times))
    phi_vals = np.empty(len(times))
    defined = np.empty(len(times))
    for i, s in enumerate(samples):
        for name, value in s.branches.items():
            branch_cols[name][i] = value
        active[i] = s.active_bound
        phi_vals[i] = s.Phi
        defined[i] = 1.0 if s.phi1_defined else 0.0
    rows = np.column_stack(
        [times, conc, active, phi_vals, defined]
        + [branch_cols[n] for n in ("ev1", "ev2", "ev3", "ev4")]
    )
    table = ResultTable(
        ["t", "C", "ev_active", "Phi", "phi1_defined", "ev1", "ev2", "ev3", "ev4"],
        rows,
        _meta(config),
    )
    path = write_table(table, out_dir / f"{config.output_prefix}_series.csv")
    branches_seen = sorted({name for s in samples for name in s.branches})
    return {"tables": [str(path)], "branches_seen": branches_seen}


def _control_problem(config: ExperimentConfig, total_time: float) -> ControlProblem:
    cs = config.control
    n_cells = max(1, int(round(total_time / cs.dt)))
    return ControlProblem(
        params=config.model,
        total_time=total_time,
        n_cells=n_cells,
        j_target=cs.j_target,
        field_bounds=cs.field_bounds,
        max_iterations=cs.max_iterations,
    )


def _meets_goal(problem: ControlProblem, result) -> bool:
    lo, hi = problem.field_bounds
    return (
        result.final_concurrence > 1.0 - 2.0 * problem.j_target
        and result.fields.values.min() >= lo
        and result.fields.values.max() <= hi
    )


def sweep_optimize(
    problem: ControlProblem,
    lambda_a: tuple[float, float] = (5.0, 5.0),
    guess: tuple[float, float] = (1.0, 1.0),
    warm_values: np.ndarray | None = None,
):
    """Optimize one runtime with fallbacks for fence-pinned descent paths.

    Cold start from the constant guess first.  A few runtimes drive a
    transient control spike into the field bound and stall there; for
    those, retry warm-started from a neighbouring runtime's solution
    stretched in scaled time, and as a last resort grind with a fixed
    step size and a larger sweep budget (slow but monotone).
    """
    cold = constant_guess_field(problem.grid, guess=guess, lambda_a=lambda_a)
    result = krotov_optimize(problem, cold)
    if _meets_goal(problem, result):
        return result

    if warm_values is not None:
        n = problem.n_cells
        src = np.asarray(warm_values, dtype=float)
        positions = np.linspace(0.0, 1.0, n, endpoint=False) + 0.5 / n
        idx = np.minimum((positions * src.shape[1]).astype(int), src.shape[1] - 1)
        warm = ControlField(
            problem.grid, src[:, idx], src[:, idx].copy(),
            np.ones((2, n)), np.asarray(lambda_a, dtype=float),
        )
        warm_result = krotov_optimize(problem, warm)
        if _meets_goal(problem, warm_result):
            return warm_result

    from dataclasses import replace as dc_replace

    grind_problem = dc_replace(problem, max_iterations=max(4000, problem.max_iterations))
    grind = krotov_optimize(
        grind_problem,
        constant_guess_field(problem.grid, guess=guess, lambda_a=lambda_a),
        adapt_step=False,
    )
    return grind if _meets_goal(grind_problem, grind) else result


def _optimize_for(config: ExperimentConfig, total_time: float, warm_values=None):
    problem = _control_problem(config, total_time)
    result = sweep_optimize(
        problem,
        lambda_a=config.control.lambda_a,
        guess=config.control.guess,
        warm_values=warm_values,
    )
    return problem, result


def _run_control(config: ExperimentConfig, out_dir: Path, threads: int = 1) -> dict:
    cs = config.control
    sweep = cs.t_sweep
    horizons = (
        [float(total) for total in range(sweep[0], sweep[1] + 1)]
        if sweep is not None
        else [cs.total_time]
    )
    if threads > 1 and len(horizons) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_optimize_for, [config] * len(horizons), horizons))
    else:
        results = [_optimize_for(config, total_time) for total_time in horizons]

    tables = []
    runs = []
    for total_time, (problem, result) in zip(horizons, results):
        grid = problem.grid
        cell_starts = grid.times[:-1]
        rows = np.column_stack([cell_starts, result.fields.values[0], result.fields.values[1]])
        table = ResultTable(["t", "f1", "f2"], rows, _meta(config))
        suffix = f"_T{total_time:g}" if sweep is not None else ""
        path = write_table(table, out_dir / f"{config.output_prefix}{suffix}_fields.csv")
        hist = ResultTable(
            ["iteration", "J_T", "J"],
            np.column_stack(
                [np.arange(len(result.j_t_history)), result.j_t_history, result.j_history]
            ),
            _meta(config),
        )
        hist_path = write_table(hist, out_dir / f"{config.output_prefix}{suffix}_history.csv")
        tables += [str(path), str(hist_path)]
        runs.append(
            {
                "T": total_time,
                "final_concurrence": result.final_concurrence,
                "final_j_t": float(result.j_t_history[-1]),
                "iterations": result.n_iterations,
                "termination": result.termination,
                "fields_min": float(result.fields.values.min()),
                "fields_max": float(result.fields.values.max()),
            }
        )
    return {"tables": tables, "runs": runs}


def _open_concurrence(rhos: np.ndarray) -> np.ndarray:
    return np.array(
        [concurrence_wootters(reduce_to_magnons(rho, OPEN_LAYOUT)) for rho in rhos]
    )


def _pick_stepping(h_norm: float, grid: TimeGrid, method: str) -> tuple[str, int]:
    """Substep count per backend: direct fourth-order stepping needs
    dt * ||H|| <= 0.05, the eigenbasis backend only resolves the
    microwave-scale beat structure (dt <= 0.1)."""
    direct_sub = max(1, int(np.ceil(grid.dt * max(h_norm, 1.0) / 0.05)))
    eigen_sub = max(1, int(np.ceil(grid.dt / 0.1)))
    if method == "direct":
        return "direct", direct_sub
    if method == "eigen":
        return "eigen", eigen_sub
    if direct_sub * grid.n_steps <= 200_000:
        return "direct", direct_sub
    return "auto", eigen_sub


def _run_opensys(config: ExperimentConfig, out_dir: Path) -> dict:
    bath = config.bath
    osys = config.opensys
    summary: dict = {"tables": []}

    if config.control is not None:
        # controlled open dynamics: optimize first, then dissipate
        problem, result = _optimize_for(config, config.control.total_time)
        substeps = osys.substeps or 4
        runs = {}
        for markov in ((False, True) if osys.compare_markov else (bath.markov,)):
            this_bath = replace(bath, markov=markov)
            out = controlled_open_dynamics(problem, result.fields, this_bath, substeps=substeps)
            label = "markov" if markov else "nonmarkov"
            rows = np.column_stack(
                [out.times, out.concurrence, out.fidelity, out.trace, out.min_eigenvalue]
            )
            table = ResultTable(
                ["t", "concurrence", "fidelity", "trace", "min_eigenvalue"], rows, _meta(config)
            )
            path = write_table(table, out_dir / f"{config.output_prefix}_{label}.csv")
            summary["tables"].append(str(path))
            runs[label] = {
                "final_concurrence": out.final_concurrence,
                "final_fidelity": out.final_fidelity,
                "worst_trace_deviation": float(np.max(np.abs(out.trace - 1.0))),
                "worst_eigenvalue": float(out.min_eigenvalue.min()),
            }
        summary["closed_loop_concurrence"] = result.final_concurrence
        summary["runs"] = runs
        return summary

    h = open_hamiltonian(config.model)
    Ls = lowering_operators(bath.lambda_a, bath.lambda_b)
    rho0 = np.zeros((7, 7), dtype=complex)
    rho0[OPEN_LAYOUT.index(config.initial_state), OPEN_LAYOUT.index(config.initial_state)] = 1.0
    grid = config.grid
    method, auto_substeps = _pick_stepping(float(np.max(np.abs(h.matrix))), grid, osys.method)
    substeps = osys.substeps or auto_substeps

    runs = {}
    for markov in ((False, True) if osys.compare_markov else (bath.markov,)):
        this_bath = replace(bath, markov=markov)
        traj = propagate_master_equation(
            h, Ls, this_bath, rho0, grid, substeps=substeps, method=method
        )
        conc = _open_concurrence(traj.rhos)
        label = "markov" if markov else "nonmarkov"
        rows = np.column_stack([traj.times, conc, traj.trace, traj.min_eigenvalue])
        table = ResultTable(["t", "concurrence", "trace", "min_eigenvalue"], rows, _meta(config))
        path = write_table(table, out_dir / f"{config.output_prefix}_{label}.csv")
        summary["tables"].append(str(path))
        runs[label] = {
            "final_concurrence": float(conc[-1]),
            "max_concurrence": float(conc.max()),
            "worst_trace_deviation": float(np.max(np.abs(traj.trace - 1.0))),
            "worst_eigenvalue": float(traj.min_eigenvalue.min()),
        }
    summary["runs"] = runs

    if osys.n_traj > 0:
        psi0 = basis_state(OPEN_LAYOUT, config.initial_state)
        qsd = propagate_qsd_trajectories(
            h, Ls, replace(bath, markov=False), psi0, grid,
            n_traj=osys.n_traj, seed=config.seed, substeps=substeps,
        )
        conc = _open_concurrence(qsd.rho_mean_normalized)
        rows = np.column_stack([qsd.times, conc])
        table = ResultTable(["t", "concurrence"], rows, _meta(config))
        path = write_table(table, out_dir / f"{config.output_prefix}_qsd.csv")
        summary["tables"].append(str(path))
        summary["qsd"] = {"n_traj": osys.n_traj, "final_concurrence": float(conc[-1])}
    return summary


def _run_validate(config: ExperimentConfig, out_dir: Path) -> dict:
    report = validate_suite(seed=config.seed)
    return {"tables": [], "validation": report, "passed": report["passed"]}
