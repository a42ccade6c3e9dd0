"""Bundled cross-oracle validation checks.

Each check pits an implementation against an independent oracle: the
Wootters construction against the pure-state concurrence shortcut, the
Markov master equation against an exact Lindblad exponential, the closed
Obar ODE against the double-integral evaluation, the Krotov update against
finite-difference gradients, and the effective model against the full
ten-level model in the adiabatic regime.
"""

from __future__ import annotations

import numpy as np

from magnonlink.model import EffectiveParams, FullModelParams, EFFECTIVE_LAYOUT
from magnonlink.dynamics import TimeGrid, StateVector, validate_adiabatic_elimination
from magnonlink.entanglement import concurrence_pure, concurrence_wootters, reduce_to_magnons
from magnonlink import control as control_mod
from magnonlink.control import ControlProblem, constant_guess_field
from magnonlink.opensys import (
    BathSpec,
    lowering_operators,
    open_hamiltonian,
    evolve_o_operators,
    evolve_o_operators_double_integral,
    propagate_master_equation,
    propagate_lindblad,
)


def _check(passed: bool, observed, expected, tolerance) -> dict:
    return {
        "passed": bool(passed),
        "observed": observed,
        "expected": expected,
        "tolerance": tolerance,
    }


def check_wootters_vs_pure(n_states: int = 1000, seed: int = 7, tol: float = 1e-9) -> dict:
    """Pure-state shortcut C = 2|p1 p2| against the Wootters eigenvalues on
    random single-excitation states."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        amps = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        amps /= np.linalg.norm(amps)
        state = StateVector(amps, EFFECTIVE_LAYOUT)
        c_pure = concurrence_pure(amps[0], amps[1])
        c_woot = concurrence_wootters(reduce_to_magnons(state))
        worst = max(worst, abs(c_pure - c_woot))
    return _check(worst <= tol, worst, 0.0, tol)


def check_lindblad_vs_markov(tol: float = 1e-8) -> dict:
    """Markov-limit master equation against the exact Lindblad exponential."""
    params = EffectiveParams(omega_a=3.0, omega_b=1.0, omega_m=1.0, g_m=1.3, g_c=1.5, j_a=0.5)
    h = open_hamiltonian(params)
    Ls = lowering_operators(0.2, 0.3)
    rho0 = np.zeros((7, 7), dtype=complex)
    rho0[1, 1] = 1.0
    grid = TimeGrid(0.0, 5.0, 50)
    bath = BathSpec(1.0, 0.2, 0.3, markov=True)
    ours = propagate_master_equation(h, Ls, bath, rho0, grid, substeps=40, method="direct")
    oracle = propagate_lindblad(h, Ls, rho0, grid)
    worst = float(np.max(np.abs(ours.rhos - oracle.rhos)))
    return _check(worst <= tol, worst, 0.0, tol)


def check_obar_double_integral(tol: float = 1e-5) -> dict:
    """Closed Obar ODE against the (t, s)-grid double-integral oracle."""
    params = EffectiveParams(omega_a=3.0, omega_b=1.0, omega_m=1.0, g_m=1.3, g_c=1.5, j_a=0.5)
    h = open_hamiltonian(params)
    Ls = lowering_operators(0.01, 0.01)
    bath = BathSpec(0.7, 0.01, 0.01)
    grid = TimeGrid(0.0, 2.0, 800)
    closed = evolve_o_operators(h, Ls, bath, grid)
    oracle = evolve_o_operators_double_integral(h, Ls, bath, grid)
    worst = float(np.max(np.abs(closed.obars - oracle.obars)))
    return _check(worst <= tol, worst, 0.0, tol)


def check_krotov_gradient_sign(n_probes: int = 20, seed: int = 11, eps: float = 1e-6) -> dict:
    """Sign of the first Krotov sweep against central finite differences of
    the infidelity at random (cell, control) probes."""
    params = EffectiveParams(omega_a=12.0, omega_b=1.0, omega_m=1.0, g_m=1.0, g_c=1.5, j_a=3.0)
    problem = ControlProblem(params=params, total_time=5.0, n_cells=100)
    fields = constant_guess_field(problem.grid, lambda_a=(5.0, 5.0))
    updates = control_mod.first_sweep_updates(problem, fields)

    drift = control_mod._drift_matrix(params)
    psi0 = problem.initial_state.amplitudes
    target = problem.target_state.amplitudes

    def j_t_of(values: np.ndarray) -> float:
        states, _ = control_mod._forward_pass(drift, values, psi0, problem.grid.dt)
        return control_mod.infidelity(states[-1], target)

    rng = np.random.default_rng(seed)
    mismatches = 0
    checked = 0
    while checked < n_probes:
        l = int(rng.integers(0, 2))
        k = int(rng.integers(0, problem.n_cells))
        plus = fields.values.copy()
        plus[l, k] += eps
        minus = fields.values.copy()
        minus[l, k] -= eps
        grad = (j_t_of(plus) - j_t_of(minus)) / (2 * eps)
        if abs(grad) < 1e-12 and abs(updates[l, k]) < 1e-12:
            continue  # flat direction carries no sign information
        checked += 1
        if np.sign(updates[l, k]) != np.sign(-grad):
            mismatches += 1
    return _check(mismatches == 0, mismatches, 0, 0)


def check_adiabatic_sweep(
    factors: tuple[float, ...] = (10.0, 30.0, 100.0),
    zero_couplings: bool = False,
) -> dict:
    """Full-vs-effective magnon deviation decreases across a detuning sweep;
    with the converter decoupled the deviation is identically zero."""
    grid = TimeGrid(0.0, 20.0, 400)
    if zero_couplings:
        full = FullModelParams(
            omega_a_prime=2.0, omega_b_prime=1.0, omega_m=1.0,
            delta_1=50.0, delta_2=70.0, Omega=0.0,
            g_mb=0.1, g_cb=0.0, g_ca=0.0, j_a=0.3,
        )
        report = validate_adiabatic_elimination(full, grid)
        return _check(report.max_deviation == 0.0, report.max_deviation, 0.0, 0.0)
    deviations = []
    for factor in factors:
        full = FullModelParams(
            omega_a_prime=2.0, omega_b_prime=1.0, omega_m=1.0,
            delta_1=factor, delta_2=1.4 * factor, Omega=1.0,
            g_mb=0.1, g_cb=1.0, g_ca=1.0, j_a=0.3,
        )
        deviations.append(validate_adiabatic_elimination(full, grid).max_deviation)
    decreasing = all(d1 > d2 for d1, d2 in zip(deviations, deviations[1:]))
    return _check(decreasing, deviations, "strictly decreasing", None)


def validate_suite(seed: int = 7) -> dict:
    """Run every cross-oracle check and return a machine-readable report."""
    checks = {
        "wootters_vs_pure": check_wootters_vs_pure(seed=seed),
        "lindblad_vs_markov": check_lindblad_vs_markov(),
        "obar_double_integral": check_obar_double_integral(),
        "krotov_gradient_sign": check_krotov_gradient_sign(seed=seed + 4),
        "adiabatic_sweep": check_adiabatic_sweep(),
        "adiabatic_zero_coupling": check_adiabatic_sweep(zero_couplings=True),
    }
    return {
        "passed": all(c["passed"] for c in checks.values()),
        "checks": checks,
    }
