"""Krotov optimal control of the two magnon frequencies.

The controls f_1(t), f_2(t) replace the magnon diagonal entries of the
effective Hamiltonian and are shaped so the chain reaches the magnon Bell
state at a prescribed time T.  Controls are piecewise constant on grid
cells; each iteration runs a backward costate sweep followed by a
time-sequential update in which the forward state is re-propagated through
the already-updated cells, which is what makes the continuous-time descent
guarantee carry over to the discretization up to O(dt) slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from magnonlink.model import (
    EffectiveParams,
    EFFECTIVE_LAYOUT,
    build_effective_hamiltonian,
)
from magnonlink.dynamics import (
    StateVector,
    TimeGrid,
    Trajectory,
    basis_state,
    step_unitaries,
)
from magnonlink.entanglement import concurrence_pure


class ControlError(ValueError):
    """Inconsistent control setup or non-finite fields."""


def bell_target() -> StateVector:
    """(|10> + |01>)/sqrt(2) on the magnons, cavities in vacuum."""
    amps = np.zeros(6, dtype=complex)
    amps[0] = amps[1] = 1.0 / np.sqrt(2.0)
    return StateVector(amps, EFFECTIVE_LAYOUT)


@dataclass(frozen=True)
class ControlField:
    """Two piecewise-constant control functions on a uniform grid.

    values[l, k] is f_{l+1} on cell k; ``reference`` holds the fields the
    running cost is measured against (the previous iteration's fields);
    ``shapes`` in [0, 1] gate where updates may act and ``lambda_a`` is the
    inverse step size per control.
    """

    grid: TimeGrid
    values: np.ndarray
    reference: np.ndarray
    shapes: np.ndarray
    lambda_a: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        reference = np.atleast_2d(np.asarray(self.reference, dtype=float))
        shapes = np.atleast_2d(np.asarray(self.shapes, dtype=float))
        lambda_a = np.asarray(self.lambda_a, dtype=float)
        for name, arr in (("values", values), ("reference", reference), ("shapes", shapes)):
            if arr.shape != (2, self.grid.n_steps):
                raise ControlError(
                    f"{name} shape {arr.shape} does not match (2, n_cells={self.grid.n_steps})"
                )
        if np.any(shapes < 0) or np.any(shapes > 1):
            raise ControlError("shape samples must lie in [0, 1]")
        if lambda_a.shape != (2,) or np.any(lambda_a <= 0):
            raise ControlError("lambda_a must be two positive step-size parameters")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "lambda_a", lambda_a)


def constant_guess_field(
    grid: TimeGrid,
    guess: tuple[float, float] = (1.0, 1.0),
    lambda_a: tuple[float, float] = (25.0, 25.0),
    shapes: np.ndarray | None = None,
) -> ControlField:
    """Constant initial guess (default f_1 = f_2 = 1) with itself as reference."""
    values = np.outer(np.asarray(guess, dtype=float), np.ones(grid.n_steps))
    if shapes is None:
        shapes = np.ones_like(values)
    return ControlField(grid, values, values.copy(), np.asarray(shapes, float), np.asarray(lambda_a, float))


def flattop_shape(grid: TimeGrid, t_rise: float) -> np.ndarray:
    """Flat-top update shape with smooth cosine flanks of width ``t_rise``.

    Update suppression near the window edges keeps the optimizer from
    carving narrow spikes into the first and last control cells; the
    interior is unweighted (S = 1).
    """
    if t_rise < 0 or 2 * t_rise > grid.t_end - grid.t_start:
        raise ControlError("t_rise must be non-negative and fit twice into the window")
    t = grid.times[:-1] + grid.dt / 2 - grid.t_start
    span = grid.t_end - grid.t_start
    s = np.ones_like(t)
    if t_rise > 0:
        rising = t < t_rise
        falling = t > span - t_rise
        s[rising] = np.sin(0.5 * np.pi * t[rising] / t_rise) ** 2
        s[falling] = np.sin(0.5 * np.pi * (span - t[falling]) / t_rise) ** 2
    return np.vstack([s, s])


@dataclass(frozen=True)
class ControlProblem:
    """State-to-state transfer setup for the effective chain."""

    params: EffectiveParams
    total_time: float
    n_cells: int
    initial_state: StateVector = None
    target_state: StateVector = None
    j_target: float = 1e-4
    field_bounds: tuple[float, float] = (0.7, 1.3)
    max_iterations: int = 500
    sequential: bool = True

    def __post_init__(self):
        if self.total_time <= 0:
            raise ControlError("total_time must be positive")
        if self.field_bounds[0] >= self.field_bounds[1]:
            raise ControlError("field bounds interval is empty")
        if self.initial_state is None:
            object.__setattr__(self, "initial_state", basis_state(EFFECTIVE_LAYOUT, "m1"))
        if self.target_state is None:
            object.__setattr__(self, "target_state", bell_target())
        self.initial_state.require_normalized()
        self.target_state.require_normalized()

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.total_time, self.n_cells)


@dataclass(frozen=True)
class ControlResult:
    """Optimizer outcome with per-iteration cost history."""

    fields: ControlField
    j_t_history: np.ndarray
    j_history: np.ndarray
    final_state: StateVector
    final_concurrence: float
    termination: str  # converged | bound-exceeded | max-iterations
    n_iterations: int


def _drift_matrix(params: EffectiveParams) -> np.ndarray:
    """Effective Hamiltonian with the magnon diagonal entries zeroed."""
    h = build_effective_hamiltonian(params).matrix.copy()
    h[0, 0] = 0.0
    h[1, 1] = 0.0
    return h


def _cell_hamiltonians(drift: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Stack of per-cell Hamiltonians (n_cells, 6, 6) for given field values."""
    n = values.shape[1]
    hs = np.broadcast_to(drift, (n, 6, 6)).copy()
    hs[:, 0, 0] = values[0]
    hs[:, 1, 1] = values[1]
    return hs


def _forward_pass(drift: np.ndarray, values: np.ndarray, psi0: np.ndarray, dt: float):
    """Propagate through all cells, returning states at cell edges and the
    per-cell unitaries."""
    unitaries = step_unitaries(_cell_hamiltonians(drift, values), dt)
    n = values.shape[1]
    states = np.empty((n + 1, 6), dtype=complex)
    states[0] = psi0
    psi = psi0
    for k in range(n):
        psi = unitaries[k] @ psi
        states[k + 1] = psi
    return states, unitaries


def _backward_pass(unitaries: np.ndarray, chi_final: np.ndarray) -> np.ndarray:
    """Costate at every cell edge from the boundary value at T."""
    n = unitaries.shape[0]
    chis = np.empty((n + 1, 6), dtype=complex)
    chis[n] = chi_final
    chi = chi_final
    for k in range(n - 1, -1, -1):
        chi = unitaries[k].conj().T @ chi
        chis[k] = chi
    return chis


def evaluate_functional(
    psi_final: StateVector,
    target: StateVector,
    fields: ControlField,
) -> tuple[float, float]:
    """Total cost J = J_T + running cost and the infidelity J_T alone.

    J_T = 1 - |<target|psi(T)>|^2; the running cost integrates
    (lambda_a_l / S_l) * (f_l - f_l^ref)^2 over the grid, with zero-shape
    cells contributing nothing (updates are forced to zero there).
    """
    psi_final.require_normalized()
    target.require_normalized()
    overlap = np.vdot(target.amplitudes, psi_final.amplitudes)
    j_t = 1.0 - abs(overlap) ** 2
    delta = fields.values - fields.reference
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(fields.shapes > 0, fields.lambda_a[:, None] / fields.shapes, 0.0)
    running = float(np.sum(weights * delta**2) * fields.grid.dt)
    return j_t + running, j_t


def backward_propagate(
    problem: ControlProblem,
    fields: ControlField,
    psi_final: StateVector,
) -> Trajectory:
    """Costate trajectory chi(t) for the infidelity functional.

    Boundary chi(T) = <target|psi(T)> |target>, the scaling that makes the
    update formula an exact functional derivative of J_T; chi is stepped
    backward with the same per-cell unitaries as the forward pass.
    """
    if fields.grid.n_steps != problem.n_cells:
        raise ControlError("field grid does not match the problem grid")
    drift = _drift_matrix(problem.params)
    unitaries = step_unitaries(_cell_hamiltonians(drift, fields.values), fields.grid.dt)
    overlap = np.vdot(problem.target_state.amplitudes, psi_final.amplitudes)
    chis = _backward_pass(unitaries, overlap * problem.target_state.amplitudes)
    return Trajectory(fields.grid, chis, EFFECTIVE_LAYOUT)


def _update_sweep(
    drift: np.ndarray,
    fields: ControlField,
    chis: np.ndarray,
    psi0: np.ndarray,
    old_states: np.ndarray,
    sequential: bool,
):
    """One Krotov update sweep.

    delta f_l(t_k) = (S_l / lambda_l) Im <chi_k | P_l | psi_k> with P_l the
    magnon-l projector.  Sequentially, psi_k is re-propagated through the
    already-updated cells; the simultaneous variant uses the stored forward
    states (plain gradient step, kept for comparison).
    """
    dt = fields.grid.dt
    n = fields.grid.n_steps
    gain = fields.shapes / fields.lambda_a[:, None]
    new_values = fields.values.copy()
    states = np.empty((n + 1, 6), dtype=complex)
    states[0] = psi0
    psi = psi0
    unitaries = np.empty((n, 6, 6), dtype=complex)
    h_cell = drift.copy()
    for k in range(n):
        ref = psi if sequential else old_states[k]
        upd = np.imag(chis[k].conj() * ref)[:2]
        new_values[:, k] += gain[:, k] * upd
        h_cell[0, 0] = new_values[0, k]
        h_cell[1, 1] = new_values[1, k]
        unitaries[k] = step_unitaries(h_cell, dt)
        psi = unitaries[k] @ psi
        states[k + 1] = psi
    return new_values, states, unitaries


def krotov_update_step(
    problem: ControlProblem,
    fields: ControlField,
    forward: Trajectory,
    costate: Trajectory,
) -> ControlField:
    """Updated control field from one sweep; the new reference is the
    previous iteration's field."""
    drift = _drift_matrix(problem.params)
    new_values, _, _ = _update_sweep(
        drift,
        fields,
        costate.states,
        problem.initial_state.amplitudes,
        forward.states,
        problem.sequential,
    )
    if not np.all(np.isfinite(new_values)):
        raise ControlError("non-finite control values after update sweep")
    return replace(fields, values=new_values, reference=fields.values.copy())


def first_sweep_updates(problem: ControlProblem, fields: ControlField) -> np.ndarray:
    """The raw delta-f of a single sweep from the given fields, shape
    (2, n_cells).  Used by the gradient cross-check in the validation suite."""
    drift = _drift_matrix(problem.params)
    states, unitaries = _forward_pass(
        drift, fields.values, problem.initial_state.amplitudes, fields.grid.dt
    )
    overlap = np.vdot(problem.target_state.amplitudes, states[-1])
    chis = _backward_pass(unitaries, overlap * problem.target_state.amplitudes)
    new_values, _, _ = _update_sweep(
        drift, fields, chis, problem.initial_state.amplitudes, states, problem.sequential
    )
    return new_values - fields.values


def infidelity(psi_amps: np.ndarray, target_amps: np.ndarray) -> float:
    return 1.0 - abs(np.vdot(target_amps, psi_amps)) ** 2


def krotov_optimize(
    problem: ControlProblem,
    guess: ControlField | None = None,
    adapt_step: bool = True,
    stall_fraction: float = 0.08,
    shrink_factor: float = 0.5,
    min_lambda_factor: float = 0.02,
    max_backtracks: int = 10,
) -> ControlResult:
    """Iterate forward propagation, backward costate and sequential update
    until J_T reaches the target, a field sample leaves the allowed range,
    or the iteration budget runs out.

    With ``adapt_step`` the inverse step sizes lambda_a are halved whenever
    the relative J_T decrease falls below ``stall_fraction`` (down to
    ``min_lambda_factor`` times the initial value).  Each sweep still uses
    a fixed positive lambda_a, so the monotonic-descent property of the
    sequential update is untouched; adaptation only shortens the slow
    asymptotic tail of a constant step size.

    A sweep that would push a field sample outside the allowed range is
    rejected and retried with lambda_a doubled, up to ``max_backtracks``
    times; only when no admissible step remains does the run terminate
    with reason "bound-exceeded" (the returned fields are the last
    accepted, in-range ones).  Histories list accepted sweeps only, so the
    descent invariants are unaffected.
    """
    grid = problem.grid
    if guess is None:
        guess = constant_guess_field(grid)
    if guess.grid.n_steps != problem.n_cells:
        raise ControlError("guess field grid does not match the problem grid")

    drift = _drift_matrix(problem.params)
    psi0 = problem.initial_state.amplitudes
    target = problem.target_state.amplitudes
    lo, hi = problem.field_bounds

    values = guess.values.copy()
    reference = guess.reference.copy()
    lambda_a = guess.lambda_a.copy()
    lambda_floor = guess.lambda_a * min_lambda_factor
    states, unitaries = _forward_pass(drift, values, psi0, grid.dt)
    j_t = infidelity(states[-1], target)
    current = ControlField(grid, values, reference, guess.shapes, lambda_a)
    j_total, _ = evaluate_functional(
        StateVector(states[-1], EFFECTIVE_LAYOUT), problem.target_state, current
    )
    j_t_history = [j_t]
    j_history = [j_total]

    termination = "max-iterations"
    n_iter = 0
    if j_t <= problem.j_target:
        termination = "converged"
    else:
        for it in range(1, problem.max_iterations + 1):
            n_iter = it
            overlap = np.vdot(target, states[-1])
            chis = _backward_pass(unitaries, overlap * target)
            accepted = False
            for _ in range(max_backtracks + 1):
                new_values, new_states, new_unitaries = _update_sweep(
                    drift,
                    ControlField(grid, values, reference, guess.shapes, lambda_a),
                    chis,
                    psi0,
                    states,
                    problem.sequential,
                )
                if not np.all(np.isfinite(new_values)):
                    raise ControlError(f"non-finite control values at iteration {n_iter}")
                if np.all(new_values >= lo) and np.all(new_values <= hi):
                    accepted = True
                    break
                lambda_a = lambda_a * 2.0  # smaller step, retry the sweep
            if not accepted:
                termination = "bound-exceeded"
                break
            states, unitaries = new_states, new_unitaries
            j_t = infidelity(states[-1], target)
            delta = new_values - values
            with np.errstate(divide="ignore", invalid="ignore"):
                weights = np.where(guess.shapes > 0, lambda_a[:, None] / guess.shapes, 0.0)
            running = float(np.sum(weights * delta**2) * grid.dt)
            if adapt_step and j_t > j_t_history[-1] * (1.0 - stall_fraction) and np.all(
                lambda_a > lambda_floor
            ):
                lambda_a = lambda_a * shrink_factor
            j_t_history.append(j_t)
            j_history.append(j_t + running)
            reference = values
            values = new_values
            if j_t <= problem.j_target:
                termination = "converged"
                break

    final_fields = ControlField(grid, values, reference, guess.shapes, lambda_a)
    final_state = StateVector(states[-1], EFFECTIVE_LAYOUT)
    c_final = concurrence_pure(states[-1][0], states[-1][1])
    return ControlResult(
        fields=final_fields,
        j_t_history=np.asarray(j_t_history),
        j_history=np.asarray(j_history),
        final_state=final_state,
        final_concurrence=c_final,
        termination=termination,
        n_iterations=n_iter,
    )
