import numpy as np
import pytest

from magnonlink.model import EffectiveParams, OPEN_LAYOUT
from magnonlink.dynamics import TimeGrid, basis_state, sample_constant
from magnonlink.entanglement import concurrence_wootters, reduce_to_magnons
from magnonlink.control import ControlProblem, constant_guess_field, krotov_optimize
from magnonlink.opensys import (
    BathSpec,
    DensityMatrix,
    OpenSystemError,
    OOperatorState,
    controlled_open_dynamics,
    evolve_o_operators,
    evolve_o_operators_double_integral,
    lowering_operators,
    markov_limit_dissipator,
    open_hamiltonian,
    ou_kernel,
    propagate_lindblad,
    propagate_master_equation,
    propagate_qsd_trajectories,
    _diagnose,
)

SOFT = EffectiveParams(omega_a=3.0, omega_b=1.0, omega_m=1.0, g_m=1.3, g_c=1.5, j_a=0.5)


def magnon_rho0():
    rho = np.zeros((7, 7), dtype=complex)
    rho[1, 1] = 1.0
    return rho


def conc(rho):
    return concurrence_wootters(reduce_to_magnons(rho, OPEN_LAYOUT))


class TestKernelAndSpecs:
    def test_equal_times(self):
        assert ou_kernel(0.7, 3.0, 3.0) == pytest.approx(0.35)

    def test_symmetry(self, rng):
        for _ in range(20):
            t, s = rng.uniform(0, 10, 2)
            assert ou_kernel(1.3, t, s) == pytest.approx(ou_kernel(1.3, s, t))

    @pytest.mark.parametrize("gamma", [0.2, 0.7, 3.0])
    def test_unit_area(self, gamma):
        # integral over t >= 0 of alpha(t, 0) is 1/2 for every memory rate
        t = np.linspace(0.0, 60.0 / gamma, 200_001)
        area = np.trapezoid(ou_kernel(gamma, t, 0.0), t)
        assert area == pytest.approx(0.5, rel=1e-6)

    def test_bath_validation(self):
        with pytest.raises(OpenSystemError):
            BathSpec(0.0, 0.1, 0.1)
        with pytest.raises(OpenSystemError):
            BathSpec(1.0, -0.1, 0.1)

    def test_lowering_structure(self):
        L1, L2 = lowering_operators(0.3, 0.2)
        assert L1[0, OPEN_LAYOUT.index("co1")] == 0.3
        assert L1[0, OPEN_LAYOUT.index("cm1")] == 0.2
        assert np.all(L1[1:, :] == 0)
        assert L2[0, OPEN_LAYOUT.index("co2")] == 0.3

    def test_density_matrix_invariants(self):
        with pytest.raises(OpenSystemError):
            DensityMatrix(np.eye(7))  # trace 7
        bad = magnon_rho0()
        bad[0, 1] = 0.1
        with pytest.raises(OpenSystemError):
            DensityMatrix(bad)  # not hermitian


class TestMemoryOperators:
    def test_markov_limit_values(self):
        Ls = lowering_operators(0.3, 0.2)
        state = markov_limit_dissipator(Ls)
        assert np.allclose(state.obars[0], Ls[0] / 2)
        assert np.allclose(markov_limit_dissipator([np.zeros((7, 7))]).obars, 0.0)

    def test_initial_condition(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.1, 0.1)
        traj = evolve_o_operators(h, Ls, BathSpec(0.7, 0.1, 0.1), TimeGrid(0.0, 1.0, 100))
        assert np.all(traj.obars[0] == 0.0)
        with pytest.raises(OpenSystemError):
            OOperatorState(np.stack(Ls), 0.0)  # nonzero at t = 0

    def test_commuting_scalar_solution(self):
        # H = 0 and a hermitian diagonal L give Obar(t) = L (1 - e^{-gamma t}) / 2
        gamma = 0.9
        L = np.diag([0.0, 0.4, 0.1, 0.0, 0.2, 0.0, 0.3]).astype(complex)
        grid = TimeGrid(0.0, 4.0, 400)
        traj = evolve_o_operators(np.zeros((7, 7)), [L], BathSpec(gamma, 0.1, 0.1), grid)
        expected = 0.5 * (1.0 - np.exp(-gamma * grid.t_end)) * L
        assert np.max(np.abs(traj.final.obars[0] - expected)) < 1e-10

    def test_divergence_guard(self):
        L = np.zeros((7, 7), dtype=complex)
        L[0, 1] = 3e6
        with pytest.raises(OpenSystemError, match="diverged"):
            evolve_o_operators(np.zeros((7, 7)), [L], BathSpec(1.0, 1.0, 1.0), TimeGrid(0.0, 2.0, 200))

    def test_closed_ode_vs_double_integral(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.01, 0.01)
        bath = BathSpec(0.7, 0.01, 0.01)
        grid = TimeGrid(0.0, 2.0, 800)
        closed = evolve_o_operators(h, Ls, bath, grid)
        oracle = evolve_o_operators_double_integral(h, Ls, bath, grid)
        assert np.max(np.abs(closed.obars - oracle.obars)) < 1e-5

    def test_markov_limit_of_memory_kernel(self):
        # gamma -> infinity drives Obar to L/2; the error falls with gamma
        # and is below 5% at gamma = 100 for the weak reference couplings
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.01, 0.01)
        half = np.stack(markov_limit_dissipator(Ls).obars)
        errors = []
        for gamma in (10.0, 30.0, 100.0):
            grid = TimeGrid(0.0, 2.0, int(2.0 * gamma / 0.02))
            traj = evolve_o_operators(h, Ls, BathSpec(gamma, 0.01, 0.01), grid)
            errors.append(np.linalg.norm(traj.final.obars - half) / np.linalg.norm(half))
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 0.05


class TestMasterEquation:
    def test_closed_limit(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.0, 0.0)
        grid = TimeGrid(0.0, 5.0, 50)
        traj = propagate_master_equation(
            h, Ls, BathSpec(0.7, 0.0, 0.0), magnon_rho0(), grid, substeps=40, method="direct"
        )
        psi0 = basis_state(OPEN_LAYOUT, "m1")
        closed = sample_constant(h, psi0, grid.times)
        expected = np.einsum("ti,tj->tij", closed, closed.conj())
        assert np.max(np.abs(traj.rhos - expected)) < 1e-8

    def test_trace_and_hermiticity(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.2, 0.3)
        grid = TimeGrid(0.0, 8.0, 40)
        traj = propagate_master_equation(
            h, Ls, BathSpec(0.7, 0.2, 0.3), magnon_rho0(), grid, substeps=80, method="direct"
        )
        assert np.max(np.abs(traj.trace - 1.0)) < 1e-8
        herm = max(np.max(np.abs(r - r.conj().T)) for r in traj.rhos)
        assert herm < 1e-10

    def test_markov_matches_lindblad_oracle(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.2, 0.3)
        grid = TimeGrid(0.0, 5.0, 50)
        ours = propagate_master_equation(
            h, Ls, BathSpec(1.0, 0.2, 0.3, markov=True), magnon_rho0(), grid,
            substeps=40, method="direct",
        )
        oracle = propagate_lindblad(h, Ls, magnon_rho0(), grid)
        assert np.max(np.abs(ours.rhos - oracle.rhos)) < 1e-8

    def test_markov_excited_population_monotone(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.3, 0.2)
        grid = TimeGrid(0.0, 20.0, 100)
        traj = propagate_master_equation(
            h, Ls, BathSpec(1.0, 0.3, 0.2, markov=True), magnon_rho0(), grid,
            substeps=40, method="direct",
        )
        excited = np.einsum("tii->t", traj.rhos[:, 1:, 1:]).real
        assert np.all(np.diff(excited) <= 1e-12)

    def test_eigen_backend_matches_direct(self, revival_params):
        h = open_hamiltonian(revival_params)
        Ls = lowering_operators(0.01, 0.01)
        grid = TimeGrid(0.0, 2.0, 20)
        for markov in (False, True):
            bath = BathSpec(0.7, 0.01, 0.01, markov=markov)
            direct = propagate_master_equation(
                h, Ls, bath, magnon_rho0(), grid, substeps=100, method="direct"
            )
            eigen = propagate_master_equation(
                h, Ls, bath, magnon_rho0(), grid, substeps=20, method="eigen"
            )
            assert np.max(np.abs(direct.rhos - eigen.rhos)) < 5e-6

    def test_eigen_backend_mixed_state(self, rng):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.05, 0.02)
        a = rng.standard_normal((7, 7)) + 1j * rng.standard_normal((7, 7))
        rho0 = a @ a.conj().T
        rho0 /= np.trace(rho0).real
        grid = TimeGrid(0.0, 4.0, 20)
        bath = BathSpec(0.7, 0.05, 0.02)
        direct = propagate_master_equation(h, Ls, bath, rho0, grid, substeps=200, method="direct")
        eigen = propagate_master_equation(h, Ls, bath, rho0, grid, substeps=40, method="eigen")
        assert np.max(np.abs(direct.rhos - eigen.rhos)) < 1e-9

    def test_eigen_backend_requires_structure(self):
        h = open_hamiltonian(SOFT).matrix.copy()
        h[0, 1] = h[1, 0] = 0.1  # vacuum coupled: structure broken
        Ls = lowering_operators(0.1, 0.1)
        with pytest.raises(OpenSystemError):
            propagate_master_equation(
                h, Ls, BathSpec(0.7, 0.1, 0.1), magnon_rho0(), TimeGrid(0.0, 1.0, 10),
                method="eigen",
            )

    def test_positivity_warning(self):
        times = np.array([0.0, 1.0])
        rho = magnon_rho0()
        bad = rho.copy()
        bad[2, 2] = -1e-5
        bad[1, 1] = 1.0 + 1e-5
        with pytest.warns(UserWarning, match="positivity"):
            _diagnose(times, np.stack([rho, bad]))

    def test_unknown_method(self):
        with pytest.raises(OpenSystemError):
            propagate_master_equation(
                open_hamiltonian(SOFT), lowering_operators(0.1, 0.1),
                BathSpec(0.7, 0.1, 0.1), magnon_rho0(), TimeGrid(0.0, 1.0, 10),
                method="typo",
            )


class TestQSD:
    def test_decoupled_trajectories_follow_schroedinger(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.0, 0.0)
        grid = TimeGrid(0.0, 5.0, 25)
        qsd = propagate_qsd_trajectories(
            h, Ls, BathSpec(0.7, 0.0, 0.0), basis_state(OPEN_LAYOUT, "m1"), grid,
            n_traj=40, seed=3, substeps=20, n_batches=20,
        )
        psi = sample_constant(h, basis_state(OPEN_LAYOUT, "m1"), grid.times)
        expected = np.einsum("ti,tj->tij", psi, psi.conj())
        assert np.max(np.abs(qsd.rho_mean - expected)) < 1e-8
        assert np.max(qsd.rho_se) < 1e-12  # all trajectories identical

    def test_zero_noise_is_deterministic_decay(self):
        h = open_hamiltonian(SOFT)
        lam = 0.2
        Ls = lowering_operators(lam, lam)
        bath = BathSpec(1.0, lam, lam)
        grid = TimeGrid(0.0, 5.0, 25)
        qsd = propagate_qsd_trajectories(
            h, Ls, bath, basis_state(OPEN_LAYOUT, "m1"), grid,
            n_traj=20, seed=9, substeps=40, n_batches=20, zero_noise=True,
        )
        assert np.max(np.std(qsd.rho_batches, axis=0)) < 1e-14
        # drift-only trajectories lose norm: non-unitary decay
        final_trace = np.trace(qsd.rho_mean[-1]).real
        assert final_trace < 1.0 - 1e-3
        # matching the pure-state part of the master equation (vacuum feed
        # excluded by construction)
        me = propagate_master_equation(h, Ls, bath, magnon_rho0(), grid, substeps=40)
        assert np.max(np.abs(qsd.rho_mean[:, 1:, 1:] - me.rhos[:, 1:, 1:])) < 1e-6

    def test_seed_reproducibility(self):
        h = open_hamiltonian(SOFT)
        lam = 0.2
        Ls = lowering_operators(lam, lam)
        bath = BathSpec(1.0, lam, lam)
        grid = TimeGrid(0.0, 2.0, 10)
        kwargs = dict(n_traj=60, seed=77, substeps=20, n_batches=20)
        a = propagate_qsd_trajectories(h, Ls, bath, basis_state(OPEN_LAYOUT, "m1"), grid, **kwargs)
        b = propagate_qsd_trajectories(h, Ls, bath, basis_state(OPEN_LAYOUT, "m1"), grid, **kwargs)
        assert np.array_equal(a.rho_mean, b.rho_mean)
        assert np.array_equal(a.rho_batches, b.rho_batches)
        c = propagate_qsd_trajectories(
            h, Ls, bath, basis_state(OPEN_LAYOUT, "m1"), grid,
            n_traj=60, seed=78, substeps=20, n_batches=20,
        )
        assert not np.array_equal(a.rho_mean, c.rho_mean)

    def test_strong_coupling_agreement_with_master_equation(self):
        # strong coupling makes the dissipative signal dominate the
        # Monte-Carlo error, a sensitive consistency check
        h = open_hamiltonian(SOFT)
        lam = 0.3
        Ls = lowering_operators(lam, lam)
        bath = BathSpec(1.0, lam, lam)
        grid = TimeGrid(0.0, 6.0, 30)
        me = propagate_master_equation(h, Ls, bath, magnon_rho0(), grid, substeps=50, method="direct")
        qsd = propagate_qsd_trajectories(
            h, Ls, bath, basis_state(OPEN_LAYOUT, "m1"), grid,
            n_traj=600, seed=42, substeps=10, n_batches=20,
        )
        z = np.abs(qsd.rho_mean - me.rhos) / np.maximum(qsd.rho_se, 1e-9)
        assert z.max() < 3.0

    def test_markov_flag_rejected(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.1, 0.1)
        with pytest.raises(OpenSystemError):
            propagate_qsd_trajectories(
                h, Ls, BathSpec(1.0, 0.1, 0.1, markov=True),
                basis_state(OPEN_LAYOUT, "m1"), TimeGrid(0.0, 1.0, 10),
                n_traj=20, seed=1,
            )

    def test_batch_divisibility(self):
        h = open_hamiltonian(SOFT)
        Ls = lowering_operators(0.1, 0.1)
        with pytest.raises(OpenSystemError):
            propagate_qsd_trajectories(
                h, Ls, BathSpec(1.0, 0.1, 0.1), basis_state(OPEN_LAYOUT, "m1"),
                TimeGrid(0.0, 1.0, 10), n_traj=30, seed=1, n_batches=20,
            )


class TestControlledOpenDynamics:
    @pytest.fixture(scope="class")
    def optimized(self, request):
        params = EffectiveParams(omega_a=12.0, omega_b=1.0, omega_m=1.0, g_m=1.0, g_c=1.5, j_a=3.0)
        problem = ControlProblem(params=params, total_time=45.0, n_cells=450, j_target=5e-5)
        guess = constant_guess_field(problem.grid, lambda_a=(5.0, 5.0))
        return problem, krotov_optimize(problem, guess)

    def test_zero_coupling_reproduces_closed_loop(self, optimized):
        problem, result = optimized
        out = controlled_open_dynamics(problem, result.fields, BathSpec(2.0, 0.0, 0.0), substeps=6)
        assert out.final_concurrence == pytest.approx(result.final_concurrence, abs=5e-6)
        assert np.max(np.abs(out.trace - 1.0)) < 1e-10

    def test_fidelity_bounded_and_dissipation_hurts(self, optimized):
        problem, result = optimized
        out = controlled_open_dynamics(problem, result.fields, BathSpec(2.0, 0.1, 0.1), substeps=6)
        assert np.all(out.fidelity <= 1.0 + 1e-9)
        assert out.final_concurrence < result.final_concurrence
        assert np.max(np.abs(out.trace - 1.0)) < 1e-8
