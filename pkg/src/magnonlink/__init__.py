"""Remote entanglement generation between magnon modes in fiber-coupled
dual-mode cavities.

Subpackages cover the single-excitation Hamiltonian models, closed-system
propagation and analytic beat amplitudes, magnon-magnon concurrence with
analytic envelopes, Krotov optimal control of the magnon frequencies, and
non-Markovian open-system dynamics with a quantum-state-diffusion oracle.
"""

from magnonlink.model import (
    BasisLayout,
    EffectiveParams,
    FullModelParams,
    HamiltonianMatrix,
    AnalyticFrequencies,
    EFFECTIVE_LAYOUT,
    FULL_LAYOUT,
    OPEN_LAYOUT,
    build_effective_hamiltonian,
    build_full_hamiltonian,
    build_pq_effective_hamiltonian,
    compute_effective_coupling,
    analytic_frequencies,
)
from magnonlink.dynamics import (
    StateVector,
    TimeGrid,
    Trajectory,
    propagate_constant,
    propagate_timedep,
    sample_constant,
    analytic_magnon_amplitudes,
    validate_adiabatic_elimination,
)
from magnonlink.entanglement import (
    EnvelopeSample,
    concurrence_pure,
    concurrence_wootters,
    reduce_to_magnons,
    envelope_sample,
    envelope_series,
)
from magnonlink.control import (
    ControlField,
    ControlProblem,
    ControlResult,
    bell_target,
    evaluate_functional,
    backward_propagate,
    krotov_update_step,
    krotov_optimize,
)
from magnonlink.opensys import (
    BathSpec,
    DensityMatrix,
    OOperatorState,
    ou_kernel,
    lowering_operators,
    evolve_o_operators,
    markov_limit_dissipator,
    propagate_master_equation,
    propagate_qsd_trajectories,
    controlled_open_dynamics,
)

__version__ = "0.1.0"
