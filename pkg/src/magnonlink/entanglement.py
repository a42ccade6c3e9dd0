"""Magnon-magnon concurrence and the analytic beat-envelope branches.

In the single-excitation subspace each magnon acts as a qubit.  Reduction
to the magnon pair gives an X-form two-qubit state whose concurrence for a
pure state collapses to 2 |p1 p2|; the general Wootters construction is
kept as the mixed-state path and as a cross-check oracle of the shortcut.

The envelope branches ev1..ev4 bound the fast concurrence oscillation; the
region test separating the (ev1, ev2) pair from the (ev3, ev4) pair follows
the printed conditions, with the cosecant product guarded conservatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from magnonlink.model import BasisLayout, EffectiveParams
from magnonlink.dynamics import StateVector

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
# positivity floor of the leading-order master equation (not completely
# positive); reduced states inherit its small transient negativity
EIGENVALUE_FLOOR = -1e-6
REGION_EQUALITY_TOL = 1e-9
CSC_GUARD = 1e-12


class EntanglementError(ValueError):
    """Invalid two-qubit state or layout mismatch."""


@dataclass(frozen=True)
class TwoQubitDensity:
    """4x4 density matrix in the (|00>, |01>, |10>, |11>) product basis."""

    matrix: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", rho)
        if rho.shape != (4, 4):
            raise EntanglementError(f"two-qubit density matrix must be 4x4, got {rho.shape}")
        defect = np.max(np.abs(rho - rho.conj().T))
        if defect > HERMITICITY_TOL:
            raise EntanglementError(f"density matrix not hermitian: defect {defect:.3e}")
        trace = np.trace(rho).real
        if abs(trace - 1.0) > TRACE_TOL:
            raise EntanglementError(f"trace {trace} deviates from 1 beyond {TRACE_TOL}")
        min_eig = float(np.min(np.linalg.eigvalsh(rho)))
        if min_eig < EIGENVALUE_FLOOR:
            raise EntanglementError(
                f"negative eigenvalue {min_eig:.3e} below tolerance {EIGENVALUE_FLOOR}"
            )


def concurrence_pure(p1: complex, p2: complex) -> float:
    """Concurrence of the single-excitation pure state with magnon
    amplitudes p1, p2: C = 2 |p1| |p2|."""
    occupancy = abs(p1) ** 2 + abs(p2) ** 2
    if occupancy > 1.0 + TRACE_TOL:
        raise EntanglementError(f"magnon amplitudes exceed unit norm: {occupancy}")
    return 2.0 * abs(p1) * abs(p2)


def _magnon_rest_map(layout: BasisLayout) -> list[tuple[int, int, int]]:
    """Map each basis index to (n_m1, n_m2, rest-id).

    Vacuum-of-the-rest is rest-id 0, shared by the vacuum label (when
    present) and both magnon excitations; every non-magnon excitation gets
    its own rest-id.
    """
    for label in ("m1", "m2"):
        if label not in layout.labels:
            raise EntanglementError(f"layout {layout.labels} lacks magnon label {label!r}")
    mapping = []
    next_rest = 1
    for label in layout.labels:
        if label == "m1":
            mapping.append((1, 0, 0))
        elif label == "m2":
            mapping.append((0, 1, 0))
        elif label == "vac":
            mapping.append((0, 0, 0))
        else:
            mapping.append((0, 0, next_rest))
            next_rest += 1
    return mapping


def reduce_to_magnons(
    state: StateVector | np.ndarray,
    layout: BasisLayout | None = None,
) -> TwoQubitDensity:
    """Partial trace over all non-magnon modes.

    Accepts a pure ``StateVector`` or a density matrix over a layout whose
    labels include m1 and m2 (the open-system layout prepends a vacuum).
    The |11> sector is unreachable with at most one excitation, so its row
    and column are zero.
    """
    if isinstance(state, StateVector):
        rho_full = np.outer(state.amplitudes, state.amplitudes.conj())
        layout = state.layout
    else:
        rho_full = np.asarray(state, dtype=complex)
        if layout is None:
            raise EntanglementError("a layout is required when passing a raw density matrix")
        if rho_full.shape != (layout.size, layout.size):
            raise EntanglementError(
                f"density matrix shape {rho_full.shape} does not match layout size {layout.size}"
            )

    mapping = _magnon_rest_map(layout)
    qubit_index = {(0, 0): 0, (0, 1): 1, (1, 0): 2, (1, 1): 3}
    rho = np.zeros((4, 4), dtype=complex)
    for i, (n1_i, n2_i, rest_i) in enumerate(mapping):
        for j, (n1_j, n2_j, rest_j) in enumerate(mapping):
            if rest_i == rest_j:
                rho[qubit_index[(n1_i, n2_i)], qubit_index[(n1_j, n2_j)]] += rho_full[i, j]
    return TwoQubitDensity(rho)


_Y_TENSOR_Y = np.array(
    [
        [0, 0, 0, -1],
        [0, 0, 1, 0],
        [0, 1, 0, 0],
        [-1, 0, 0, 0],
    ],
    dtype=complex,
)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a hermitian near-PSD matrix, clamping tiny negative
    eigenvalues (the leading-order master equation is not completely
    positive) to zero."""
    evals, evecs = np.linalg.eigh(mat)
    evals = np.where(evals < 0, 0.0, evals)
    return (evecs * np.sqrt(evals)) @ evecs.conj().T


def concurrence_wootters(rho: TwoQubitDensity) -> float:
    """Wootters concurrence C = max(0, l1 - l2 - l3 - l4), with l_k the
    descending square roots of the eigenvalues of rho (Y x Y) rho* (Y x Y).

    Evaluated through the equivalent hermitian form: the l_k are the
    singular values of sqrt(rho_tilde) sqrt(rho), which keeps full
    precision where the plain non-hermitian eigensolve loses digits.
    """
    m = rho.matrix
    rho_tilde = _Y_TENSOR_Y @ m.conj() @ _Y_TENSOR_Y
    lams = np.linalg.svd(
        _psd_sqrt(rho_tilde) @ _psd_sqrt(m), compute_uv=False
    )
    lams = np.sort(lams)[::-1]
    return float(max(0.0, lams[0] - lams[1] - lams[2] - lams[3]))


@dataclass(frozen=True)
class EnvelopeSample:
    """Envelope branch values at one time.

    When phi1 is defined the active branches are ev1 = sqrt(|phi1|)/2 and
    ev2 = min(|phi2|, |phi3|); otherwise ev3 = |phi2| and ev4 = |phi3|.
    Phi = max(cos^2, sin^2) of the slow argument bounds all branches.
    """

    t: float
    phi1_defined: bool
    phi1: float
    phi2: float
    phi3: float
    Phi: float
    branches: dict[str, float]

    @property
    def active_bound(self) -> float:
        return max(self.branches.values())


def envelope_sample(p: EffectiveParams, t: float) -> EnvelopeSample:
    """Evaluate the envelope branch structure at time t.

    Arguments of the printed formulas: theta = g_c^2 j_a t / omega_a^2 (the
    fiber-induced splitting), half = g_c^4 j_a t / (4 g_m omega_a^3) (the
    slow splitting), and the cosecant arguments 2*half*2 -+ theta.
    """
    for name in ("g_m", "omega_a", "j_a", "g_c"):
        if getattr(p, name) == 0:
            raise EntanglementError(f"envelope formulas require nonzero {name}")
    g_m, g_c, j_a, wa = p.g_m, p.g_c, p.j_a, p.omega_a

    theta = g_c**2 * j_a * t / wa**2
    half = g_c**4 * j_a * t / (4 * g_m * wa**3)
    csc_arg_minus = g_c**2 * j_a * t * (g_c**2 - 2 * g_m * wa) / (2 * g_m * wa**3)
    csc_arg_plus = g_c**2 * j_a * t * (g_c**2 + 2 * g_m * wa) / (2 * g_m * wa**3)

    phi2 = math.sin(theta) * math.cos(half) ** 2
    phi3 = math.sin(theta) * math.sin(half) ** 2
    big_phi = max(math.cos(half) ** 2, math.sin(half) ** 2)

    sin_minus = math.sin(csc_arg_minus)
    sin_plus = math.sin(csc_arg_plus)
    singular = abs(sin_minus) < CSC_GUARD or abs(sin_plus) < CSC_GUARD

    # region disjunction outside which phi1 is defined
    cos_equal = abs(math.cos(4 * half) - math.cos(2 * theta)) <= REGION_EQUALITY_TOL
    if singular:
        csc_gap_large = True  # diverging cosecant; treat as outside the phi1 region
    else:
        csc_gap_large = abs((1 / sin_minus - 1 / sin_plus) * math.sin(theta)) > 2.0
    phi1_defined = not (cos_equal or csc_gap_large)

    if phi1_defined and not singular:
        phi1 = (
            math.cos(theta) ** 2
            * math.sin(2 * half) ** 4
            / (sin_minus * sin_plus)
        )
        branches = {"ev1": math.sqrt(abs(phi1)) / 2, "ev2": min(abs(phi2), abs(phi3))}
    else:
        phi1_defined = False
        phi1 = math.nan
        branches = {"ev3": abs(phi2), "ev4": abs(phi3)}

    return EnvelopeSample(
        t=float(t),
        phi1_defined=phi1_defined,
        phi1=phi1,
        phi2=phi2,
        phi3=phi3,
        Phi=big_phi,
        branches=branches,
    )


def envelope_series(p: EffectiveParams, times: np.ndarray) -> list[EnvelopeSample]:
    """Envelope samples over an array of times."""
    return [envelope_sample(p, float(t)) for t in np.asarray(times, dtype=float)]
