"""Single-excitation Hamiltonian models for the fiber-coupled dual-mode
cavity-magnon chain.

Two magnon modes sit in remote cavities.  Each cavity supports a microwave
mode (coupled to its magnon) and an optical mode; a pumped three-level
converter mediates an effective microwave-optical coupling, and the optical
modes of the two cavities are joined by a fiber.  Everything here is
restricted to the single-excitation subspace, so Hamiltonians are small
dense complex matrices.

All quantities are dimensionless, in units of the microwave frequency
(omega_b = omega_m = 1 in the reference parameter sets).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HERMITICITY_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model parameters or a regime outside the approximations."""


class ResonanceSingularityError(ModelError):
    """Converter detuning product hits the pump resonance (zero denominator)."""


@dataclass(frozen=True)
class BasisLayout:
    """Ordered labels of a single-excitation basis.

    The ordering is frozen so that matrix entries stay citable against the
    printed matrices; do not reorder.
    """

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ModelError(f"duplicate basis labels: {self.labels}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"label {label!r} not in layout {self.labels}") from None


#: 6-dim effective layout: magnons, microwave cavity modes, optical cavity modes.
EFFECTIVE_LAYOUT = BasisLayout(("m1", "m2", "cm1", "cm2", "co1", "co2"))

#: 10-dim full layout: magnons, microwave modes, converter levels |1> and |2|
#: per cavity, optical modes.
FULL_LAYOUT = BasisLayout(
    ("m1", "m2", "b1", "b2", "atom1_1", "atom1_2", "atom2_1", "atom2_2", "a1", "a2")
)

#: 7-dim open-system layout: vacuum prepended to the effective layout so
#: lowering operators stay inside the space.
OPEN_LAYOUT = BasisLayout(("vac",) + EFFECTIVE_LAYOUT.labels)


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ModelError(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class FullModelParams:
    """Parameters of the full ten-level single-excitation model.

    omega_a_prime, omega_b_prime, omega_m are the optical, microwave and
    magnon frequencies; delta_1, delta_2 the converter level energies;
    Omega the pump strength; g_mb, g_cb, g_ca the magnon-microwave,
    converter-microwave and converter-optical couplings; j_a the fiber
    coupling.
    """

    omega_a_prime: float
    omega_b_prime: float
    omega_m: float
    delta_1: float
    delta_2: float
    Omega: float
    g_mb: float
    g_cb: float
    g_ca: float
    j_a: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            _require_finite(name, getattr(self, name))
        if self.omega_a_prime <= 0:
            raise ModelError("omega_a_prime must be positive")
        if self.delta_1 <= 0 or self.delta_2 <= 0:
            raise ModelError("converter level energies delta_1, delta_2 must be positive")


@dataclass(frozen=True)
class EffectiveParams:
    """Parameters of the six-mode effective chain m-b-a-a-b-m.

    g_c is the converter-mediated microwave-optical coupling; the expansion
    parameter of the beat analysis is 1/omega_a.
    """

    omega_a: float
    omega_b: float
    omega_m: float
    g_m: float
    g_c: float
    j_a: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            _require_finite(name, getattr(self, name))
        if self.omega_a <= 0:
            raise ModelError("omega_a must be positive")


@dataclass(frozen=True)
class HamiltonianMatrix:
    """Dense complex Hamiltonian over an ordered single-excitation basis."""

    matrix: np.ndarray
    layout: BasisLayout
    hermitian: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelError(f"Hamiltonian must be square, got shape {m.shape}")
        if m.shape[0] != self.layout.size:
            raise ModelError(
                f"dimension {m.shape[0]} does not match layout size {self.layout.size}"
            )
        if self.hermitian:
            defect = np.max(np.abs(m - m.conj().T))
            if defect > HERMITICITY_TOL:
                raise ModelError(f"matrix flagged hermitian but |H - H^dag| = {defect:.3e}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def entry(self, row_label: str, col_label: str) -> complex:
        return self.matrix[self.layout.index(row_label), self.layout.index(col_label)]


@dataclass(frozen=True)
class AnalyticFrequencies:
    """The four beat frequencies and the two square-root terms they contain."""

    omega_1: float
    omega_2: float
    omega_3: float
    omega_4: float
    s_1: float
    s_2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.omega_1, self.omega_2, self.omega_3, self.omega_4])


def compute_effective_coupling(p: FullModelParams, convention: str = "d1d2") -> float:
    """Effective microwave-optical coupling from adiabatic elimination of the
    converter levels: g_c = g_ca * g_cb * Omega / (D - Omega^2).

    D is the converter detuning product.  The printed formula uses an
    undefined third detuning; ``convention`` selects the product:
    "d1d2" (default) uses delta_1 * delta_2, "d2d2" uses delta_2 ** 2.
    """
    if convention == "d1d2":
        detuning_product = p.delta_1 * p.delta_2
    elif convention == "d2d2":
        detuning_product = p.delta_2 * p.delta_2
    else:
        raise ModelError(f"unknown detuning-product convention {convention!r}")
    denom = detuning_product - p.Omega**2
    if abs(denom) <= 1e-12:
        raise ResonanceSingularityError(
            f"detuning product {detuning_product} equals Omega^2 = {p.Omega**2}"
        )
    return p.g_ca * p.g_cb * p.Omega / denom


def build_full_hamiltonian(p: FullModelParams) -> HamiltonianMatrix:
    """Ten-dimensional single-excitation restriction of the full model.

    Diagonal: (omega_m, omega_m, omega_b', omega_b', delta_1, delta_1,
    delta_2, delta_2, omega_a', omega_a').  Couplings: g_mb on (m_i, b_i),
    g_cb on (b_i, atom1_i), Omega on (atom1_i, atom2_i), g_ca on
    (atom2_i, a_i) and j_a on (a_1, a_2).
    """
    h = np.zeros((10, 10), dtype=complex)
    diag = [
        p.omega_m, p.omega_m,
        p.omega_b_prime, p.omega_b_prime,
        p.delta_1, p.delta_1,
        p.delta_2, p.delta_2,
        p.omega_a_prime, p.omega_a_prime,
    ]
    np.fill_diagonal(h, diag)

    def couple(i, j, g):
        h[i, j] = g
        h[j, i] = g

    for cav in (0, 1):
        couple(0 + cav, 2 + cav, p.g_mb)   # m_i <-> b_i
        couple(2 + cav, 4 + cav, p.g_cb)   # b_i <-> |1>_i
        couple(4 + cav, 6 + cav, p.Omega)  # |1>_i <-> |2>_i
        couple(6 + cav, 8 + cav, p.g_ca)   # |2>_i <-> a_i
    couple(8, 9, p.j_a)                    # a_1 <-> a_2
    return HamiltonianMatrix(h, FULL_LAYOUT, hermitian=True)


def build_effective_hamiltonian(
    p: EffectiveParams,
    magnon_frequencies: tuple[float, float] | None = None,
) -> HamiltonianMatrix:
    """Six-dimensional effective chain Hamiltonian.

    ``magnon_frequencies``, when given, replaces the two magnon diagonal
    entries (the control scheme modulates them as f_1(t), f_2(t)); all
    other entries are unchanged.
    """
    f1, f2 = (p.omega_m, p.omega_m) if magnon_frequencies is None else magnon_frequencies
    g_m, g_c, j_a = p.g_m, p.g_c, p.j_a
    h = np.array(
        [
            [f1, 0, g_m, 0, 0, 0],
            [0, f2, 0, g_m, 0, 0],
            [g_m, 0, p.omega_b, 0, g_c, 0],
            [0, g_m, 0, p.omega_b, 0, g_c],
            [0, 0, g_c, 0, p.omega_a, j_a],
            [0, 0, 0, g_c, j_a, p.omega_a],
        ],
        dtype=complex,
    )
    return HamiltonianMatrix(h, EFFECTIVE_LAYOUT, hermitian=True)


def _require_equal_mw_frequencies(p: EffectiveParams):
    if abs(p.omega_m - p.omega_b) > 1e-12:
        raise ModelError(
            "the reduced magnon-microwave description assumes omega_m = omega_b, "
            f"got omega_m={p.omega_m}, omega_b={p.omega_b}"
        )


def build_pq_effective_hamiltonian(p: EffectiveParams) -> HamiltonianMatrix:
    """Non-hermitian 4x4 Hamiltonian for the magnon/microwave block after the
    optical modes are integrated out, keeping the 1/omega_a^2 corrections.

    Requires omega_m = omega_b (the rotation that removes the optical block
    assumes it).  The corrections are asymmetric, so the hermitian flag is
    unset.
    """
    _require_equal_mw_frequencies(p)
    w, wa, g_m, g_c, j_a = p.omega_m, p.omega_a, p.g_m, p.g_c, p.j_a
    eps2 = g_c**2 / wa**2
    h = np.array(
        [
            [w, 0, g_m, 0],
            [0, w, 0, g_m],
            [g_m - eps2 * g_m, 0, w - eps2 * (w + wa), eps2 * j_a],
            [0, g_m - eps2 * g_m, eps2 * j_a, w - eps2 * (w + wa)],
        ],
        dtype=complex,
    )
    return HamiltonianMatrix(h, BasisLayout(("m1", "m2", "cm1", "cm2")), hermitian=False)


def analytic_frequencies(p: EffectiveParams) -> AnalyticFrequencies:
    """The four oscillation frequencies of the magnon amplitudes.

    omega_{1,2} = [+- g_c^2 (omega_m + omega_a -+ j_a) + s_1 -+ 2 omega_m omega_a^2] / (2 omega_a^2)
    with s_1 the square root using -j_a; omega_{3,4} and s_2 use +j_a.

    Requires omega_m = omega_b; a negative radicand means the parameters sit
    outside the weak-coupling expansion and raises ``ModelError``.
    """
    _require_equal_mw_frequencies(p)
    w, wa, g_m, g_c, j_a = p.omega_m, p.omega_a, p.g_m, p.g_c, p.j_a

    def s_term(sign: float) -> float:
        radicand = (
            g_c**4 * (sign * j_a + w + wa) ** 2
            - 4 * g_c**2 * g_m**2 * wa**2
            + 4 * g_m**2 * wa**4
        )
        if radicand < 0:
            raise ModelError(
                f"negative radicand {radicand:.6e} in the beat-frequency square root; "
                "parameters outside the validity of the expansion"
            )
        return math.sqrt(radicand)

    s_1 = s_term(-1.0)
    s_2 = s_term(+1.0)
    two_wa2 = 2 * wa**2
    omega_1 = (+g_c**2 * (w + wa - j_a) + s_1 - 2 * w * wa**2) / two_wa2
    omega_2 = (-g_c**2 * (w + wa - j_a) + s_1 + 2 * w * wa**2) / two_wa2
    omega_3 = (+g_c**2 * (w + wa + j_a) + s_2 - 2 * w * wa**2) / two_wa2
    omega_4 = (-g_c**2 * (w + wa + j_a) + s_2 + 2 * w * wa**2) / two_wa2
    return AnalyticFrequencies(omega_1, omega_2, omega_3, omega_4, s_1, s_2)
