import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magnonlink.model import (
    EffectiveParams,
    FullModelParams,
    ModelError,
    ResonanceSingularityError,
    EFFECTIVE_LAYOUT,
    FULL_LAYOUT,
    analytic_frequencies,
    build_effective_hamiltonian,
    build_full_hamiltonian,
    build_pq_effective_hamiltonian,
    compute_effective_coupling,
)

finite = st.floats(-5.0, 5.0, allow_nan=False)
positive = st.floats(0.1, 5.0, allow_nan=False)


def full_params(**overrides):
    base = dict(
        omega_a_prime=50.0, omega_b_prime=1.0, omega_m=1.0,
        delta_1=30.0, delta_2=40.0, Omega=1.0,
        g_mb=0.1, g_cb=1.0, g_ca=1.0, j_a=1.3,
    )
    base.update(overrides)
    return FullModelParams(**base)


class TestEffectiveCoupling:
    def test_direct_formula(self):
        p = full_params(g_ca=1.0, g_cb=1.0, Omega=1.0, delta_1=1.0, delta_2=2.0)
        assert compute_effective_coupling(p) == pytest.approx(1.0)

    def test_zero_pump(self):
        assert compute_effective_coupling(full_params(Omega=0.0)) == 0.0

    def test_resonance_singularity(self):
        p = full_params(delta_1=2.0, delta_2=2.0, Omega=2.0)
        with pytest.raises(ResonanceSingularityError):
            compute_effective_coupling(p)

    def test_alternate_convention(self):
        p = full_params(delta_1=1.0, delta_2=3.0, Omega=1.0, g_ca=2.0, g_cb=1.0)
        assert compute_effective_coupling(p, convention="d2d2") == pytest.approx(2.0 / 8.0)
        with pytest.raises(ModelError):
            compute_effective_coupling(p, convention="nope")

    @given(omega=st.floats(1e-4, 0.5))
    def test_odd_in_pump(self, omega):
        plus = compute_effective_coupling(full_params(Omega=omega))
        minus = compute_effective_coupling(full_params(Omega=-omega))
        assert minus == pytest.approx(-plus, rel=1e-12)


class TestFullHamiltonian:
    def test_magnon_microwave_entry(self):
        h = build_full_hamiltonian(full_params(g_mb=0.37))
        assert h.entry("m1", "b1") == pytest.approx(0.37)
        assert h.entry("m2", "b2") == pytest.approx(0.37)

    def test_decoupled_limit_is_diagonal(self):
        p = full_params(g_mb=0.0, g_cb=0.0, g_ca=0.0, Omega=0.0, j_a=0.0)
        h = build_full_hamiltonian(p).matrix
        assert np.allclose(h, np.diag(np.diag(h)))
        expected = [1.0, 1.0, 1.0, 1.0, 30.0, 30.0, 40.0, 40.0, 50.0, 50.0]
        assert np.allclose(np.diag(h).real, expected)

    def test_chain_couplings(self):
        h = build_full_hamiltonian(full_params())
        assert h.entry("b1", "atom1_1") == pytest.approx(1.0)   # g_cb
        assert h.entry("atom1_2", "atom2_2") == pytest.approx(1.0)  # Omega
        assert h.entry("atom2_1", "a1") == pytest.approx(1.0)   # g_ca
        assert h.entry("a1", "a2") == pytest.approx(1.3)        # j_a
        assert h.entry("m1", "a1") == 0.0

    @given(g_mb=finite, g_cb=finite, g_ca=finite, Omega=finite, j_a=finite)
    @settings(max_examples=50)
    def test_hermitian(self, g_mb, g_cb, g_ca, Omega, j_a):
        h = build_full_hamiltonian(
            full_params(g_mb=g_mb, g_cb=g_cb, g_ca=g_ca, Omega=Omega, j_a=j_a)
        ).matrix
        assert np.max(np.abs(h - h.conj().T)) <= 1e-12

    def test_validation(self):
        with pytest.raises(ModelError):
            full_params(delta_1=-1.0)
        with pytest.raises(ModelError):
            full_params(omega_a_prime=0.0)
        with pytest.raises(ModelError):
            full_params(g_mb=float("nan"))


# zero pattern of the printed six-mode matrix (ones mark allowed couplings)
CHAIN_PATTERN = np.array(
    [
        [1, 0, 1, 0, 0, 0],
        [0, 1, 0, 1, 0, 0],
        [1, 0, 1, 0, 1, 0],
        [0, 1, 0, 1, 0, 1],
        [0, 0, 1, 0, 1, 1],
        [0, 0, 0, 1, 1, 1],
    ],
    dtype=bool,
)


class TestEffectiveHamiltonian:
    def test_fiber_entry(self, beat_params):
        h = build_effective_hamiltonian(beat_params)
        assert h.entry("co1", "co2") == pytest.approx(1.3)

    def test_zero_pattern(self, beat_params):
        h = build_effective_hamiltonian(beat_params).matrix
        assert np.all(h[~CHAIN_PATTERN] == 0)

    def test_decoupled_optical_block(self, beat_params):
        p = EffectiveParams(
            omega_a=beat_params.omega_a, omega_b=1.0, omega_m=1.0,
            g_m=0.1, g_c=0.0, j_a=1.3,
        )
        h = build_effective_hamiltonian(p).matrix
        assert np.all(h[:4, 4:] == 0)
        assert np.all(h[4:, :4] == 0)

    def test_magnon_frequency_overrides(self, beat_params):
        h = build_effective_hamiltonian(beat_params, magnon_frequencies=(1.1, 0.9)).matrix
        base = build_effective_hamiltonian(beat_params).matrix
        assert h[0, 0] == 1.1 and h[1, 1] == 0.9
        mask = np.ones_like(base, dtype=bool)
        mask[0, 0] = mask[1, 1] = False
        assert np.array_equal(h[mask], base[mask])

    @given(g_m=finite, g_c=finite, j_a=finite, f1=finite, f2=finite)
    @settings(max_examples=50)
    def test_hermitian(self, g_m, g_c, j_a, f1, f2):
        p = EffectiveParams(omega_a=7.0, omega_b=1.0, omega_m=1.0, g_m=g_m, g_c=g_c, j_a=j_a)
        h = build_effective_hamiltonian(p, magnon_frequencies=(f1, f2)).matrix
        assert np.max(np.abs(h - h.conj().T)) <= 1e-12

    def test_layout(self, beat_params):
        assert build_effective_hamiltonian(beat_params).layout is EFFECTIVE_LAYOUT
        assert build_full_hamiltonian(full_params()).layout is FULL_LAYOUT


class TestReducedBlockHamiltonian:
    def test_printed_entries(self):
        p = EffectiveParams(omega_a=10.0, omega_b=1.0, omega_m=1.0, g_m=0.5, g_c=2.0, j_a=3.0)
        h = build_pq_effective_hamiltonian(p).matrix
        eps2 = p.g_c**2 / p.omega_a**2
        assert h[2, 0] == pytest.approx(p.g_m - eps2 * p.g_m)
        assert h[0, 2] == pytest.approx(p.g_m)
        assert h[2, 2] == pytest.approx(p.omega_m - eps2 * (p.omega_m + p.omega_a))
        assert h[2, 3] == pytest.approx(eps2 * p.j_a)
        assert not build_pq_effective_hamiltonian(p).hermitian

    def test_corrections_vanish_without_conversion(self):
        p = EffectiveParams(omega_a=10.0, omega_b=1.0, omega_m=1.0, g_m=0.5, g_c=0.0, j_a=3.0)
        h = build_pq_effective_hamiltonian(p).matrix
        assert np.max(np.abs(h - h.conj().T)) <= 1e-12
        assert h[2, 0] == pytest.approx(0.5)

    def test_quadratic_scaling(self):
        p1 = EffectiveParams(omega_a=10.0, omega_b=1.0, omega_m=1.0, g_m=0.5, g_c=2.0, j_a=3.0)
        p2 = EffectiveParams(omega_a=100.0, omega_b=1.0, omega_m=1.0, g_m=0.5, g_c=2.0, j_a=3.0)
        h1 = build_pq_effective_hamiltonian(p1).matrix
        h2 = build_pq_effective_hamiltonian(p2).matrix
        corr1 = h1[0, 2] - h1[2, 0]
        corr2 = h2[0, 2] - h2[2, 0]
        assert abs(corr1 / corr2) == pytest.approx(100.0, rel=1e-9)
        assert abs(h1[2, 3] / h2[2, 3]) == pytest.approx(100.0, rel=1e-9)

    def test_requires_matched_frequencies(self):
        p = EffectiveParams(omega_a=10.0, omega_b=1.1, omega_m=1.0, g_m=0.5, g_c=2.0, j_a=3.0)
        with pytest.raises(ModelError):
            build_pq_effective_hamiltonian(p)
        with pytest.raises(ModelError):
            analytic_frequencies(p)


# beat frequencies at the weak-coupling reference parameters, frozen from a
# 50-digit mpmath evaluation of the printed formulas (see the oracle below)
BEAT_FREQS = {
    "omega_1": -0.89997796325259464593,
    "omega_2": 1.0999779644349053541,
    "omega_3": -0.89997791548511500302,
    "omega_4": 1.0999779166884961081,
    "s_1": 288000.00170252741972,
    "s_2": 288000.0017328687913,
}


def mpmath_frequency_oracle(p: EffectiveParams) -> dict:
    import mpmath as mp

    mp.mp.dps = 50
    w, wa = mp.mpf(p.omega_m), mp.mpf(p.omega_a)
    g_m, g_c, j_a = mp.mpf(p.g_m), mp.mpf(p.g_c), mp.mpf(p.j_a)

    def s(sign):
        return mp.sqrt(g_c**4 * (sign * j_a + w + wa) ** 2 - 4 * g_c**2 * g_m**2 * wa**2
                       + 4 * g_m**2 * wa**4)

    s1, s2 = s(-1), s(1)
    return {
        "omega_1": (+g_c**2 * (w + wa - j_a) + s1 - 2 * w * wa**2) / (2 * wa**2),
        "omega_2": (-g_c**2 * (w + wa - j_a) + s1 + 2 * w * wa**2) / (2 * wa**2),
        "omega_3": (+g_c**2 * (w + wa + j_a) + s2 - 2 * w * wa**2) / (2 * wa**2),
        "omega_4": (-g_c**2 * (w + wa + j_a) + s2 + 2 * w * wa**2) / (2 * wa**2),
        "s_1": s1,
        "s_2": s2,
    }


class TestAnalyticFrequencies:
    def test_decoupled_limit(self):
        p = EffectiveParams(omega_a=1200.0, omega_b=1.0, omega_m=1.0, g_m=0.1, g_c=0.0, j_a=1.3)
        f = analytic_frequencies(p)
        assert f.omega_1 == pytest.approx(-0.9)
        assert f.omega_3 == pytest.approx(-0.9)
        assert f.omega_2 == pytest.approx(1.1)
        assert f.omega_4 == pytest.approx(1.1)

    def test_no_fiber_degeneracy(self, beat_params):
        p = EffectiveParams(omega_a=1200.0, omega_b=1.0, omega_m=1.0, g_m=0.1, g_c=0.23, j_a=0.0)
        f = analytic_frequencies(p)
        assert f.s_1 == pytest.approx(f.s_2, rel=1e-15)
        assert f.omega_1 == pytest.approx(f.omega_3, rel=1e-15)
        assert f.omega_2 == pytest.approx(f.omega_4, rel=1e-15)

    def test_against_high_precision_oracle(self, beat_params):
        oracle = mpmath_frequency_oracle(beat_params)
        f = analytic_frequencies(beat_params)
        for name, frozen in BEAT_FREQS.items():
            assert float(oracle[name]) == pytest.approx(frozen, rel=1e-15)
            assert getattr(f, name) == pytest.approx(frozen, rel=1e-13)

    @given(j_a=st.floats(0.1, 3.0), g_c=st.floats(0.0, 0.4), g_m=st.floats(0.01, 0.4))
    @settings(max_examples=40)
    def test_fiber_sign_swap(self, j_a, g_c, g_m):
        mk = lambda j: EffectiveParams(
            omega_a=1200.0, omega_b=1.0, omega_m=1.0, g_m=g_m, g_c=g_c, j_a=j
        )
        f_plus = analytic_frequencies(mk(j_a))
        f_minus = analytic_frequencies(mk(-j_a))
        assert f_plus.omega_1 == pytest.approx(f_minus.omega_3, rel=1e-12)
        assert f_plus.omega_2 == pytest.approx(f_minus.omega_4, rel=1e-12)

    def test_negative_radicand_rejected(self):
        p = EffectiveParams(omega_a=1.0, omega_b=1.0, omega_m=1.0, g_m=2.0, g_c=3.0, j_a=2.0)
        with pytest.raises(ModelError, match="radicand"):
            analytic_frequencies(p)
