import numpy as np
import pytest

from magnonlink.model import EffectiveParams


@pytest.fixture
def beat_params():
    """Weak-coupling beat regime: slow envelopes over t ~ 1e8."""
    return EffectiveParams(omega_a=1200.0, omega_b=1.0, omega_m=1.0, g_m=0.1, g_c=0.23, j_a=1.3)


@pytest.fixture
def branch_params():
    """Strong-coupling regime where all four envelope branches activate."""
    return EffectiveParams(omega_a=1200.0, omega_b=1.0, omega_m=1.0, g_m=1.0, g_c=12.0, j_a=30.0)


@pytest.fixture
def control_params():
    """Control testbed: moderate optical frequency, strong couplings."""
    return EffectiveParams(omega_a=12.0, omega_b=1.0, omega_m=1.0, g_m=1.0, g_c=1.5, j_a=3.0)


@pytest.fixture
def revival_params():
    """Dissipative-revival regime for the open-system runs."""
    return EffectiveParams(omega_a=1200.0, omega_b=1.0, omega_m=1.0, g_m=1.3, g_c=1.5, j_a=90.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
