import math

import pytest

from stochstab.operators import EigenSpectrum, SpectrumKind, biharmonic_hinged_spectrum, heat_spectrum
from stochstab.sde_engine import StateVector

PI2 = math.pi ** 2
PI4 = math.pi ** 4


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch, tmp_path):
    """Keep every test off the developer's .env and output directory."""
    for key in ("STOCHSTAB_SEED", "STOCHSTAB_WORKERS", "STOCHSTAB_LOG_LEVEL"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("STOCHSTAB_OUT_DIR", str(tmp_path / "env_output"))


@pytest.fixture
def heat1():
    return heat_spectrum(1)


@pytest.fixture
def biharmonic1():
    return biharmonic_hinged_spectrum(1)


@pytest.fixture
def unit_state():
    return StateVector([1.0])


def single_mode(lambda_k: float) -> EigenSpectrum:
    return EigenSpectrum(kind=SpectrumKind.HEAT, eigenvalues=(lambda_k,))
