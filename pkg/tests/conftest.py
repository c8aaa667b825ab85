"""Test configuration and fixtures."""

import numpy as np
import pytest

from spinlab.config import get_settings
from spinlab.core.executor import configure_executor
from spinlab.core.model import make_ising, validate_model
from spinlab.schemas import Boundary, CouplingSet, LatticeBox, ModelSpec, SiteMeasure


def build_model(
    dims=(8,),
    field=0j,
    boundary=Boundary.FREE,
    coupling=1.0,
    beta=1.0,
    measure: SiteMeasure | None = None,
    interaction_range=2,
):
    """Validated nearest-neighbour model with one coupling on every axis."""
    measure = measure or make_ising()
    vector = coupling if isinstance(coupling, tuple) else (float(coupling),)
    entries = {
        tuple(int(k == axis) for k in range(len(dims))): vector
        for axis in range(len(dims))
    }
    spec = ModelSpec(
        lattice=LatticeBox(dims=tuple(dims), boundary=boundary),
        measure=measure,
        couplings=CouplingSet(range=interaction_range, entries=entries),
        beta=beta,
        field=complex(field),
    )
    return validate_model(spec)


@pytest.fixture
def ising_chain():
    """Factory for Ising chains: ising_chain(length, field, boundary, coupling)."""

    def make(length=8, field=0j, boundary=Boundary.FREE, coupling=1.0, beta=1.0):
        return build_model((length,), field, boundary, coupling, beta)

    return make


@pytest.fixture
def model_factory():
    """Factory for general nearest-neighbour models."""
    return build_model


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(20240607)


@pytest.fixture
def test_settings():
    """Get test settings."""
    return get_settings()


@pytest.fixture(autouse=True)
def serial_executor():
    """Run every test on a single worker unless it asks for more."""
    configure_executor(1)
    yield
    configure_executor(1)
