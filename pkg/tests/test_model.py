"""Tests for spin models and their validation."""

import itertools
import math

import numpy as np
import pytest
from scipy import special

from spinlab.core.model import (
    build_bonds,
    hamiltonian,
    laplace_transform,
    make_ising,
    make_sphere_uniform,
    measure_from_config,
    random_ising_instance,
    reflect_field,
    reflection_sign,
    spec_from_config,
    tilted_site_measure,
    validate_model,
)
from spinlab.exceptions import (
    ConfigMismatch,
    ConfigParse,
    FerromagnetismViolation,
    RangeViolation,
    SymmetryViolation,
    UnsupportedDimension,
    ZeroNormalizer,
)
from spinlab.schemas import (
    Boundary,
    CouplingSet,
    LatticeBox,
    ModelConfig,
    ModelSpec,
    SiteMeasure,
)


def _spec(
    dims=(4,),
    boundary=Boundary.FREE,
    measure=None,
    entries=None,
    pairs=None,
    interaction_range=2,
    **kwargs,
):
    couplings = CouplingSet(
        range=interaction_range, entries=entries or {}, pairs=pairs or {}
    )
    return ModelSpec(
        lattice=LatticeBox(dims=dims, boundary=boundary),
        measure=measure or make_ising(),
        couplings=couplings,
        **kwargs,
    )


@pytest.mark.unit
def test_free_chain_bonds():
    """Test nearest-neighbour bonds of a free chain."""
    lattice = LatticeBox(dims=(4,))
    bonds = build_bonds(lattice, CouplingSet(entries={(1,): (1.0,)}))
    assert [(b.i, b.j) for b in bonds] == [(0, 1), (1, 2), (2, 3)]


@pytest.mark.unit
def test_periodic_chain_wraps():
    """Test that periodic chains close the ring."""
    lattice = LatticeBox(dims=(4,), boundary=Boundary.PERIODIC)
    bonds = build_bonds(lattice, CouplingSet(entries={(1,): (1.0,)}))
    assert (0, 3) in [(b.i, b.j) for b in bonds]
    assert len(bonds) == 4


@pytest.mark.unit
def test_short_ring_accumulates():
    """Test that a ring of length two carries both offsets on one bond."""
    lattice = LatticeBox(dims=(2,), boundary=Boundary.PERIODIC)
    bonds = build_bonds(lattice, CouplingSet(entries={(1,): (0.75,)}))
    assert len(bonds) == 1
    assert bonds[0].coupling == (1.5,)


@pytest.mark.unit
def test_negative_offset_is_canonical():
    """Test that an offset and its negative describe the same bonds."""
    a = CouplingSet(entries={(-1, 0): (1.0,)})
    b = CouplingSet(entries={(1, 0): (1.0,)})
    assert a.entries == b.entries


@pytest.mark.unit
def test_explicit_pair_replaces_offset():
    """Test that explicit pairs override offset couplings."""
    lattice = LatticeBox(dims=(3,))
    couplings = CouplingSet(entries={(1,): (1.0,)}, pairs={((1,), (0,)): (0.25,)})
    bonds = {(b.i, b.j): b.coupling for b in build_bonds(lattice, couplings)}
    assert bonds == {(0, 1): (0.25,), (1, 2): (1.0,)}


@pytest.mark.unit
def test_ferromagnetism_violation():
    """Test rejection of J^1 < sum |J^k|."""
    spec = _spec(measure=make_sphere_uniform(2, 8), entries={(1,): (0.5, 1.0)})
    with pytest.raises(FerromagnetismViolation):
        validate_model(spec)


@pytest.mark.unit
def test_range_violation():
    """Test rejection of couplings at or beyond the range."""
    spec = _spec(entries={(2,): (1.0,)})
    with pytest.raises(RangeViolation):
        validate_model(spec)


@pytest.mark.unit
def test_longer_range_accepted():
    """Test that a larger range admits next-nearest neighbours."""
    model = validate_model(_spec(entries={(2,): (1.0,)}, interaction_range=3))
    assert [(b.i, b.j) for b in model.bonds] == [(0, 2), (1, 3)]


@pytest.mark.unit
def test_symmetry_violation():
    """Test rejection of a measure that is not flip invariant."""
    measure = SiteMeasure(points=[1.0, -1.0], weights=[1.0, 2.0])
    with pytest.raises(SymmetryViolation):
        validate_model(_spec(measure=measure))


@pytest.mark.unit
def test_offset_dimension_mismatch():
    """Test rejection of offsets of the wrong dimension."""
    with pytest.raises(ConfigMismatch):
        validate_model(_spec(entries={(1, 0): (1.0,)}))


@pytest.mark.unit
def test_coupling_component_mismatch():
    """Test rejection of J vectors of the wrong length."""
    with pytest.raises(ConfigMismatch):
        validate_model(_spec(entries={(1,): (1.0, 0.0)}))


@pytest.mark.unit
def test_hamiltonian_ising():
    """Test the pair energy of an Ising chain."""
    model = validate_model(_spec(entries={(1,): (1.0,)}))
    assert hamiltonian([1, 1, 1, 1], model) == -3.0
    assert hamiltonian([1, -1, 1, -1], model) == 3.0
    assert hamiltonian({(0,): 1, (1,): 1, (2,): -1, (3,): -1}, model) == -1.0


@pytest.mark.unit
def test_hamiltonian_rejects_bad_config():
    """Test that configs must match the lattice and the atoms."""
    model = validate_model(_spec(entries={(1,): (1.0,)}))
    with pytest.raises(ConfigMismatch):
        hamiltonian([1, 1, 1], model)
    with pytest.raises(ConfigMismatch):
        hamiltonian([1, 1, 1, 0.5], model)


@pytest.mark.unit
def test_laplace_transform_ising():
    """Test the Ising transform 2 cosh z."""
    z = 0.4 + 1.1j
    assert laplace_transform(make_ising(), z) == pytest.approx(2 * np.cosh(z), rel=1e-14)


@pytest.mark.unit
def test_laplace_transform_circle_bessel():
    """Test the circle transform against I_0."""
    measure = make_sphere_uniform(2, 64)
    assert laplace_transform(measure, 1.0).real == pytest.approx(
        special.i0(1.0), rel=1e-12
    )
    assert laplace_transform(measure, 1.0).real == pytest.approx(1.2660658777520082, rel=1e-12)


@pytest.mark.unit
def test_tilted_measure_normalized():
    """Test that tilted weights sum to one at complex w."""
    tilted = tilted_site_measure(make_sphere_uniform(2, 12), 0.7 - 0.3j)
    assert tilted.weights.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.unit
def test_tilted_measure_large_field():
    """Test that tilting at large Re w does not overflow."""
    tilted = tilted_site_measure(make_ising(), 800.0)
    assert tilted.weights[0] == pytest.approx(1.0)


@pytest.mark.unit
def test_zero_normalizer():
    """Test the Ising normalizer zero at w = i pi / 2."""
    with pytest.raises(ZeroNormalizer):
        tilted_site_measure(make_ising(), 0.5j * math.pi)


@pytest.mark.unit
def test_sphere_quadrature():
    """Test Lebedev points on S^2."""
    measure = make_sphere_uniform(3, 6)
    points = np.asarray(measure.points)
    assert measure.atom_count >= 6
    assert np.allclose(np.linalg.norm(points, axis=1), 1.0)
    assert sum(measure.weights) == pytest.approx(1.0)
    validate_model(_spec(measure=measure))


@pytest.mark.unit
def test_circle_needs_multiple_of_four():
    """Test that circle rules must be symmetric."""
    with pytest.raises(SymmetryViolation):
        make_sphere_uniform(2, 6)


@pytest.mark.unit
def test_unsupported_dimension():
    """Test that only N=2,3 sphere rules exist."""
    with pytest.raises(UnsupportedDimension):
        make_sphere_uniform(4, 8)


@pytest.mark.unit
def test_reflect_field():
    """Test the h -> -h map and its sign."""
    spec = _spec(field=-0.5 + 0.25j)
    assert reflect_field(spec).field == 0.5 - 0.25j
    assert reflection_sign([1, 1]) == 1
    assert reflection_sign([1, 1, 1]) == -1
    assert reflection_sign([2, 1]) == -1


@pytest.mark.unit
def test_measure_from_config():
    """Test named measures."""
    assert measure_from_config("ising") == make_ising()
    assert measure_from_config("circle:8").atom_count == 8
    with pytest.raises(ConfigParse):
        measure_from_config("potts:3")


@pytest.mark.unit
def test_spec_from_config():
    """Test translation of a model table."""
    config = ModelConfig(
        dims=[3, 3],
        boundary="periodic",
        field_re=0.5,
        field_im=-1.0,
        couplings={"1,0": 1.0, "0,1": 0.5},
        pairs=[{"x": [0, 0], "y": [0, 1], "J": 2.0}],
    )
    spec = spec_from_config(config)
    assert spec.field == 0.5 - 1.0j
    assert spec.couplings.entries == {(1, 0): (1.0,), (0, 1): (0.5,)}
    assert spec.couplings.pairs == {((0, 0), (0, 1)): (2.0,)}


@pytest.mark.unit
def test_random_instances_reproducible():
    """Test that one seed gives one instance suite."""
    lattice = LatticeBox(dims=(3, 3), boundary=Boundary.PERIODIC)
    first = random_ising_instance(lattice, np.random.default_rng(5))
    second = random_ising_instance(lattice, np.random.default_rng(5))
    assert first == second

    model = validate_model(first)
    assert len(model.bonds) == 18
    assert all(0.1 <= bond.coupling[0] <= 1.0 for bond in model.bonds)


@pytest.mark.unit
def test_hamiltonian_flip_invariance_ising(rng):
    """Test H(-phi) = H(phi) on every configuration of a random 2x2 torus."""
    lattice = LatticeBox(dims=(2, 2), boundary=Boundary.PERIODIC)
    model = validate_model(random_ising_instance(lattice, rng))
    for config in itertools.product([1, -1], repeat=4):
        flipped = [-s for s in config]
        assert hamiltonian(flipped, model) == pytest.approx(hamiltonian(config, model), abs=1e-15)


@pytest.mark.unit
def test_hamiltonian_flip_invariance_rotor():
    """Test H(-phi) = H(phi) for plane rotors with an anisotropic coupling."""
    measure = make_sphere_uniform(2, 8)
    model = validate_model(_spec(dims=(3,), measure=measure, entries={(1,): (1.0, 0.5)}))
    atoms = [tuple(p) for p in measure.points]
    for config in itertools.product(atoms, repeat=3):
        flipped = [tuple(-c for c in atom) for atom in config]
        assert hamiltonian(flipped, model) == pytest.approx(hamiltonian(config, model), abs=1e-14)


@pytest.mark.unit
@pytest.mark.parametrize("z", [0.4 + 1.1j, -0.7 + 0.3j, 2.5 - 3.0j])
@pytest.mark.parametrize(
    "measure",
    [make_ising(), make_sphere_uniform(2, 16), make_sphere_uniform(3, 6)],
    ids=["ising", "circle", "sphere"],
)
def test_laplace_transform_conjugation(measure, z):
    """Test transform(conj z) = conj transform(z) for real atoms and weights."""
    assert laplace_transform(measure, z.conjugate()) == pytest.approx(
        laplace_transform(measure, z).conjugate(), rel=1e-14
    )


@pytest.mark.unit
@pytest.mark.parametrize("w", [0.05, 0.5, 1.0, 3.0, 20.0])
def test_tilted_ising_mean(w):
    """Test that the tilted Ising mean is tanh(w)."""
    tilted = tilted_site_measure(make_ising(), w)
    mean = complex(tilted.points[:, 0] @ tilted.weights)
    assert abs(mean - math.tanh(w)) <= 1e-14


@pytest.mark.unit
def test_tilted_ising_weights_at_one():
    """Test weights e / (e + 1/e) and 1 / e / (e + 1/e) at w = 1."""
    tilted = tilted_site_measure(make_ising(), 1.0)
    up = int(np.argmax(tilted.points[:, 0]))
    e = math.e
    assert tilted.weights[up] == pytest.approx(e / (e + 1 / e), rel=1e-14)
    assert tilted.weights[1 - up] == pytest.approx((1 / e) / (e + 1 / e), rel=1e-14)
    assert tilted.weights[up].real == pytest.approx(0.8808, abs=1e-4)
    assert tilted.weights[1 - up].real == pytest.approx(0.1192, abs=1e-4)
