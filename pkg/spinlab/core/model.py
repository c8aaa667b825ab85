"""Spin models: single-site measures, couplings, bonds and validation."""

from __future__ import annotations

import dataclasses
from collections.abc import Mapping, Sequence
from functools import cached_property
from typing import Any, NamedTuple

import numpy as np
import structlog
from pydantic import ValidationError
from scipy import integrate

from spinlab.config import get_settings
from spinlab.exceptions import (
    ConfigMismatch,
    ConfigParse,
    FerromagnetismViolation,
    InvalidSlots,
    RangeViolation,
    SymmetryViolation,
    UnsupportedDimension,
    ZeroNormalizer,
)
from spinlab.schemas import (
    CouplingSet,
    LatticeBox,
    MeasureAtoms,
    ModelConfig,
    ModelSpec,
    Site,
    SiteMeasure,
    as_site,
)

logger = structlog.get_logger(__name__)

# Atoms are matched up to this tolerance by the symmetry proxy.
SYMMETRY_TOLERANCE = 1e-9

LEBEDEV_ORDERS = (
    3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35,
    41, 47, 53, 59, 65, 71, 77, 83, 89, 95, 101, 107, 113, 119, 125, 131,
)  # fmt: skip


class Bond(NamedTuple):
    """Pair of site indices i < j with its coupling vector."""

    i: int
    j: int
    coupling: tuple[float, ...]


class TiltedMeasure(NamedTuple):
    """Complex-weighted atomic measure whose weights sum to one."""

    points: np.ndarray
    weights: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class ValidatedModel:
    """Immutable handle on a model that passed validation.

    Derived arrays are computed lazily and cached on the instance, so a
    handle can be shared between worker threads once built.
    """

    spec: ModelSpec
    sites: tuple[Site, ...]
    index: Mapping[Site, int]
    bonds: tuple[Bond, ...]

    @property
    def lattice(self) -> LatticeBox:
        """Lattice box."""
        return self.spec.lattice

    @property
    def measure(self) -> SiteMeasure:
        """Single-site measure."""
        return self.spec.measure

    @property
    def beta(self) -> float:
        """Inverse temperature."""
        return self.spec.beta

    @property
    def field(self) -> complex:
        """Complex field h."""
        return self.spec.field

    @property
    def n_sites(self) -> int:
        """Number of lattice sites."""
        return len(self.sites)

    @property
    def n_components(self) -> int:
        """Spin components N."""
        return self.measure.n_components

    @property
    def atom_count(self) -> int:
        """Atoms q of the single-site measure."""
        return self.measure.atom_count

    @cached_property
    def points(self) -> np.ndarray:
        """Atom positions, shape (q, N)."""
        return np.asarray(self.measure.points, dtype=float)

    @cached_property
    def tilted(self) -> TiltedMeasure:
        """Tilted single-site measure at w = beta * h."""
        return tilted_site_measure(self.measure, self.beta * self.field)

    @cached_property
    def pair_tables(self) -> np.ndarray:
        """beta * sum_k J^k t_a^k t_b^k per bond, shape (bonds, q, q)."""
        if not self.bonds:
            return np.zeros((0, self.atom_count, self.atom_count))
        couplings = np.asarray([bond.coupling for bond in self.bonds], dtype=float)
        return self.beta * np.einsum(
            "bk,ak,ck->bac", couplings, self.points, self.points
        )

    @cached_property
    def bond_lookup(self) -> dict[tuple[int, int], int]:
        """Map (i, j) with i < j to the bond position."""
        return {(bond.i, bond.j): pos for pos, bond in enumerate(self.bonds)}

    def site_index(self, site: Any) -> int:
        """Index of a site, raising InvalidSlots when it is not in the box."""
        key = as_site(site)
        if key not in self.index:
            raise InvalidSlots(f"site {key} is not in the lattice", site=list(key))
        return self.index[key]

    def with_field(self, field: complex) -> ValidatedModel:
        """Same model at another field, without revalidating."""
        return dataclasses.replace(
            self, spec=self.spec.model_copy(update={"field": complex(field)})
        )


def validate_model(spec: ModelSpec) -> ValidatedModel:
    """Check the symmetry, range and ferromagnetism hypotheses.

    Args:
        spec: Model specification

    Returns:
        Validated, immutable model handle

    Raises:
        SymmetryViolation: Measure fails the sign-flip/permutation proxy
        FerromagnetismViolation: Some coupling has J^1 < sum_k |J^k|
        RangeViolation: Nonzero coupling at Manhattan distance >= range
        ConfigMismatch: Offsets, pairs or vectors do not fit the model
    """
    lattice = spec.lattice
    couplings = spec.couplings
    n_components = spec.measure.n_components
    _check_symmetry(spec.measure)

    for offset, coupling in couplings.entries.items():
        if len(offset) != lattice.dimension:
            raise ConfigMismatch(
                f"offset {offset} does not match lattice dimension {lattice.dimension}"
            )
        distance = sum(abs(c) for c in offset)
        _check_coupling(coupling, n_components, distance, couplings.range, offset)

    for (x, y), coupling in couplings.pairs.items():
        if not (lattice.contains(x) and lattice.contains(y)):
            raise ConfigMismatch(f"pair {(x, y)} is not inside the lattice")
        distance = lattice.distance(x, y)
        _check_coupling(coupling, n_components, distance, couplings.range, (x, y))

    sites = tuple(lattice.sites())
    bonds = tuple(build_bonds(lattice, couplings))
    logger.debug(
        "model_validated",
        sites=len(sites),
        bonds=len(bonds),
        atoms=spec.measure.atom_count,
        components=n_components,
    )
    return ValidatedModel(
        spec=spec,
        sites=sites,
        index={site: pos for pos, site in enumerate(sites)},
        bonds=bonds,
    )


def _check_coupling(
    coupling: tuple[float, ...],
    n_components: int,
    distance: int,
    interaction_range: int,
    where: Any,
) -> None:
    if len(coupling) != n_components:
        raise ConfigMismatch(
            f"coupling at {where} has {len(coupling)} components, "
            f"measure has {n_components}"
        )
    if any(coupling) and distance >= interaction_range:
        raise RangeViolation(
            f"nonzero coupling at {where} with distance {distance} "
            f">= range {interaction_range}",
            distance=distance,
            range=interaction_range,
        )
    if coupling[0] < sum(abs(c) for c in coupling[1:]):
        raise FerromagnetismViolation(
            f"coupling at {where} has J^1={coupling[0]} below sum |J^k|",
            coupling=list(coupling),
        )


def _check_symmetry(measure: SiteMeasure) -> None:
    points = np.asarray(measure.points, dtype=float)
    weights = np.asarray(measure.weights, dtype=float)
    n = points.shape[1]

    images: list[tuple[str, np.ndarray]] = []
    for k in range(n):
        flip = np.ones(n)
        flip[k] = -1.0
        images.append((f"sign flip of component {k + 1}", points * flip))
    for k in range(n - 1):
        order = list(range(n))
        order[k], order[k + 1] = order[k + 1], order[k]
        images.append((f"swap of components {k + 1} and {k + 2}", points[:, order]))

    scale = max(1.0, measure.sup_norm) * SYMMETRY_TOLERANCE
    weight_scale = weights.max() * SYMMETRY_TOLERANCE
    same_weight = np.abs(weights[:, None] - weights[None, :]) <= weight_scale
    for label, image in images:
        close = np.linalg.norm(image[:, None, :] - points[None, :, :], axis=-1) <= scale
        if not np.all(np.any(close & same_weight, axis=1)):
            raise SymmetryViolation(
                f"measure is not invariant under the {label}", transform=label
            )


def build_bonds(lattice: LatticeBox, couplings: CouplingSet) -> list[Bond]:
    """Expand offsets and explicit pairs into the bond list of a box.

    On periodic boxes a pair reached through several offsets accumulates
    all of them, so a ring of length 2 carries 2J on its single bond.
    """
    sites = lattice.sites()
    index = {site: pos for pos, site in enumerate(sites)}
    acc: dict[tuple[int, int], np.ndarray] = {}

    for offset, coupling in sorted(couplings.entries.items()):
        if not any(coupling):
            continue
        vector = np.asarray(coupling, dtype=float)
        for site in sites:
            other = lattice.shift(site, offset)
            if other is None or other == site:
                continue
            a, b = index[site], index[other]
            key = (min(a, b), max(a, b))
            acc[key] = acc.get(key, 0.0) + vector

    for (x, y), coupling in couplings.pairs.items():
        a, b = index[x], index[y]
        acc[(min(a, b), max(a, b))] = np.asarray(coupling, dtype=float)

    return [
        Bond(i, j, tuple(float(v) for v in acc[(i, j)]))
        for i, j in sorted(acc)
        if np.any(acc[(i, j)])
    ]


def hamiltonian(config: Mapping[Any, Any] | Sequence[Any], model: ValidatedModel) -> float:
    """Pair-interaction energy -sum_{xy} sum_k J^k phi^k_x phi^k_y.

    The field term is carried by the tilted measure, not by this energy.

    Raises:
        ConfigMismatch: Config sites differ from the lattice, or a value
            is not an atom of the measure
    """
    spins = _config_array(config, model)
    energy = 0.0
    for bond in model.bonds:
        energy -= float(np.dot(bond.coupling, spins[bond.i] * spins[bond.j]))
    return energy


def _config_array(config: Mapping[Any, Any] | Sequence[Any], model: ValidatedModel) -> np.ndarray:
    if isinstance(config, Mapping):
        values = {as_site(site): value for site, value in config.items()}
        if set(values) != set(model.sites):
            raise ConfigMismatch("config site set differs from the lattice sites")
        ordered = [values[site] for site in model.sites]
    else:
        ordered = list(config)
        if len(ordered) != model.n_sites:
            raise ConfigMismatch(
                f"config has {len(ordered)} sites, lattice has {model.n_sites}"
            )

    spins = np.asarray(
        [np.atleast_1d(np.asarray(value, dtype=float)) for value in ordered]
    )
    if spins.shape[1] != model.n_components:
        raise ConfigMismatch("config vectors do not match the spin dimension")
    distance = np.linalg.norm(spins[:, None, :] - model.points[None, :, :], axis=-1)
    if not np.all(distance.min(axis=1) <= SYMMETRY_TOLERANCE):
        raise ConfigMismatch("config assigns a value that is not an atom")
    return spins


def laplace_transform(measure: SiteMeasure, z: complex | np.ndarray) -> Any:
    """Laplace transform sum_a w_a exp(z * t_a^1), scalar or elementwise."""
    first = np.asarray([p[0] for p in measure.points], dtype=float)
    weights = np.asarray(measure.weights, dtype=float)
    values = np.exp(np.multiply.outer(np.asarray(z, dtype=complex), first)) @ weights
    return complex(values) if np.ndim(values) == 0 else values


def laplace_transform_scaled(
    measure: SiteMeasure, z: complex | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Laplace transform with the factor exp(shift) removed.

    Returns:
        Tuple of (scaled values, shift) with transform = scaled * exp(shift)
    """
    first = np.asarray([p[0] for p in measure.points], dtype=float)
    weights = np.asarray(measure.weights, dtype=float)
    zz = np.asarray(z, dtype=complex)
    shift = np.maximum(zz.real * first.max(), zz.real * first.min())
    exponent = np.multiply.outer(zz, first) - np.asarray(shift)[..., None]
    return np.exp(exponent) @ weights, shift


def tilted_site_measure(measure: SiteMeasure, w: complex) -> TiltedMeasure:
    """Reweight atoms by exp(w * t^1) and normalize by the Laplace transform.

    Raises:
        ZeroNormalizer: The Laplace transform vanishes at w
    """
    points = np.asarray(measure.points, dtype=float)
    weights = np.asarray(measure.weights, dtype=float)
    w = complex(w)
    first = points[:, 0]
    shift = max(w.real * first.max(), w.real * first.min())
    raw = weights * np.exp(w * first - shift)
    norm = raw.sum()
    if abs(norm) <= get_settings().normalizer_tolerance * np.abs(raw).sum():
        raise ZeroNormalizer(
            f"Laplace transform vanishes at w={w}",
            w_re=w.real,
            w_im=w.imag,
        )
    return TiltedMeasure(points=points, weights=raw / norm)


def make_ising() -> SiteMeasure:
    """Two-atom Ising measure at +1 and -1."""
    return SiteMeasure(points=((1.0,), (-1.0,)), weights=(1.0, 1.0))


def make_sphere_uniform(n_components: int, nodes: int) -> SiteMeasure:
    """Symmetric quadrature of the uniform measure on S^{N-1}.

    N=2 uses ``nodes`` equally spaced angles; N=3 uses the smallest
    Lebedev rule with at least ``nodes`` points. Weights sum to one.

    Raises:
        UnsupportedDimension: N outside {2, 3}
        SymmetryViolation: N=2 with nodes not divisible by 4
    """
    if n_components == 2:
        if nodes < 4 or nodes % 4:
            raise SymmetryViolation(
                f"circle quadrature needs a multiple of 4 nodes, got {nodes}"
            )
        angles = 2.0 * np.pi * np.arange(nodes) / nodes
        points = np.column_stack([np.cos(angles), np.sin(angles)])
        weights = np.full(nodes, 1.0 / nodes)
        return SiteMeasure(points=tuple(map(tuple, points)), weights=tuple(weights))

    if n_components == 3:
        for order in LEBEDEV_ORDERS:
            x, w = integrate.lebedev_rule(order)
            if x.shape[1] >= nodes and np.all(w > 0):
                w = w / w.sum()
                return SiteMeasure(points=tuple(map(tuple, x.T)), weights=tuple(w))
        raise UnsupportedDimension(f"no Lebedev rule with {nodes} points")

    raise UnsupportedDimension(
        f"sphere quadrature is provided for N=2,3 only, got N={n_components}",
        n_components=n_components,
    )


def reflect_field(spec: ModelSpec) -> ModelSpec:
    """Map h to -h; the global flip of phi^1 makes the two models equivalent."""
    return spec.model_copy(update={"field": -spec.field})


def reflection_sign(components: Sequence[int]) -> int:
    """Sign relating n-point functions at h and -h for these components."""
    return -1 if sum(1 for c in components if c == 1) % 2 else 1


def measure_from_config(value: str | MeasureAtoms) -> SiteMeasure:
    """Build a measure from ``ising``, ``circle:<M>``, ``sphere:<M>`` or atoms."""
    if isinstance(value, MeasureAtoms):
        try:
            return SiteMeasure(points=value.points, weights=value.weights)
        except ValidationError as exc:
            raise ConfigParse(f"invalid inline measure: {exc}") from exc

    name, _, nodes = value.strip().lower().partition(":")
    if name == "ising" and not nodes:
        return make_ising()
    if name in ("circle", "sphere") and nodes.isdigit():
        return make_sphere_uniform(2 if name == "circle" else 3, int(nodes))
    raise ConfigParse(f"unknown measure '{value}'")


def spec_from_config(config: ModelConfig) -> ModelSpec:
    """Translate the model table of a run configuration into a spec."""
    try:
        couplings = CouplingSet(
            range=config.range,
            entries=config.couplings,
            pairs={(as_site(pair.x), as_site(pair.y)): pair.J for pair in config.pairs},
        )
        return ModelSpec(
            lattice=LatticeBox(dims=tuple(config.dims), boundary=config.boundary),
            measure=measure_from_config(config.measure),
            couplings=couplings,
            beta=config.beta,
            field=config.field,
        )
    except ValidationError as exc:
        raise ConfigParse(f"invalid model table: {exc}") from exc


def random_ising_instance(
    lattice: LatticeBox,
    rng: np.random.Generator,
    beta: float = 1.0,
    j_range: tuple[float, float] = (0.1, 1.0),
    field: complex = 0j,
) -> ModelSpec:
    """Nearest-neighbour Ising model with independent uniform couplings."""
    unit = {
        tuple(int(k == axis) for k in range(lattice.dimension)): 1.0
        for axis in range(lattice.dimension)
    }
    template = build_bonds(lattice, CouplingSet(range=2, entries=unit))
    sites = lattice.sites()
    pairs = {
        (sites[bond.i], sites[bond.j]): (
            bond.coupling[0] * float(rng.uniform(*j_range)),
        )
        for bond in template
    }
    return ModelSpec(
        lattice=lattice,
        measure=make_ising(),
        couplings=CouplingSet(range=2, pairs=pairs),
        beta=beta,
        field=field,
    )
