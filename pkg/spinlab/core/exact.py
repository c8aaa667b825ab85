"""Exact enumeration engine for finite volumes.

Configurations are visited in mixed-radix lexicographic order (site 0 is
the most significant digit) in fixed-size blocks. Blocks may run on any
number of workers; their partial sums are combined in block order, so
results are bit-identical for every thread count.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from itertools import combinations
from typing import Any

import numpy as np
import structlog
from sympy.utilities.iterables import multiset_partitions

from spinlab.config import get_settings
from spinlab.core.executor import get_executor
from spinlab.core.model import ValidatedModel
from spinlab.exceptions import (
    BudgetExceeded,
    InvalidSlots,
    MissingMoment,
    ZeroPartition,
)
from spinlab.schemas import UrsellResult

logger = structlog.get_logger(__name__)

# spins of shape (block, sites, N) -> values of shape (block,)
Observable = Callable[[np.ndarray], np.ndarray]
Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def configuration_count(model: ValidatedModel) -> int:
    """Number of configurations q^|Lambda|."""
    return model.atom_count**model.n_sites


def check_budget(model: ValidatedModel, budget: int | None = None) -> int:
    """Return the configuration count, raising BudgetExceeded above budget."""
    budget = budget or get_settings().enumeration_budget
    total = configuration_count(model)
    if total > budget:
        raise BudgetExceeded(
            f"{total} configurations exceed the enumeration budget {budget}",
            states=total,
            budget=budget,
        )
    return total


def decode_block(model: ValidatedModel, start: int, stop: int) -> np.ndarray:
    """Atom indices of configurations start..stop-1, shape (block, sites)."""
    q = model.atom_count
    idx = np.arange(start, stop, dtype=np.int64)
    powers = q ** np.arange(model.n_sites - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % q


def log_boltzmann(model: ValidatedModel, atoms: np.ndarray) -> np.ndarray:
    """-beta * H for each configuration in the block."""
    tables = model.pair_tables
    exponent = np.zeros(atoms.shape[0])
    for pos, bond in enumerate(model.bonds):
        exponent += tables[pos][atoms[:, bond.i], atoms[:, bond.j]]
    return exponent


def enumerate_sums(
    model: ValidatedModel, kernel: Kernel, budget: int | None = None
) -> np.ndarray:
    """Sum ``kernel(atoms, weights)`` over all configuration blocks.

    ``weights`` are the complex Boltzmann weights including the tilted
    single-site factors. The kernel returns a 1-D array of partial sums.
    """
    total = check_budget(model, budget)
    tilted = model.tilted.weights
    _ = model.pair_tables
    block = get_settings().enumeration_block_size
    blocks = [(start, min(start + block, total)) for start in range(0, total, block)]

    def run(bounds: tuple[int, int]) -> np.ndarray:
        atoms = decode_block(model, *bounds)
        weights = np.exp(log_boltzmann(model, atoms)) * np.prod(tilted[atoms], axis=1)
        return np.asarray(kernel(atoms, weights))

    parts = get_executor().map(run, blocks)
    result = parts[0]
    for part in parts[1:]:
        result = result + part
    logger.debug("enumeration_done", states=total, blocks=len(blocks))
    return result


def spin_product(model: ValidatedModel, slots: Iterable[tuple[Any, int]]) -> Observable:
    """Observable prod_k phi^{i_k}_{x_k} for (site, 1-based component) slots."""
    resolved = [_resolve_slot(model, site, comp) for site, comp in slots]

    def observable(spins: np.ndarray) -> np.ndarray:
        values = np.ones(spins.shape[0])
        for site, comp in resolved:
            values = values * spins[:, site, comp]
        return values

    return observable


def partition_function(model: ValidatedModel, f: Observable | None = None) -> complex:
    """Z(f) = sum_config f * exp(-beta H) * prod_x nu_{beta h}(phi_x).

    With f = 1 and no couplings the result is 1.
    """

    def kernel(atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        if f is None:
            return np.array([weights.sum()])
        return np.array([(weights * f(model.points[atoms])).sum()])

    return complex(enumerate_sums(model, kernel)[0])


def thermal_average(model: ValidatedModel, f: Observable) -> complex:
    """<f> = Z(f) / Z(1).

    Raises:
        ZeroPartition: Z(1) vanishes relative to the total weight
    """

    def kernel(atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        values = f(model.points[atoms])
        return np.array(
            [(weights * values).sum(), weights.sum(), np.abs(weights).sum()]
        )

    numerator, z, scale = enumerate_sums(model, kernel)
    _check_partition(z, scale.real, model)
    return complex(numerator / z)


def _check_partition(z: complex, scale: float, model: ValidatedModel) -> None:
    if abs(z) <= get_settings().zero_tolerance * scale:
        raise ZeroPartition(
            "partition function vanishes",
            field_re=model.field.real,
            field_im=model.field.imag,
        )


def _resolve_slot(model: ValidatedModel, site: Any, component: int) -> tuple[int, int]:
    if not 1 <= int(component) <= model.n_components:
        raise InvalidSlots(
            f"component {component} outside 1..{model.n_components}",
            component=int(component),
        )
    return model.site_index(site), int(component) - 1


def moment_vector(
    model: ValidatedModel, sites: Sequence[Any], components: Sequence[int]
) -> np.ndarray:
    """Joint moments of every slot subset, indexed by bitmask (entry 0 is 1)."""
    slots = [_resolve_slot(model, s, c) for s, c in zip(sites, components, strict=True)]
    n = len(slots)

    def kernel(atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        spins = model.points[atoms]
        values = [spins[:, site, comp] for site, comp in slots]
        products = [weights]
        sums = np.empty(2**n + 1, dtype=complex)
        sums[0] = weights.sum()
        for mask in range(1, 2**n):
            low = (mask & -mask).bit_length() - 1
            products.append(products[mask & (mask - 1)] * values[low])
            sums[mask] = products[mask].sum()
        sums[-1] = np.abs(weights).sum()
        return sums

    sums = enumerate_sums(model, kernel)
    _check_partition(sums[0], sums[-1].real, model)
    return sums[:-1] / sums[0]


def joint_moments(
    model: ValidatedModel, sites: Sequence[Any], components: Sequence[int] | None = None
) -> dict[frozenset[int], complex]:
    """Moments <prod_{k in S} phi^{i_k}_{x_k}> for every nonempty S of 1..n."""
    components = list(components) if components is not None else [1] * len(sites)
    moments = moment_vector(model, sites, components)
    return {
        frozenset(k + 1 for k in range(len(sites)) if mask >> k & 1): complex(value)
        for mask, value in enumerate(moments)
        if mask
    }


def ursell(
    model: ValidatedModel, sites: Sequence[Any], components: Sequence[int] | None = None
) -> UrsellResult:
    """Connected n-point function via the moment-cumulant recursion.

    kappa(S) = m(S) - sum_{T subset S, min S in T, T != S} kappa(T) m(S \\ T),
    evaluated over bitmasks. Repeated (site, component) slots are allowed
    and behave as distinct derivative slots.

    Raises:
        InvalidSlots: n outside 2..6 or slots outside the model
    """
    n = len(sites)
    limit = get_settings().max_ursell_points
    if not 2 <= n <= limit:
        raise InvalidSlots(f"Ursell functions need 2..{limit} points, got {n}")
    components = list(components) if components is not None else [1] * n
    if len(components) != n:
        raise InvalidSlots("one component per site is required")

    m = moment_vector(model, sites, components)
    kappa = np.zeros(2**n, dtype=complex)
    for mask in range(1, 2**n):
        low = mask & -mask
        rest = mask ^ low
        total = m[mask]
        sub = rest
        while True:
            if sub != rest:
                part = low | sub
                total -= kappa[part] * m[mask ^ part]
            if sub == 0:
                break
            sub = (sub - 1) & rest
        kappa[mask] = total

    return UrsellResult(
        sites=tuple(model.sites[model.site_index(s)] for s in sites),
        components=tuple(int(c) for c in components),
        value=complex(kappa[-1]),
        dims=model.lattice.dims,
        boundary=model.lattice.boundary,
        beta=model.beta,
        field=model.field,
    )


def cumulant_oracle(moments: Mapping[Any, complex]) -> complex:
    """Joint cumulant from the set-partition formula.

    sum over partitions pi of (-1)^(|pi|-1) (|pi|-1)! prod_{B in pi} m(B).

    Raises:
        MissingMoment: Some nonempty subset has no moment
    """
    table = {_as_block(key): complex(value) for key, value in moments.items()}
    universe = sorted(set().union(*table)) if table else []
    missing = [
        sorted(subset)
        for size in range(1, len(universe) + 1)
        for subset in map(frozenset, combinations(universe, size))
        if subset not in table
    ]
    if not universe or missing:
        raise MissingMoment("moments missing for some subsets", missing=missing)

    total = 0j
    for partition in multiset_partitions(universe):
        blocks = len(partition)
        term = complex((-1) ** (blocks - 1) * math.factorial(blocks - 1))
        for block in partition:
            term *= table[frozenset(block)]
        total += term
    return total


def _as_block(key: Any) -> frozenset[int]:
    if isinstance(key, int):
        return frozenset({key})
    return frozenset(key)


def connected_two_point(
    model: ValidatedModel, x: Any, y: Any, i: int = 1, j: int = 1
) -> complex:
    """<phi^i_x phi^j_y> - <phi^i_x><phi^j_y> from three separate averages."""
    both = thermal_average(model, spin_product(model, [(x, i), (y, j)]))
    first = thermal_average(model, spin_product(model, [(x, i)]))
    second = thermal_average(model, spin_product(model, [(y, j)]))
    return both - first * second
