"""Large-field polymer expansion.

After subtracting tau^2 from the first-component products, every bond
factor exp(-beta Phi) is written as 1 + mu_e with

    mu_e = exp(beta * sum_k J^k (phi^k_u phi^k_v - tau^2 delta_{k1})) - 1.

The marked factors (1 + s phi^i_0)(1 + t phi^j_x) act as loop edges. Under
the product tilted measure the expansion of the product over edge
subsets factorizes into a hard-core gas of polymers, the vertex sets of
the connected components, with activities

    z(zeta) = < sum over connected graphs g on zeta of prod_{e in g} mu_e >.

Each activity is affine in s and in t separately, so it is stored as the
four coefficients (const, s, t, st).
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from collections import defaultdict
from collections.abc import Iterable, Sequence
from functools import lru_cache
from typing import Any

import networkx as nx
import numpy as np
import structlog
from networkx.algorithms.tree.mst import SpanningTreeIterator
from scipy import optimize

from spinlab.config import get_settings
from spinlab.core.exact import ursell
from spinlab.core.executor import get_executor
from spinlab.core.model import ValidatedModel
from spinlab.exceptions import (
    BudgetExceeded,
    ConfigError,
    GraphBudgetExceeded,
    InvalidSlots,
    NotFound,
    NotInConvergenceRegion,
)
from spinlab.schemas import (
    ClusterResult,
    ClusterRow,
    CouplingSet,
    EtaResult,
    LatticeBox,
    SiteMeasure,
    Site,
    as_site,
)

logger = structlog.get_logger(__name__)

# 2^(n(n-1)/2) at n = 5
MAX_GRAPH_EDGES = 10
BISECTION_STEPS = 60


@dataclasses.dataclass(frozen=True, order=True)
class Polymer:
    """Finite site set, stored sorted."""

    sites: tuple[Site, ...]

    @property
    def size(self) -> int:
        """Number of sites |zeta|."""
        return len(self.sites)

    def __contains__(self, site: object) -> bool:
        return site in self.sites


@dataclasses.dataclass(frozen=True)
class Activity:
    """Activity z = const + s * s_part + t * t_part + s * t * st_part."""

    polymer: Polymer
    tau: float
    const: complex = 0j
    s: complex = 0j
    t: complex = 0j
    st: complex = 0j

    def value(self, s: complex = 0.0, t: complex = 0.0) -> complex:
        """Evaluate at the given s and t."""
        return self.const + s * self.s + t * self.t + s * t * self.st

    def norm(self, bound: float) -> float:
        """Upper bound of |z| over |s|, |t| <= bound."""
        return (
            abs(self.const)
            + bound * (abs(self.s) + abs(self.t))
            + bound * bound * abs(self.st)
        )


def _range_offsets(dimension: int, interaction_range: int) -> list[Site]:
    reach = interaction_range - 1
    return [
        offset
        for offset in itertools.product(range(-reach, reach + 1), repeat=dimension)
        if 0 < sum(abs(c) for c in offset) <= reach
    ]


def enumerate_polymers(
    root: Any,
    n: int,
    couplings: CouplingSet,
    marked: Iterable[Any] = (),
    lattice: LatticeBox | None = None,
) -> list[Polymer]:
    """Range-connected site sets of size n containing ``root``.

    Two sites are adjacent when their Manhattan distance is below the
    coupling range (wrapped on periodic boxes). Size-one polymers exist
    only at marked sites. Without a lattice the sets live in Z^d.

    Raises:
        BudgetExceeded: The set count exceeds the polymer budget
    """
    root = as_site(root)
    marked_sites = {as_site(m) for m in marked}
    if n < 1:
        return []
    if n == 1:
        return [Polymer((root,))] if root in marked_sites else []
    if lattice is not None and not lattice.contains(root):
        raise InvalidSlots(f"site {root} is not in the lattice")

    budget = get_settings().polymer_budget
    offsets = _range_offsets(len(root), couplings.range)

    def neighbours(site: Site) -> Iterable[Site]:
        for offset in offsets:
            if lattice is None:
                yield tuple(a + b for a, b in zip(site, offset, strict=True))
                continue
            other = lattice.shift(site, offset)
            if other is not None and other != site:
                yield other

    level: set[frozenset[Site]] = {frozenset({root})}
    for _ in range(n - 1):
        grown: set[frozenset[Site]] = set()
        for current in level:
            for site in current:
                for other in neighbours(site):
                    if other not in current:
                        grown.add(current | {other})
            if len(grown) > budget:
                raise BudgetExceeded(
                    f"more than {budget} polymers of size {n}", budget=budget
                )
        level = grown
    return sorted(Polymer(tuple(sorted(s))) for s in level)


@lru_cache(maxsize=4096)
def connected_edge_subsets(
    n: int, edges: tuple[tuple[int, int], ...]
) -> tuple[tuple[int, ...], ...]:
    """Edge-index subsets that connect all n vertices."""
    if len(edges) > MAX_GRAPH_EDGES:
        raise GraphBudgetExceeded(
            f"{2 ** len(edges)} edge subsets exceed the graph budget",
            edges=len(edges),
            budget=2**MAX_GRAPH_EDGES,
        )
    if n == 1:
        return ((),)
    result = []
    for size in range(n - 1, len(edges) + 1):
        for subset in itertools.combinations(range(len(edges)), size):
            graph = nx.Graph()
            graph.add_nodes_from(range(n))
            graph.add_edges_from(edges[k] for k in subset)
            if nx.is_connected(graph):
                result.append(subset)
    return tuple(result)


def _polymer_configs(model: ValidatedModel, n: int) -> np.ndarray:
    q = model.atom_count
    if q**n > get_settings().enumeration_budget:
        raise BudgetExceeded(f"{q**n} polymer configurations exceed the budget")
    return np.stack(np.unravel_index(np.arange(q**n), (q,) * n), axis=1)


def _bond_factors(
    model: ValidatedModel, indices: Sequence[int], atoms: np.ndarray, tau: float
) -> tuple[list[tuple[int, int]], list[np.ndarray]]:
    edges: list[tuple[int, int]] = []
    factors: list[np.ndarray] = []
    for a, b in itertools.combinations(range(len(indices)), 2):
        i, j = sorted((indices[a], indices[b]))
        pos = model.bond_lookup.get((i, j))
        if pos is None:
            continue
        shift = model.beta * model.bonds[pos].coupling[0] * tau * tau
        table = model.pair_tables[pos]
        lo, hi = (a, b) if indices[a] < indices[b] else (b, a)
        edges.append((a, b))
        factors.append(np.expm1(table[atoms[:, lo], atoms[:, hi]] - shift))
    return edges, factors


def activity(
    model: ValidatedModel,
    polymer: Polymer,
    tau: float,
    marked: tuple[Any, Any] | None = None,
    components: tuple[int, int] = (1, 1),
) -> Activity:
    """Exact s/t-decomposed activity of a polymer.

    ``marked`` holds the sites 0 and x carrying the s and t loop edges,
    with spin components ``components``.

    Raises:
        GraphBudgetExceeded: Too many in-range pairs for subset enumeration
        ZeroNormalizer: Propagated from the tilted measure
    """
    indices = [model.site_index(site) for site in polymer.sites]
    n = len(indices)
    origin, target = (
        (model.site_index(marked[0]), model.site_index(marked[1]))
        if marked is not None
        else (None, None)
    )
    has_s = origin in indices
    has_t = target in indices
    if n == 1 and not (has_s or has_t):
        return Activity(polymer=polymer, tau=tau)

    atoms = _polymer_configs(model, n)
    weights = np.prod(model.tilted.weights[atoms], axis=1)
    edges, factors = _bond_factors(model, indices, atoms, tau)
    if n > 1 and not edges:
        return Activity(polymer=polymer, tau=tau)

    graph_sum = np.zeros(atoms.shape[0], dtype=float)
    for subset in connected_edge_subsets(n, tuple(edges)):
        term = np.ones(atoms.shape[0])
        for k in subset:
            term = term * factors[k]
        graph_sum = graph_sum + term
    weighted = weights * graph_sum

    def spin(site_index: int, component: int) -> np.ndarray:
        return model.points[atoms[:, indices.index(site_index)], component - 1]

    s_spin = spin(origin, components[0]) if has_s else None
    t_spin = spin(target, components[1]) if has_t else None
    return Activity(
        polymer=polymer,
        tau=tau,
        const=complex(weighted.sum()) if n > 1 else 0j,
        s=complex((weighted * s_spin).sum()) if has_s else 0j,
        t=complex((weighted * t_spin).sum()) if has_t else 0j,
        st=complex((weighted * s_spin * t_spin).sum()) if has_s and has_t else 0j,
    )


def default_st_bound(model: ValidatedModel, epsilon: float | None = None) -> float:
    """c = epsilon / (2 * sup_norm * M_infinity)."""
    settings = get_settings()
    epsilon = settings.cluster_epsilon if epsilon is None else epsilon
    return epsilon / (2.0 * model.measure.sup_norm * settings.m_infinity)


def activity_norm_sum(
    model: ValidatedModel,
    y: Any,
    n: int,
    tau: float,
    marked: tuple[Any, Any] | None = None,
    st_bound: float | None = None,
) -> float:
    """Sum of |z(zeta)| over polymers of size n containing y.

    s and t are bounded by ``st_bound``; by default both loop edges sit
    at y.
    """
    y = as_site(y)
    marked = marked or (y, y)
    bound = default_st_bound(model) if st_bound is None else st_bound
    polymers = enumerate_polymers(
        y, n, model.spec.couplings, marked=marked, lattice=model.lattice
    )
    return float(
        sum(activity(model, p, tau, marked=marked).norm(bound) for p in polymers)
    )


def _limit_norm_sum(model: ValidatedModel, y: Site, n: int, tau: float) -> float:
    # Field -> infinity: every spin sits at (sup_norm, 0, ..., 0).
    top = model.measure.sup_norm
    total = 0.0
    for polymer in enumerate_polymers(y, n, model.spec.couplings, lattice=model.lattice):
        indices = [model.site_index(s) for s in polymer.sites]
        edges, mus = [], []
        for a, b in itertools.combinations(range(n), 2):
            pos = model.bond_lookup.get(tuple(sorted((indices[a], indices[b]))))
            if pos is not None:
                first = model.bonds[pos].coupling[0]
                edges.append((a, b))
                mus.append(math.expm1(model.beta * first * (top * top - tau * tau)))
        if not edges:
            continue
        total += abs(
            sum(
                math.prod(mus[k] for k in subset)
                for subset in connected_edge_subsets(n, tuple(edges))
            )
        )
    return total


def _root_sites(model: ValidatedModel) -> list[Site]:
    return [model.sites[0]] if model.lattice.periodic else list(model.sites)


def find_eta(
    model: ValidatedModel,
    epsilon: float | None = None,
    n_max: int = 3,
    tau: float | None = None,
    imaginary_parts: Sequence[float] = (0.0,),
) -> EtaResult:
    """Field threshold for small activities.

    delta is bisected so that the infinite-field activity sums stay below
    epsilon^n / 2, giving tau = sup_norm - delta (skipped when ``tau`` is
    given). Re h then climbs a geometric grid until activity_norm_sum is
    at most epsilon^n for every n <= n_max, every root site and every
    listed imaginary part.

    Raises:
        NotFound: The field cap is reached first
    """
    settings = get_settings()
    epsilon = settings.cluster_epsilon if epsilon is None else epsilon
    roots = _root_sites(model)
    sizes = range(1, n_max + 1)
    top = model.measure.sup_norm

    def limit_ok(candidate_tau: float) -> bool:
        return all(
            _limit_norm_sum(model, y, n, candidate_tau) <= epsilon**n / 2
            for y in roots
            for n in sizes
            if n > 1
        )

    if tau is None:
        lo, hi = 0.0, top
        if limit_ok(0.0):
            lo = top
        else:
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                if limit_ok(top - mid):
                    lo = mid
                else:
                    hi = mid
        tau = top - lo
    delta = top - tau
    bound = default_st_bound(model, epsilon)

    h = settings.field_start
    failing = n_max
    while h <= settings.field_cap:
        failing = None
        for im in imaginary_parts:
            shifted = model.with_field(complex(h, im))
            for n in sizes:
                if any(
                    activity_norm_sum(shifted, y, n, tau, st_bound=bound) > epsilon**n
                    for y in roots
                ):
                    failing = n
                    break
            if failing is not None:
                break
        if failing is None:
            logger.info("eta_found", eta=h, tau=tau, epsilon=epsilon)
            return EtaResult(
                eta=h, tau=tau, delta=delta, epsilon=epsilon, n_max=n_max, st_bound=bound
            )
        h *= settings.field_grid_ratio
    raise NotFound(
        f"activities not below epsilon^n up to Re h = {settings.field_cap}",
        failing_n=failing,
        field_cap=settings.field_cap,
    )


def _check_order(order: int) -> None:
    cap = get_settings().polymer_max_size
    if order > cap:
        raise ConfigError(
            f"series order {order} exceeds polymer_max_size {cap}",
            order=order,
            polymer_max_size=cap,
        )


def all_polymers(
    model: ValidatedModel, max_size: int, marked: tuple[Any, Any]
) -> list[Polymer]:
    """Every polymer in the box with size <= max_size, sorted.

    Raises:
        ConfigError: max_size exceeds the configured polymer_max_size
    """
    _check_order(max_size)
    found: set[Polymer] = set()
    for site in model.sites:
        for n in range(1, max_size + 1):
            found.update(
                enumerate_polymers(
                    site, n, model.spec.couplings, marked=marked, lattice=model.lattice
                )
            )
    return sorted(found)


@lru_cache(maxsize=4096)
def _connected_sign_sum(m: int, edges: tuple[tuple[int, int], ...]) -> int:
    if m == 1:
        return 1
    total = 0
    for size in range(m - 1, len(edges) + 1):
        for subset in itertools.combinations(edges, size):
            graph = nx.Graph()
            graph.add_nodes_from(range(m))
            graph.add_edges_from(subset)
            if nx.is_connected(graph):
                total += (-1) ** size
    return total


def ursell_coefficient(polymers: Sequence[Polymer]) -> float:
    """phi^T of a polymer multiset under hard-core exclusion.

    Sum over connected spanning subgraphs of the overlap graph of
    (-1)^edges, divided by the product of multiplicity factorials.
    """
    m = len(polymers)
    sets = [set(p.sites) for p in polymers]
    edges = tuple(
        (a, b) for a, b in itertools.combinations(range(m), 2) if sets[a] & sets[b]
    )
    counts = defaultdict(int)
    for p in polymers:
        counts[p] += 1
    return _connected_sign_sum(m, edges) / math.prod(
        math.factorial(c) for c in counts.values()
    )


def _clusters(
    polymers: Sequence[Polymer], seeds: Iterable[int], order: int
) -> list[tuple[int, ...]]:
    by_site: dict[Site, list[int]] = defaultdict(list)
    for k, polymer in enumerate(polymers):
        for site in polymer.sites:
            by_site[site].append(k)

    seen: set[tuple[int, ...]] = set()
    stack = [((k,), frozenset(polymers[k].sites), polymers[k].size) for k in seeds]
    while stack:
        members, union, size = stack.pop()
        if members in seen:
            continue
        seen.add(members)
        candidates = sorted({k for site in union for k in by_site[site]})
        for k in candidates:
            grown = size + polymers[k].size
            if grown <= order:
                stack.append(
                    (
                        tuple(sorted(members + (k,))),
                        union | frozenset(polymers[k].sites),
                        grown,
                    )
                )
    return sorted(seen)


def cluster_two_point(
    model: ValidatedModel,
    x: Any,
    tau: float,
    order: int,
    origin: Any | None = None,
    components: tuple[int, int] = (1, 1),
    eta: float | None = None,
    st_bound: float | None = None,
) -> ClusterResult:
    """d^2/ds dt log Z^tau at s = t = 0 from the truncated cluster series.

    Clusters are connected multisets of polymers with total size at most
    ``order``; only those carrying both loop edges contribute. The tail
    estimate is c * eps'^(order+1) / (1 - eps') with eps' the largest
    n-th root of the activity norm sums.

    Raises:
        NotInConvergenceRegion: Re h < eta, or eps' >= 1
        ConfigError: order exceeds the configured polymer_max_size
    """
    if eta is not None and model.field.real < eta:
        raise NotInConvergenceRegion(
            f"Re h = {model.field.real} is below eta = {eta}",
            field_re=model.field.real,
            eta=eta,
        )
    origin = as_site(origin) if origin is not None else model.sites[0]
    x = as_site(x)
    marked = (origin, x)
    model.site_index(origin)
    model.site_index(x)
    bound = default_st_bound(model) if st_bound is None else st_bound

    polymers = all_polymers(model, order, marked)
    activities = get_executor().map(
        lambda p: activity(model, p, tau, marked=marked, components=components), polymers
    )

    norms: dict[tuple[Site, int], float] = defaultdict(float)
    for act in activities:
        for site in act.polymer.sites:
            norms[(site, act.polymer.size)] += act.norm(bound)
    epsilon_prime = max(
        (value ** (1.0 / n) for (_, n), value in norms.items()), default=0.0
    )
    if epsilon_prime >= 1.0:
        raise NotInConvergenceRegion(
            f"activity growth rate {epsilon_prime} is not below 1",
            epsilon_prime=epsilon_prime,
        )

    seeds = [k for k, p in enumerate(polymers) if origin in p]
    deltas = np.zeros(order, dtype=complex)
    clusters = _clusters(polymers, seeds, order)
    used = 0
    for members in clusters:
        if not any(x in polymers[k] for k in members):
            continue
        acts = [activities[k] for k in members]
        term = _st_coefficient(acts)
        if term == 0:
            continue
        used += 1
        size = sum(polymers[k].size for k in members)
        deltas[size - 1] += ursell_coefficient([polymers[k] for k in members]) * term

    partial = np.cumsum(deltas)
    scale = 0.0
    if epsilon_prime > 0:
        scale = max(abs(d) / epsilon_prime**k for k, d in enumerate(deltas, start=1))
    constant = max(1.0 / bound**2, scale)
    tails = tuple(
        float(constant * epsilon_prime ** (k + 1) / (1.0 - epsilon_prime))
        for k in range(1, order + 1)
    )
    logger.debug(
        "cluster_series_done",
        polymers=len(polymers),
        clusters=used,
        epsilon_prime=epsilon_prime,
    )
    return ClusterResult(
        value=complex(partial[-1]),
        tail_bound=tails[-1],
        partial_sums=tuple(complex(v) for v in partial),
        tail_bounds=tails,
        epsilon_prime=float(epsilon_prime),
        st_bound=bound,
        tau=tau,
        order=order,
        clusters=used,
    )


def _st_coefficient(acts: Sequence[Activity]) -> complex:
    # Coefficient of s*t in prod_k z_k.
    consts = [a.const for a in acts]
    total = 0j
    for a, act in enumerate(acts):
        rest = math.prod(consts[:a] + consts[a + 1 :])
        total += act.st * rest
        for b, other in enumerate(acts):
            if b != a:
                total += act.s * other.t * math.prod(
                    c for k, c in enumerate(consts) if k not in (a, b)
                )
    return total


def polymer_partition(
    model: ValidatedModel,
    sites: Iterable[Any],
    tau: float,
    s: complex = 0.0,
    t: complex = 0.0,
    marked: tuple[Any, Any] | None = None,
) -> complex:
    """Hard-core polymer gas sum over disjoint families inside ``sites``."""
    region = tuple(sorted(model.site_index(site) for site in sites))
    memo: dict[frozenset[int], complex] = {frozenset(): 1.0 + 0j}

    def weight(subset: tuple[int, ...]) -> complex:
        polymer = Polymer(tuple(sorted(model.sites[k] for k in subset)))
        return activity(model, polymer, tau, marked=marked).value(s, t)

    def xi(rest: frozenset[int]) -> complex:
        if rest in memo:
            return memo[rest]
        first = min(rest)
        others = sorted(rest - {first})
        total = xi(rest - {first})
        for size in range(1, len(others) + 1):
            for extra in itertools.combinations(others, size):
                subset = (first, *extra)
                total += weight(subset) * xi(rest - set(subset))
        total += weight((first,)) * xi(rest - {first})
        memo[rest] = total
        return total

    return xi(frozenset(region))


def bond_product_partition(
    model: ValidatedModel,
    sites: Iterable[Any],
    tau: float,
    s: complex = 0.0,
    t: complex = 0.0,
    marked: tuple[Any, Any] | None = None,
    components: tuple[int, int] = (1, 1),
) -> complex:
    """<prod (1 + mu_X)> over the region, expanded over all edge subsets."""
    indices = sorted(model.site_index(site) for site in sites)
    n = len(indices)
    atoms = _polymer_configs(model, n)
    weights = np.prod(model.tilted.weights[atoms], axis=1)
    _, factors = _bond_factors(model, indices, atoms, tau)

    if marked is not None:
        for site, strength, comp in zip(marked, (s, t), components, strict=True):
            k = model.site_index(site)
            if k in indices:
                factors.append(strength * model.points[atoms[:, indices.index(k)], comp - 1])

    total = np.zeros(atoms.shape[0], dtype=complex)
    for size in range(len(factors) + 1):
        for subset in itertools.combinations(range(len(factors)), size):
            term = np.ones(atoms.shape[0], dtype=complex)
            for k in subset:
                term = term * factors[k]
            total = total + term
    return complex((weights * total).sum())


def tree_graph_majorant(model: ValidatedModel, polymer: Polymer, tau: float) -> float:
    """Bound on |<sum over connected graphs of prod mu_e>|.

    Every connected graph contains a spanning tree, so the sum of
    prod |mu_e| over connected graphs is at most
    sum_T prod_{e in T} |mu_e| prod_{e not in T} (1 + |mu_e|), averaged
    under the total-variation weights of the tilted measure.
    """
    indices = [model.site_index(site) for site in polymer.sites]
    n = len(indices)
    atoms = _polymer_configs(model, n)
    weights = np.abs(np.prod(model.tilted.weights[atoms], axis=1))
    edges, factors = _bond_factors(model, indices, atoms, tau)
    if n == 1 or not edges:
        return 0.0

    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    graph.add_edges_from(edges)
    if not nx.is_connected(graph):
        return 0.0
    magnitude = {frozenset(e): np.abs(f) for e, f in zip(edges, factors, strict=True)}
    total = np.zeros(atoms.shape[0])
    for tree in SpanningTreeIterator(graph):
        inside = {frozenset(e) for e in tree.edges()}
        term = np.ones(atoms.shape[0])
        for edge, value in magnitude.items():
            term = term * (value if edge in inside else 1.0 + value)
        total = total + term
    return float((weights * total).sum())


def concentration_threshold(
    measure: SiteMeasure, delta: float, beta: float = 1.0
) -> float:
    """Smallest real field where the tilted probability outside the
    delta-ball around (sup_norm, 0, ..., 0) drops below delta.

    Raises:
        NotFound: Not reached below the field cap
    """
    points = np.asarray(measure.points, dtype=float)
    weights = np.asarray(measure.weights, dtype=float)
    target = np.zeros(points.shape[1])
    target[0] = measure.sup_norm
    outside = np.linalg.norm(points - target, axis=1) > delta

    def excess(h: float) -> float:
        exponent = beta * h * points[:, 0]
        tilt = weights * np.exp(exponent - exponent.max())
        return float(tilt[outside].sum() / tilt.sum()) - delta

    cap = get_settings().field_cap
    if excess(0.0) < 0:
        return 0.0
    if excess(cap) >= 0:
        raise NotFound(f"concentration below {delta} not reached by h = {cap}", delta=delta)
    return float(optimize.brentq(excess, 0.0, cap, xtol=1e-12))


def stability_constant(model: ValidatedModel, tau: float) -> float:
    """Measured c with sum_{bonds in zeta} beta (J . phi phi - J^1 tau^2) <= c |zeta|.

    Half of the largest per-site sum of the positive parts of the bond
    maxima, each bond maximized over pairs of atoms.
    """
    per_site = np.zeros(model.n_sites)
    for pos, bond in enumerate(model.bonds):
        shift = model.beta * bond.coupling[0] * tau * tau
        worst = max(0.0, float(model.pair_tables[pos].max()) - shift)
        per_site[bond.i] += worst
        per_site[bond.j] += worst
    return float(per_site.max() / 2.0) if model.n_sites else 0.0


def tree_count_constant(
    couplings: CouplingSet, dimension: int, n_max: int = 5
) -> tuple[float, dict[int, int]]:
    """Growth constant max_n count_n^(1/n) of polymers at a fixed site of Z^d."""
    root = (0,) * dimension
    counts = {
        n: len(enumerate_polymers(root, n, couplings)) for n in range(2, n_max + 1)
    }
    constant = max((c ** (1.0 / n) for n, c in counts.items() if c), default=0.0)
    return float(constant), counts


def expansion_report(
    model: ValidatedModel,
    separations: Sequence[int],
    order: int,
    epsilon: float | None = None,
    compare_exact: bool = True,
) -> tuple[list[ClusterRow], dict[str, Any]]:
    """Per-order partial sums at each separation along the first axis.

    Returns:
        Tuple of (rows, metadata) ready for the result writers

    Raises:
        ConfigError: order exceeds the configured polymer_max_size
    """
    _check_order(order)
    threshold = find_eta(model, epsilon=epsilon)
    origin = model.sites[0]
    rows: list[ClusterRow] = []
    for separation in separations:
        x = (origin[0] + separation, *origin[1:])
        result = cluster_two_point(
            model, x, threshold.tau, order, origin=origin, eta=threshold.eta
        )
        exact = ursell(model, [origin, x]).value if compare_exact else None
        for k, (value, tail) in enumerate(
            zip(result.partial_sums, result.tail_bounds, strict=True), start=1
        ):
            rows.append(
                ClusterRow(
                    separation=separation,
                    order=k,
                    value=value,
                    tail_bound=tail,
                    exact=exact,
                    error=abs(exact - value) if exact is not None else None,
                )
            )

    constant, counts = tree_count_constant(
        model.spec.couplings, model.lattice.dimension, order
    )
    metadata = {
        "eta": threshold.eta,
        "tau": threshold.tau,
        "delta": threshold.delta,
        "epsilon": threshold.epsilon,
        "st_bound": threshold.st_bound,
        "polymer_counts": {str(n): c for n, c in counts.items()},
        "tree_count_constant": constant,
        "stability_constant": stability_constant(model, threshold.tau),
    }
    return rows, metadata
