"""Pydantic schemas for models, results and run configuration."""

import itertools
import math
from enum import Enum
from typing import Any, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    field_validator,
    model_validator,
)

Site = tuple[int, ...]


def as_site(value: Any) -> Site:
    """Normalize an int or an int sequence to a site tuple."""
    if isinstance(value, str):
        value = [part for part in value.replace(" ", "").split(",") if part]
    if isinstance(value, int | float):
        return (int(value),)
    return tuple(int(v) for v in value)


def canonical_offset(offset: Site) -> Site:
    """Pick the representative of {e, -e} whose first nonzero entry is positive."""
    for value in offset:
        if value > 0:
            return offset
        if value < 0:
            return tuple(-v for v in offset)
    raise ValueError("zero offset does not define a bond")


class Boundary(str, Enum):
    """Boundary condition enumeration."""

    FREE = "free"
    PERIODIC = "periodic"


class Command(str, Enum):
    """CLI command enumeration."""

    ENUMERATE = "enumerate"
    URSELL = "ursell"
    TRANSFER_SCAN = "transfer-scan"
    ZEROS = "zeros"
    CHECK_C1 = "check-c1"
    CLUSTER = "cluster"
    MAX_PRINCIPLE = "max-principle"
    TREE_DECAY = "tree-decay"
    RATIO_SCAN = "ratio-scan"


class OutputFormat(str, Enum):
    """Result file format enumeration."""

    CSV = "csv"
    JSON = "json"


class SiteMeasure(BaseModel):
    """Atomic a-priori single-spin measure on R^N."""

    model_config = ConfigDict(frozen=True)

    points: tuple[tuple[float, ...], ...] = Field(..., min_length=1)
    weights: tuple[float, ...] = Field(..., min_length=1)

    @field_validator("points", mode="before")
    @classmethod
    def _scalar_points(cls, value: Any) -> Any:
        return [(p,) if isinstance(p, int | float) else p for p in value]

    @model_validator(mode="after")
    def _check_atoms(self) -> "SiteMeasure":
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights must have the same length")
        dims = {len(p) for p in self.points}
        if len(dims) != 1 or 0 in dims:
            raise ValueError("all points must share one positive dimension")
        if any(not (w > 0 and math.isfinite(w)) for w in self.weights):
            raise ValueError("atom weights must be positive and finite")
        return self

    @property
    def n_components(self) -> int:
        """Number of spin components N."""
        return len(self.points[0])

    @property
    def atom_count(self) -> int:
        """Number of atoms q."""
        return len(self.points)

    @property
    def sup_norm(self) -> float:
        """Largest Euclidean norm over the support."""
        return max(math.hypot(*p) for p in self.points)


class CouplingSet(BaseModel):
    """Finite-range pair couplings.

    ``entries`` maps translation-invariant offsets to J vectors. ``pairs``
    maps explicit unordered site pairs to J vectors and replaces the
    offset-derived value on that pair.
    """

    model_config = ConfigDict(frozen=True)

    range: int = Field(default=2, ge=1)
    entries: dict[Site, tuple[float, ...]] = Field(default_factory=dict)
    pairs: dict[tuple[Site, Site], tuple[float, ...]] = Field(default_factory=dict)

    @field_validator("entries", mode="before")
    @classmethod
    def _canonical_entries(cls, value: Any) -> dict[Site, tuple[float, ...]]:
        result: dict[Site, tuple[float, ...]] = {}
        for key, coupling in dict(value).items():
            offset = canonical_offset(as_site(key))
            if offset in result:
                raise ValueError(f"offset {offset} listed together with its negative")
            result[offset] = _as_vector(coupling)
        return result

    @field_validator("pairs", mode="before")
    @classmethod
    def _canonical_pairs(cls, value: Any) -> dict[tuple[Site, Site], tuple[float, ...]]:
        result: dict[tuple[Site, Site], tuple[float, ...]] = {}
        for key, coupling in dict(value).items():
            if isinstance(key, str):
                key = key.split("|")
            x, y = (as_site(part) for part in key)
            if x == y:
                raise ValueError(f"pair {x} couples a site to itself")
            pair = (min(x, y), max(x, y))
            if pair in result:
                raise ValueError(f"pair {pair} listed twice")
            result[pair] = _as_vector(coupling)
        return result


def _as_vector(value: Any) -> tuple[float, ...]:
    if isinstance(value, int | float):
        return (float(value),)
    return tuple(float(v) for v in value)


class LatticeBox(BaseModel):
    """Finite box of Z^d with free or periodic boundary."""

    model_config = ConfigDict(frozen=True)

    dims: tuple[int, ...] = Field(..., min_length=1)
    boundary: Boundary = Boundary.FREE

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(side < 1 for side in value):
            raise ValueError("side lengths must be positive")
        return value

    @property
    def dimension(self) -> int:
        """Lattice dimension d."""
        return len(self.dims)

    @property
    def n_sites(self) -> int:
        """Number of sites."""
        return math.prod(self.dims)

    @property
    def periodic(self) -> bool:
        """Whether bonds wrap around the box."""
        return self.boundary is Boundary.PERIODIC

    def sites(self) -> list[Site]:
        """All sites in lexicographic order."""
        return list(itertools.product(*(range(side) for side in self.dims)))

    def contains(self, site: Site) -> bool:
        """Check whether a site lies in the box."""
        return len(site) == self.dimension and all(
            0 <= c < side for c, side in zip(site, self.dims, strict=True)
        )

    def shift(self, site: Site, offset: Site) -> Site | None:
        """Translate a site, wrapping for periodic boxes.

        Returns:
            The translated site, or None when it leaves a free box
        """
        moved = tuple(c + o for c, o in zip(site, offset, strict=True))
        if self.periodic:
            return tuple(c % side for c, side in zip(moved, self.dims, strict=True))
        return moved if self.contains(moved) else None

    def distance(self, x: Site, y: Site) -> int:
        """Manhattan distance, wrapped per coordinate on periodic boxes."""
        total = 0
        for a, b, side in zip(x, y, self.dims, strict=True):
            step = abs(a - b)
            if self.periodic:
                step = min(step % side, side - step % side)
            total += step
        return total


class ModelSpec(BaseModel):
    """Lattice spin model at inverse temperature beta and complex field h."""

    model_config = ConfigDict(frozen=True)

    lattice: LatticeBox
    measure: SiteMeasure
    couplings: CouplingSet
    beta: PositiveFloat = 1.0
    field: complex = 0j


class UrsellResult(BaseModel):
    """Finite-volume connected n-point function."""

    model_config = ConfigDict(frozen=True)

    sites: tuple[Site, ...] = Field(..., min_length=1)
    components: tuple[int, ...] = Field(..., min_length=1)
    value: complex
    dims: tuple[int, ...]
    boundary: Boundary
    beta: float
    field: complex

    @model_validator(mode="after")
    def _finite(self) -> "UrsellResult":
        if len(self.sites) != len(self.components):
            raise ValueError("one component per site is required")
        if not (math.isfinite(self.value.real) and math.isfinite(self.value.imag)):
            raise ValueError("Ursell value is not finite")
        return self

    @property
    def order(self) -> int:
        """Number of points n."""
        return len(self.sites)


class FugacityPolynomial(BaseModel):
    """Ising partition function as a polynomial in w = z^2, z = exp(beta h).

    The unnormalized partition function is
    ``scaling * z^-n * sum_k coefficients[k] * z^(2k)``.
    """

    model_config = ConfigDict(frozen=True)

    coefficients: tuple[float, ...] = Field(..., min_length=2)
    scaling: PositiveFloat
    beta: PositiveFloat

    @property
    def degree(self) -> int:
        """Degree in w, equal to the number of sites."""
        return len(self.coefficients) - 1

    @property
    def is_palindromic(self) -> bool:
        """Check c_k = c_{n-k} to rounding."""
        c = self.coefficients
        return all(
            math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-300)
            for a, b in zip(c, reversed(c), strict=True)
        )


class NoZeroReport(BaseModel):
    """Outcome of a |Z| > 0 sweep over random fields."""

    model_config = ConfigDict(frozen=True)

    samples: int
    hits: int
    min_relative_modulus: float
    seed: int


class ZeroRecord(BaseModel):
    """Fugacity root with its field image and residual."""

    model_config = ConfigDict(frozen=True)

    z: complex
    modulus: float
    h: complex
    residual: float


class WedgeGrid(BaseModel):
    """Resolution used to issue a wedge certificate."""

    model_config = ConfigDict(frozen=True)

    u_points: int
    alpha_points: int
    kappa_grid_points: int
    refinement_passes: int
    u_span: float


class WedgeCertificate(BaseModel):
    """Numerical certificate for the vertical-segment Laplace bound."""

    model_config = ConfigDict(frozen=True)

    u0: PositiveFloat
    alpha_tilde: float = Field(..., gt=0.0, lt=math.pi / 2)
    u_tilde: PositiveFloat
    kappa: float = Field(..., ge=1.0)
    kappa_cap: float
    grid: WedgeGrid

    @model_validator(mode="after")
    def _above_u0(self) -> "WedgeCertificate":
        if self.u_tilde <= self.u0:
            raise ValueError("u_tilde must exceed u0")
        return self


class DecayFit(BaseModel):
    """Linear fit of -log|correlation| against distance or tree length.

    ``slope`` is ``inf`` when all correlations are numerically zero.
    """

    model_config = ConfigDict(frozen=True)

    distances: tuple[float, ...]
    log_moduli: tuple[float, ...]
    slope: float
    intercept: float
    window: tuple[float, float]
    residual: float
    envelope: float | None = None
    volume_slopes: tuple[tuple[int, float], ...] = ()

    @property
    def is_sentinel(self) -> bool:
        """True when correlations vanished identically."""
        return math.isinf(self.slope)


class ScanRow(BaseModel):
    """Spectral data of a chain at one field value."""

    model_config = ConfigDict(frozen=True)

    h: complex
    mass_gap: float
    lambda1: complex
    lambda2: complex | None = None
    degenerate: bool = False


class RatioRow(BaseModel):
    """Mass gap over Re h at one field value."""

    model_config = ConfigDict(frozen=True)

    h: complex
    mass_gap: float
    ratio: float
    method: Literal["spectral", "fit"]
    lower_bound: float | None = None


class EtaResult(BaseModel):
    """Field threshold above which activities are small."""

    model_config = ConfigDict(frozen=True)

    eta: float
    tau: float
    delta: float
    epsilon: float
    n_max: int
    st_bound: float


class ClusterResult(BaseModel):
    """Truncated polymer-gas series for a connected two-point function.

    ``partial_sums[k-1]`` and ``tail_bounds[k-1]`` refer to truncation at
    total polymer size k.
    """

    model_config = ConfigDict(frozen=True)

    value: complex
    tail_bound: float
    partial_sums: tuple[complex, ...]
    tail_bounds: tuple[float, ...]
    epsilon_prime: float
    st_bound: float
    tau: float
    order: int
    clusters: int


class ClusterRow(BaseModel):
    """One truncation order of the cluster series at one separation."""

    model_config = ConfigDict(frozen=True)

    separation: int
    order: int
    value: complex
    tail_bound: float
    exact: complex | None = None
    error: float | None = None


class ParameterChoice(BaseModel):
    """Domain and exponent parameters for a field value."""

    model_config = ConfigDict(frozen=True)

    delta: float
    eta: float
    alpha: float
    epsilon: float
    alpha0: float
    c1: float
    branch: Literal["real", "complex"]


class MaxPrincipleReport(BaseModel):
    """Outcome of a boundary-versus-interior modulus comparison."""

    model_config = ConfigDict(frozen=True)

    boundary_max: float
    interior_max: float
    margin: float
    boundary_argmax: complex
    interior_argmax: complex
    boundary_points: int
    interior_points: int
    attempts: int
    passed: bool


# Run configuration


class MeasureAtoms(BaseModel):
    """Inline atom list for a custom single-site measure."""

    points: list[list[float] | float]
    weights: list[float]


class PairCoupling(BaseModel):
    """Explicit coupling on one site pair."""

    x: list[int] | int
    y: list[int] | int
    J: list[float] | float


class ModelConfig(BaseModel):
    """Model table of a run configuration."""

    dims: list[int] = Field(..., min_length=1)
    boundary: Boundary = Boundary.FREE
    beta: PositiveFloat = 1.0
    field_re: float = 0.0
    field_im: float = 0.0
    measure: str | MeasureAtoms = "ising"
    couplings: dict[str, list[float] | float] = Field(default_factory=lambda: {"1": 1.0})
    pairs: list[PairCoupling] = Field(default_factory=list)
    range: int = Field(default=2, ge=1)

    @property
    def field(self) -> complex:
        """Complex field h."""
        return complex(self.field_re, self.field_im)


class UrsellOptions(BaseModel):
    """Options of the ursell command."""

    sites: list[list[int] | int] = Field(..., min_length=2, max_length=6)
    components: list[int] | None = None


class ScanOptions(BaseModel):
    """Field grid of the scan commands."""

    h_re: list[float] = Field(..., min_length=1)
    h_im: list[float] = Field(default_factory=lambda: [0.0])
    separations: list[int] = Field(default_factory=list)


class ZerosOptions(BaseModel):
    """Options of the zeros command."""

    instances: int = Field(default=0, ge=0)
    j_min: float = Field(default=0.1, ge=0.0)
    j_max: float = Field(default=1.0, gt=0.0)


class WedgeOptions(BaseModel):
    """Options of the check-c1 command."""

    u0: list[PositiveFloat] = Field(default_factory=lambda: [1.0])
    kappa_cap: float = Field(default=10.0, gt=1.0)
    gamma_v_points: int = Field(default=257, ge=2)


class ClusterOptions(BaseModel):
    """Options of the cluster command."""

    separations: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    order: int = Field(default=4, ge=1)
    epsilon: float = Field(default=1.0 / 6.0, gt=0.0, lt=1.0)
    compare_exact: bool = True


class MaxPrincipleOptions(BaseModel):
    """Options of the max-principle command."""

    x: list[int] | int = 3
    fields: list[list[float]] = Field(default_factory=lambda: [[1.0, 0.0]])
    m0: PositiveFloat = 1.0
    c1: float | None = None
    boundary_points: int = Field(default=512, ge=8)
    interior_points: int = Field(default=128, ge=1)
    refinements: int = Field(default=1, ge=0)


class TreeDecayOptions(BaseModel):
    """Options of the tree-decay command."""

    n_points: int = Field(default=3, ge=2, le=4)
    lengths: list[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])
    center: list[int] | int | None = None
    components: list[int] | None = None


class RunConfig(BaseModel):
    """Full run configuration read from a TOML file."""

    command: Command
    model: ModelConfig
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)
    format: OutputFormat = OutputFormat.CSV
    out: str = "results"
    enumeration_budget: int | None = Field(default=None, ge=1)
    polymer_budget: int | None = Field(default=None, ge=1)
    ursell: UrsellOptions | None = None
    scan: ScanOptions | None = None
    zeros: ZerosOptions = Field(default_factory=ZerosOptions)
    wedge: WedgeOptions = Field(default_factory=WedgeOptions)
    cluster: ClusterOptions = Field(default_factory=ClusterOptions)
    max_principle: MaxPrincipleOptions = Field(default_factory=MaxPrincipleOptions)
    tree_decay: TreeDecayOptions = Field(default_factory=TreeDecayOptions)

    @model_validator(mode="after")
    def _required_tables(self) -> "RunConfig":
        if self.command is Command.URSELL and self.ursell is None:
            raise ValueError("command 'ursell' requires an [ursell] table")
        if (
            self.command in (Command.TRANSFER_SCAN, Command.RATIO_SCAN)
            and self.scan is None
        ):
            raise ValueError(f"command '{self.command.value}' requires a [scan] table")
        return self


class ResultDocument(BaseModel):
    """Versioned JSON result document."""

    schema_version: Literal[1] = 1
    command: Command
    seed: int
    metadata: dict[str, Any] = Field(default_factory=dict)
    rows: list[dict[str, Any]]
