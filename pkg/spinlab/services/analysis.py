"""Mass-gap estimates, wedge domains and maximum-principle checks.

The wedge domain is the triangle with apex 0 and vertices
p+- = eta (1 +- i tan alpha), minus the closed disk of radius delta. Its
boundary is the arc gamma_c, the two radial segments gamma_r and the
vertical segment gamma_v at Re z = eta. Powers z^(pi / 2 alpha) are taken
on the principal branch, which never meets the domain.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from typing import Any

import networkx as nx
import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from spinlab.config import get_settings
from spinlab.core.exact import ursell
from spinlab.core.executor import get_executor
from spinlab.core.model import ValidatedModel
from spinlab.core.transfer import spectral_mass_gap
from spinlab.exceptions import (
    ConfigError,
    InsufficientData,
    InvalidSlots,
    NonDecay,
    NotAChain,
    OutsideHalfPlane,
    SampleTooCoarse,
)
from spinlab.schemas import (
    DecayFit,
    MaxPrincipleReport,
    ParameterChoice,
    RatioRow,
    Site,
    WedgeCertificate,
    as_site,
)

logger = structlog.get_logger(__name__)

# Correlations at or below this modulus are treated as exact zeros.
NOISE_FLOOR = 1e-13
MIN_FIT_POINTS = 4
MAX_TREE_POINTS = 6
# Fraction of the way from alpha0 to pi/2 used for complex fields.
ALPHA_MARGIN = 0.05


class WedgeDomain(BaseModel):
    """Truncated triangle Sigma_alpha with its boundary samplers."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0.0, lt=math.pi / 2)
    delta: float = Field(..., gt=0.0, lt=1.0)
    eta: float = Field(..., ge=1.0)

    @model_validator(mode="after")
    def _delta_below_eta(self) -> "WedgeDomain":
        if self.delta >= self.eta:
            raise ValueError("delta must be smaller than eta")
        return self

    @property
    def exponent(self) -> float:
        """pi / (2 alpha)."""
        return math.pi / (2.0 * self.alpha)

    @property
    def corners(self) -> tuple[complex, complex]:
        """(p-, p+)."""
        height = self.eta * math.tan(self.alpha)
        return complex(self.eta, -height), complex(self.eta, height)

    @property
    def radial_end(self) -> float:
        """Modulus of p+-."""
        return self.eta / math.cos(self.alpha)

    def gamma_c(self, n: int, centered: bool = False) -> np.ndarray:
        """Arc of radius delta from angle -alpha to alpha."""
        theta = -self.alpha + 2.0 * self.alpha * _unit_grid(n, centered)
        return self.delta * np.exp(1j * theta)

    def gamma_r(self, n: int, centered: bool = False) -> np.ndarray:
        """Both radial segments, n points each, lower one first."""
        r = self.delta + (self.radial_end - self.delta) * _unit_grid(n, centered)
        lower = r * complex(math.cos(self.alpha), -math.sin(self.alpha))
        upper = r * complex(math.cos(self.alpha), math.sin(self.alpha))
        if not centered:
            lower[-1], upper[-1] = self.corners
        return np.concatenate([lower, upper])

    def gamma_v(self, n: int, centered: bool = False) -> np.ndarray:
        """Vertical segment from p- to p+."""
        height = self.eta * math.tan(self.alpha)
        v = -height + 2.0 * height * _unit_grid(n, centered)
        return self.eta + 1j * v

    def boundary(self, n: int, centered: bool = False) -> np.ndarray:
        """About n boundary points split between the pieces by length.

        With ``centered`` the pieces are sampled at cell midpoints, so no
        corner is hit.
        """
        arc = 2.0 * self.alpha * self.delta
        radial = self.radial_end - self.delta
        vertical = 2.0 * self.eta * math.tan(self.alpha)
        total = arc + 2.0 * radial + vertical
        least = 1 if centered else 2
        n_c = max(least, round(n * arc / total))
        n_r = max(least, round(n * radial / total))
        n_v = max(least, n - n_c - 2 * n_r)
        return np.concatenate(
            [
                self.gamma_c(n_c, centered),
                self.gamma_r(n_r, centered),
                self.gamma_v(n_v, centered),
            ]
        )

    def interior(self, n: int) -> np.ndarray:
        """Cell-centered polar grid of at least n strictly interior points."""
        n_theta = max(2, round(math.sqrt(n)))
        n_rad = max(1, math.ceil(n / n_theta))
        theta = -self.alpha + 2.0 * self.alpha * _unit_grid(n_theta, True)
        far = self.eta / np.cos(theta)
        frac = _unit_grid(n_rad, True)
        r = self.delta + np.outer(far - self.delta, frac)
        return (r * np.exp(1j * theta)[:, None]).ravel()

    def contains(self, z: complex) -> bool:
        """Whether z lies in the open domain."""
        z = complex(z)
        return (
            z.real > 0.0
            and z.real < self.eta
            and abs(z) > self.delta
            and abs(math.atan2(z.imag, z.real)) < self.alpha
        )


def _unit_grid(n: int, centered: bool) -> np.ndarray:
    if centered:
        return (np.arange(n) + 0.5) / n
    return np.linspace(0.0, 1.0, n)


def wedge_domain(choice: ParameterChoice) -> WedgeDomain:
    """Domain described by a parameter choice."""
    return WedgeDomain(alpha=choice.alpha, delta=choice.delta, eta=choice.eta)


def phi_alpha(theta: Any, alpha: float) -> Any:
    """cos(theta pi / 2 alpha) / cos(theta)^(pi / 2 alpha)."""
    p = math.pi / (2.0 * alpha)
    theta = np.asarray(theta, dtype=float)
    return np.cos(theta * p) / np.cos(theta) ** p


def epsilon_of_alpha(alpha: float, m0: float, c1: float, grid_points: int = 1025) -> float:
    """min(1, m0 / (c1^(pi / 2 alpha) sup_{|theta| <= alpha} |phi_alpha|))."""
    theta = np.linspace(-alpha, alpha, grid_points)
    sup = float(np.abs(phi_alpha(theta, alpha)).max())
    return min(1.0, m0 / (c1 ** (math.pi / (2.0 * alpha)) * sup))


def explicit_lower_bound(h: complex, alpha: float, m0: float, c1: float) -> float:
    """epsilon(alpha) rho (1 - rho^(pi / 2 alpha - 1)) with rho = Re h^(pi / 2 alpha)."""
    p = math.pi / (2.0 * alpha)
    rho = (complex(h) ** p).real
    return epsilon_of_alpha(alpha, m0, c1) * rho * (1.0 - rho ** (p - 1.0))


def alpha0(h: complex) -> float:
    """Infimum of the angles alpha whose wedge contains h, |arg h|."""
    h = complex(h)
    if h.real <= 0.0:
        raise OutsideHalfPlane("wedges need Re h > 0", field_re=h.real, field_im=h.imag)
    return abs(math.atan2(h.imag, h.real))


def select_parameters(
    h: complex,
    certificate: WedgeCertificate,
    m0: float,
    c1: float = 1.0,
    gamma_v_points: int = 257,
) -> ParameterChoice:
    """Choose (delta, eta, alpha, epsilon) for the domain around h.

    Real h uses delta = min(1/10, h/2), eta = u_tilde and alpha =
    alpha_tilde from a certificate computed at u0 = max(h, c1). Complex h
    with Re h < c1 uses eta = c1, an angle strictly above alpha0(h) and
    delta = min(1/10, Re h^(pi / 2 alpha)). Complex h with Re h >= c1 keeps
    the real-field delta and eta with the widened angle. In every case
    epsilon = min(1, m0 / sup_{gamma_v} |Re z^(pi / 2 alpha)|).

    Raises:
        OutsideHalfPlane: Re h <= 0
        ConfigError: c1 < 1, or the certificate does not cover h
    """
    h = complex(h)
    a0 = alpha0(h)
    if c1 < 1.0:
        raise ConfigError(f"c1 must be at least 1, got {c1}")

    if h.imag == 0.0:
        branch = "real"
        delta = min(0.1, h.real / 2.0)
        eta = certificate.u_tilde
        alpha = certificate.alpha_tilde
    else:
        branch = "complex"
        alpha = max(certificate.alpha_tilde, a0 + ALPHA_MARGIN * (math.pi / 2 - a0))
        if h.real < c1:
            eta = c1
            delta = min(0.1, (h ** (math.pi / (2.0 * alpha))).real)
        else:
            eta = certificate.u_tilde
            delta = min(0.1, h.real / 2.0)

    domain = WedgeDomain(alpha=alpha, delta=delta, eta=eta)
    if not domain.contains(h):
        raise ConfigError(
            "wedge certificate does not cover the field",
            field_re=h.real,
            field_im=h.imag,
            u0=certificate.u0,
        )
    top = float(np.abs((domain.gamma_v(gamma_v_points) ** domain.exponent).real).max())
    epsilon = min(1.0, m0 / top)
    logger.debug("parameters_selected", branch=branch, alpha=alpha, delta=delta, eta=eta)
    return ParameterChoice(
        delta=delta,
        eta=eta,
        alpha=alpha,
        epsilon=epsilon,
        alpha0=a0,
        c1=c1,
        branch=branch,
    )


def prefactor(z: Any, epsilon: float, alpha: float, distance: float) -> Any:
    """exp(epsilon z^(pi / 2 alpha) |x|) on the principal branch."""
    z = np.asarray(z, dtype=complex)
    return np.exp(epsilon * np.power(z, math.pi / (2.0 * alpha)) * distance)


def F_function(
    model: ValidatedModel,
    x: Any,
    epsilon: float,
    alpha: float,
    z: complex,
    origin: Any = None,
    components: tuple[int, int] = (1, 1),
) -> complex:
    """Prefactor times the finite-volume connected two-point function at field z.

    Raises:
        OutsideHalfPlane: Re z <= 0
    """
    z = complex(z)
    if z.real <= 0.0:
        raise OutsideHalfPlane("F is evaluated on Re z > 0", field_re=z.real, field_im=z.imag)
    start = model.sites[0] if origin is None else as_site(origin)
    end = as_site(x)
    distance = model.lattice.distance(start, end)
    value = ursell(model.with_field(z), [start, end], list(components)).value
    return complex(prefactor(z, epsilon, alpha, distance)) * value


def max_principle_check(
    model: ValidatedModel,
    x: Any,
    domain: WedgeDomain,
    epsilon: float,
    boundary_points: int | None = None,
    interior_points: int | None = None,
    refinements: int | None = None,
    origin: Any = None,
    components: tuple[int, int] = (1, 1),
    extra_interior: Sequence[complex] = (),
    centered: bool = False,
) -> MaxPrincipleReport:
    """Compare max |F| on the boundary with |F| at interior samples.

    A failing comparison is retried with both densities doubled, up to
    ``refinements`` times; ``extra_interior`` points are checked on every
    attempt.

    Raises:
        SampleTooCoarse: The interior bound still fails after refinement
    """
    settings = get_settings()
    n_b = boundary_points or settings.boundary_points
    n_i = interior_points or settings.interior_points
    retries = settings.max_principle_refinements if refinements is None else refinements
    tolerance = settings.max_principle_tolerance
    executor = get_executor()
    extra = [complex(z) for z in extra_interior]

    def evaluate(points: np.ndarray) -> np.ndarray:
        values = executor.map(
            lambda z: F_function(model, x, epsilon, domain.alpha, z, origin, components),
            [complex(z) for z in points],
        )
        return np.abs(np.asarray(values))

    def attempt(scale: int, number: int) -> MaxPrincipleReport:
        boundary = domain.boundary(n_b * scale, centered)
        interior = np.concatenate([domain.interior(n_i * scale), np.asarray(extra, dtype=complex)])
        b_vals, i_vals = evaluate(boundary), evaluate(interior)
        b_max, i_max = float(b_vals.max()), float(i_vals.max())
        margin = 1.0 - i_max / b_max if b_max > 0.0 else 0.0
        report = MaxPrincipleReport(
            boundary_max=b_max,
            interior_max=i_max,
            margin=margin,
            boundary_argmax=complex(boundary[int(b_vals.argmax())]),
            interior_argmax=complex(interior[int(i_vals.argmax())]),
            boundary_points=len(boundary),
            interior_points=len(interior),
            attempts=number,
            passed=i_max <= b_max * (1.0 + tolerance),
        )
        if not report.passed:
            logger.warning(
                "max_principle_violation",
                attempt=number,
                boundary_max=b_max,
                interior_max=i_max,
            )
            raise SampleTooCoarse(
                "interior modulus exceeds the boundary maximum",
                **report.model_dump(),
            )
        return report

    for retry in Retrying(
        stop=stop_after_attempt(1 + retries),
        retry=retry_if_exception_type(SampleTooCoarse),
        reraise=True,
    ):
        with retry:
            number = retry.retry_state.attempt_number
            report = attempt(2 ** (number - 1), number)
    logger.info("max_principle_passed", margin=report.margin, attempts=report.attempts)
    return report


def _fit(
    distances: Sequence[float], values: Sequence[complex]
) -> tuple[DecayFit, np.ndarray, np.ndarray]:
    d = np.asarray(distances, dtype=float)
    moduli = np.abs(np.asarray(values, dtype=complex))
    with np.errstate(divide="ignore"):
        logs = np.log(moduli)
    if d.size == 0:
        raise InsufficientData("no separations fit the window", usable=0)
    if moduli.max() <= NOISE_FLOOR:
        window = (float(d.min()), float(d.max()))
        sentinel = DecayFit(
            distances=tuple(d),
            log_moduli=tuple(logs),
            slope=math.inf,
            intercept=math.nan,
            window=window,
            residual=0.0,
        )
        return sentinel, d[:0], moduli[:0]

    usable = moduli > NOISE_FLOOR
    d, moduli, logs = d[usable], moduli[usable], logs[usable]
    if np.unique(d).size < MIN_FIT_POINTS:
        raise InsufficientData(
            f"{np.unique(d).size} usable distances, {MIN_FIT_POINTS} needed",
            usable=int(np.unique(d).size),
        )
    fit = stats.linregress(d, -logs)
    residual = float(np.sqrt(np.mean((-logs - (fit.slope * d + fit.intercept)) ** 2)))
    if fit.slope < 0.0:
        raise NonDecay("correlations grow with distance", slope=float(fit.slope))
    result = DecayFit(
        distances=tuple(float(v) for v in d),
        log_moduli=tuple(float(v) for v in logs),
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        window=(float(d.min()), float(d.max())),
        residual=residual,
    )
    return result, d, moduli


def fit_window(model: ValidatedModel) -> tuple[Site, list[int]]:
    """Origin and separations along axis 0 used by two-point fits.

    Periodic boxes use 1 <= x <= L/4 from site 0. Free boxes place the
    origin r + 1 sites in and keep both points at least r + 1 sites away
    from either end, r being the coupling range.
    """
    length = model.lattice.dims[0]
    rest = (0,) * (model.lattice.dimension - 1)
    if model.lattice.periodic:
        return (0, *rest), list(range(1, length // 4 + 1))
    pad = model.spec.couplings.range + 1
    last = length - 1 - pad
    return (pad, *rest), list(range(1, last - pad + 1))


def _two_point_samples(
    model: ValidatedModel, i: int, j: int
) -> tuple[list[int], list[complex]]:
    origin, separations = fit_window(model)
    values = [
        ursell(model, [origin, (origin[0] + x, *origin[1:])], [i, j]).value
        for x in separations
    ]
    return separations, values


def mass_gap_fit(
    models: ValidatedModel | Sequence[ValidatedModel],
    h: complex | None = None,
    i: int = 1,
    j: int = 1,
) -> DecayFit:
    """Fit -log|<phi^i_0 ; phi^j_x>| against x on each volume.

    The returned fit comes from the last (largest) volume and lists the
    slope of every volume that had enough usable separations.

    Raises:
        InsufficientData: Fewer than four usable separations
        NonDecay: Negative fitted slope
    """
    sequence = [models] if isinstance(models, ValidatedModel) else list(models)
    if not sequence:
        raise InsufficientData("no volumes to fit")
    if h is not None:
        sequence = [model.with_field(h) for model in sequence]

    slopes: list[tuple[int, float]] = []
    for model in sequence[:-1]:
        try:
            fit, _, _ = _fit(*_two_point_samples(model, i, j))
        except InsufficientData:
            logger.debug("volume_skipped", sites=model.n_sites)
            continue
        slopes.append((model.n_sites, fit.slope))

    largest = sequence[-1]
    fit, _, _ = _fit(*_two_point_samples(largest, i, j))
    slopes.append((largest.n_sites, fit.slope))
    logger.info("mass_gap_fit", sites=largest.n_sites, slope=fit.slope, residual=fit.residual)
    return fit.model_copy(update={"volume_slopes": tuple(slopes)})


def tree_length(points: Sequence[Any]) -> int:
    """Minimal total Manhattan length over labeled trees on the points.

    Trees are enumerated through their Pruefer sequences.
    """
    sites = [as_site(p) for p in points]
    n = len(sites)
    if not 1 <= n <= MAX_TREE_POINTS:
        raise InvalidSlots(f"tree lengths need 1..{MAX_TREE_POINTS} points, got {n}")
    if n == 1:
        return 0

    def manhattan(a: int, b: int) -> int:
        return sum(abs(u - v) for u, v in zip(sites[a], sites[b], strict=True))

    if n == 2:
        return manhattan(0, 1)
    return min(
        sum(manhattan(a, b) for a, b in nx.from_prufer_sequence(list(seq)).edges)
        for seq in itertools.product(range(n), repeat=n - 2)
    )


def collinear_families(
    model: ValidatedModel, n: int, lengths: Sequence[int], center: Any = None
) -> list[tuple[Site, ...]]:
    """n points on axis 0 spread over tree length l around ``center``.

    Raises:
        InvalidSlots: A family leaves the box
    """
    dims = model.lattice.dims
    mid = tuple(side // 2 for side in dims) if center is None else as_site(center)
    families = []
    for ell in lengths:
        first = mid[0] - ell // 2
        positions = [first + (k * ell) // (n - 1) for k in range(n)]
        if positions[0] < 0 or positions[-1] >= dims[0]:
            raise InvalidSlots(f"tree length {ell} does not fit a side of {dims[0]}")
        families.append(tuple((p, *mid[1:]) for p in positions))
    return families


def tree_decay_fit(
    model: ValidatedModel,
    site_families: Sequence[Sequence[Any]],
    components: Sequence[int] | None = None,
) -> DecayFit:
    """Fit -log|u_n| against the tree length of each configuration.

    ``envelope`` is the smallest c with |u_n| <= c exp(-slope * l) on every
    sample.

    Raises:
        InvalidSlots: Mixed or unsupported point counts
        InsufficientData: Fewer than four distinct tree lengths
        NonDecay: Negative fitted slope
    """
    counts = {len(family) for family in site_families}
    if len(counts) != 1 or not 2 <= next(iter(counts)) <= 4:
        raise InvalidSlots(f"families need a common size in 2..4, got {sorted(counts)}")
    lengths = [tree_length(family) for family in site_families]
    values = [ursell(model, list(family), components).value for family in site_families]

    fit, ells, moduli = _fit(lengths, values)
    if fit.is_sentinel:
        return fit
    envelope = float(np.max(moduli * np.exp(fit.slope * ells)))
    logger.info("tree_decay_fit", slope=fit.slope, envelope=envelope, residual=fit.residual)
    return fit.model_copy(update={"envelope": envelope})


def ratio_scan(
    model: ValidatedModel,
    fields: Sequence[complex],
    alpha: float | None = None,
    m0: float = 1.0,
    c1: float = 1.0,
) -> tuple[list[RatioRow], float]:
    """m(h) / Re h over a field grid, with the grid infimum.

    m comes from the transfer operator when the model is a chain or strip
    and from ``mass_gap_fit`` otherwise. With ``alpha`` given, the explicit
    lower bound is reported for fields with Re h < c1 inside the wedge.

    Raises:
        OutsideHalfPlane: Some grid point has Re h <= 0
    """
    grid = [complex(h) for h in fields]
    for h in grid:
        if h.real <= 0.0:
            raise OutsideHalfPlane("ratio scans need Re h > 0", field_re=h.real, field_im=h.imag)

    def evaluate(h: complex) -> RatioRow:
        try:
            gap, method = spectral_mass_gap(model.with_field(h)), "spectral"
        except NotAChain:
            gap, method = mass_gap_fit(model, h).slope, "fit"
        bound = None
        if alpha is not None and h.real < c1 and alpha0(h) < alpha:
            bound = explicit_lower_bound(h, alpha, m0, c1)
        return RatioRow(h=h, mass_gap=gap, ratio=gap / h.real, method=method, lower_bound=bound)

    rows = get_executor().map(evaluate, grid)
    infimum = min(row.ratio for row in rows)
    logger.info("ratio_scan_done", points=len(rows), infimum=infimum)
    return rows, infimum
