"""Lee-Yang zeros and Laplace-transform wedge certificates."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
import structlog
from numpy.polynomial import polynomial as P
from scipy import optimize

from spinlab.config import get_settings
from spinlab.core.exact import enumerate_sums
from spinlab.core.executor import get_executor
from spinlab.core.model import ValidatedModel, laplace_transform_scaled
from spinlab.exceptions import (
    BudgetExceeded,
    DenominatorZero,
    NotIsingType,
    NoWedgeFound,
    RootFindingFailure,
)
from spinlab.schemas import (
    FugacityPolynomial,
    NoZeroReport,
    SiteMeasure,
    WedgeCertificate,
    WedgeGrid,
    ZeroRecord,
)

logger = structlog.get_logger(__name__)

NEWTON_STEPS = 4
REFINEMENT_PASSES = 2
REFINEMENT_POINTS = 8


def _up_index(model: ValidatedModel) -> int:
    points = sorted(p for (p,) in model.measure.points) if model.n_components == 1 else []
    if model.atom_count != 2 or len(points) != 2 or points != [-1.0, 1.0]:
        raise NotIsingType("fugacity polynomials need two atoms at +1 and -1")
    return int(np.argmax(model.points[:, 0]))


def fugacity_polynomial(model: ValidatedModel) -> FugacityPolynomial:
    """Coefficients c_k = sum over configs with k up spins of exp(-beta H).

    Raises:
        NotIsingType: Measure is not the two-atom measure at +-1
        BudgetExceeded: More sites than the polynomial solver accepts
    """
    up = _up_index(model)
    limit = get_settings().max_fugacity_sites
    if model.n_sites > limit:
        raise BudgetExceeded(
            f"{model.n_sites} sites exceed the fugacity limit {limit}",
            states=model.n_sites,
            budget=limit,
        )
    n = model.n_sites

    # At h = 0 the tilted weights are 1/2 per site, a constant prefactor.
    def kernel(atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        ups = (atoms == up).sum(axis=1)
        return np.bincount(ups, weights=weights.real, minlength=n + 1)

    raw = enumerate_sums(model.with_field(0.0), kernel) * 2.0**n
    scaling = float(raw.max())
    return FugacityPolynomial(
        coefficients=tuple(float(c) for c in raw / scaling),
        scaling=scaling,
        beta=model.beta,
    )


def relative_residual(coefficients: np.ndarray, w: complex) -> float:
    """|P(w)| / sum_k |c_k| |w|^k."""
    scale = P.polyval(abs(w), np.abs(coefficients))
    return float(abs(P.polyval(w, coefficients)) / scale)


def _polish(coefficients: np.ndarray, w: complex) -> complex:
    derivative = P.polyder(coefficients)
    best, best_res = w, relative_residual(coefficients, w)
    for _ in range(NEWTON_STEPS):
        slope = P.polyval(w, derivative)
        if slope == 0:
            break
        w = w - P.polyval(w, coefficients) / slope
        res = relative_residual(coefficients, w)
        if res >= best_res:
            break
        best, best_res = w, res
    return complex(best)


def zeros(model: ValidatedModel) -> list[ZeroRecord]:
    """All fugacity roots z with their principal-branch fields h = Log z / beta.

    Roots are found in w = z^2 from the companion matrix, polished with a
    few Newton steps and verified by their relative residual.

    Raises:
        RootFindingFailure: Some root fails the residual check
    """
    poly = fugacity_polynomial(model)
    c = np.asarray(poly.coefficients)
    tolerance = get_settings().root_residual_tolerance

    records: list[ZeroRecord] = []
    failures: list[float] = []
    for w in P.polyroots(c):
        w = _polish(c, complex(w))
        residual = relative_residual(c, w)
        if residual > tolerance:
            failures.append(residual)
            continue
        root = complex(np.sqrt(w))
        for z in (root, -root):
            records.append(
                ZeroRecord(
                    z=z,
                    modulus=abs(z),
                    h=complex(np.log(z)) / poly.beta,
                    residual=residual,
                )
            )
    if failures:
        raise RootFindingFailure(
            f"{len(failures)} roots fail the residual check",
            residuals=failures,
            tolerance=tolerance,
        )

    records.sort(key=lambda r: (round(math.atan2(r.z.imag, r.z.real), 12), r.modulus))
    logger.debug(
        "zeros_found",
        roots=len(records),
        max_deviation=max(abs(r.modulus - 1.0) for r in records),
    )
    return records


def partition_modulus(poly: FugacityPolynomial, h: complex) -> float:
    """Relative modulus |Z| / (sum of |terms|) at field h."""
    w = complex(np.exp(2.0 * poly.beta * complex(h)))
    return relative_residual(np.asarray(poly.coefficients), w)


def no_zero_suite(
    models: Sequence[ValidatedModel],
    seed: int,
    samples: int = 1000,
    re_range: tuple[float, float] = (1e-3, 5.0),
) -> NoZeroReport:
    """Sample fields with |Re h| in ``re_range`` and count vanishing Z."""
    rng = np.random.default_rng(seed)
    polys = [fugacity_polynomial(model) for model in models]
    tolerance = get_settings().zero_tolerance
    hits, smallest = 0, math.inf
    for _ in range(samples):
        poly = polys[int(rng.integers(len(polys)))]
        re = float(rng.uniform(*re_range)) * (1 if rng.random() < 0.5 else -1)
        im = float(rng.uniform(-math.pi, math.pi)) / poly.beta
        value = partition_modulus(poly, complex(re, im))
        smallest = min(smallest, value)
        hits += value <= tolerance
    return NoZeroReport(samples=samples, hits=hits, min_relative_modulus=smallest, seed=seed)


def _ratio(measure: SiteMeasure, u: float, v: np.ndarray) -> np.ndarray:
    top, _ = laplace_transform_scaled(measure, complex(u))
    bottom, _ = laplace_transform_scaled(measure, u + 1j * np.asarray(v, dtype=float))
    bottom = np.abs(bottom)
    zero = bottom <= 1e-14 * abs(top)
    if np.any(zero):
        raise DenominatorZero(
            f"Laplace transform vanishes on Re z = {u}",
            u=u,
            v=float(np.atleast_1d(v)[np.argmax(zero)]),
        )
    return abs(top) / bottom


def kappa_of_wedge(
    measure: SiteMeasure, u: float, alpha: float, grid_points: int | None = None
) -> float:
    """max_{|v| <= u tan(alpha)} transform(u) / |transform(u + iv)|.

    The ratio is even in v, so only v >= 0 is sampled. The grid is
    doubled until two successive maxima differ by less than the refine
    tolerance, then the best cell is polished by a bounded search.

    Raises:
        DenominatorZero: The transform vanishes on the segment
    """
    if alpha <= 0.0:
        return 1.0
    settings = get_settings()
    v_max = u * math.tan(alpha)
    points = grid_points or settings.kappa_grid_points

    grid = np.linspace(0.0, v_max, points + 1)
    values = _ratio(measure, u, grid)
    best = float(values.max())
    for _ in range(settings.kappa_max_refinements):
        points *= 2
        grid = np.linspace(0.0, v_max, points + 1)
        values = _ratio(measure, u, grid)
        previous, best = best, float(values.max())
        if abs(best - previous) < settings.kappa_refine_tolerance:
            break

    k = int(values.argmax())
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, points)]
    if hi > lo:
        result = optimize.minimize_scalar(
            lambda v: -float(_ratio(measure, u, np.array([v]))[0]),
            bounds=(lo, hi),
            method="bounded",
        )
        best = max(best, -float(result.fun))
    return max(best, 1.0)


def m_factor(measure: SiteMeasure, h: complex) -> float:
    """M_h = transform(Re h) / |transform(h)|."""
    h = complex(h)
    return float(_ratio(measure, h.real, np.array([h.imag]))[0])


def _u_grid(u0: float, points: int, span: float) -> np.ndarray:
    return u0 * span ** (np.arange(1, points + 1) / points)


def uniform_kappa(
    measure: SiteMeasure, u0: float, alphas: Sequence[float]
) -> list[tuple[float, float]]:
    """Largest kappa over the u grid in (u0, span * u0] for each angle."""
    settings = get_settings()
    us = _u_grid(u0, settings.wedge_u_points, settings.wedge_u_span)
    executor = get_executor()
    return [
        (float(alpha), max(executor.map(lambda u: kappa_of_wedge(measure, u, alpha), us)))
        for alpha in alphas
    ]


def _smallest_u(
    measure: SiteMeasure, alpha: float, us: Sequence[float], cap: float
) -> tuple[float, float] | None:
    values = get_executor().map(lambda u: kappa_of_wedge(measure, u, alpha), us)
    for u, kappa in zip(us, values, strict=True):
        if kappa <= cap:
            return float(u), float(kappa)
    return None


def find_wedge_params(
    measure: SiteMeasure, u0: float, kappa_cap: float | None = None
) -> WedgeCertificate:
    """Largest angle and smallest u > u0 with kappa_of_wedge <= kappa_cap.

    u runs over a geometric grid in (u0, span * u0] and alpha over a
    linear grid in (0, pi/2). Two refinement passes then subdivide the
    interval between the winning angle and the first failing one, and
    the interval below the winning u.

    Raises:
        NoWedgeFound: No grid point satisfies the cap
    """
    settings = get_settings()
    cap = kappa_cap if kappa_cap is not None else settings.kappa_cap
    u_points, a_points = settings.wedge_u_points, settings.wedge_alpha_points
    us = _u_grid(u0, u_points, settings.wedge_u_span)
    alphas = (math.pi / 2) * np.arange(1, a_points + 1) / (a_points + 1)

    found: tuple[float, float, float] | None = None
    alpha_fail = math.pi / 2
    for alpha in alphas[::-1]:
        hit = _smallest_u(measure, float(alpha), us, cap)
        if hit is not None:
            found = (float(alpha), *hit)
            break
        alpha_fail = float(alpha)
    if found is None:
        raise NoWedgeFound(
            f"no wedge with kappa <= {cap} above u0={u0}", u0=u0, kappa_cap=cap
        )

    alpha, u, kappa = found
    for _ in range(REFINEMENT_PASSES):
        for candidate in np.linspace(alpha, alpha_fail, REFINEMENT_POINTS + 2)[-2:0:-1]:
            hit = _smallest_u(measure, float(candidate), us, cap)
            if hit is not None:
                alpha, (u, kappa) = float(candidate), hit
                break
            alpha_fail = float(candidate)

        below = us[us < u]
        u_lo = float(below[-1]) if below.size else u0
        finer = np.geomspace(u_lo, u, REFINEMENT_POINTS + 2)[1:-1]
        hit = _smallest_u(measure, alpha, finer, cap)
        if hit is not None:
            u, kappa = hit

    logger.info("wedge_found", u0=u0, alpha=alpha, u=u, kappa=kappa)
    return WedgeCertificate(
        u0=u0,
        alpha_tilde=alpha,
        u_tilde=u,
        kappa=kappa,
        kappa_cap=cap,
        grid=WedgeGrid(
            u_points=u_points,
            alpha_points=a_points,
            kappa_grid_points=settings.kappa_grid_points,
            refinement_passes=REFINEMENT_PASSES,
            u_span=settings.wedge_u_span,
        ),
    )
