"""SpinLab pipelines and logging setup."""

import logging
import math
import sys
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from typing import Any

import numpy as np
import orjson
import structlog
from pydantic import ValidationError

from spinlab import __version__
from spinlab.config import get_settings
from spinlab.core.cluster import expansion_report
from spinlab.core.exact import partition_function, thermal_average, ursell
from spinlab.core.leeyang import find_wedge_params, m_factor, no_zero_suite, zeros
from spinlab.core.model import (
    ValidatedModel,
    random_ising_instance,
    reflect_field,
    reflection_sign,
    spec_from_config,
    validate_model,
)
from spinlab.core.transfer import transfer_scan, two_point_transfer
from spinlab.exceptions import ConfigParse, NumericalFailure, OutsideHalfPlane, SpinLabError
from spinlab.schemas import Command, OutputFormat, RunConfig, as_site
from spinlab.services.analysis import (
    collinear_families,
    max_principle_check,
    ratio_scan,
    select_parameters,
    tree_decay_fit,
    tree_length,
    wedge_domain,
)
from spinlab.services.emitter import emit, sanitize

logger = structlog.get_logger(__name__)

Rows = list[Any]
Pipeline = Callable[[RunConfig, ValidatedModel, dict[str, Any]], Rows]

REFLECTION_NOTE = "Re h < 0 mapped to -h by the global spin flip"


def configure_logging(level: str | None = None, json: bool | None = None) -> None:
    """Configure structlog to write key/value events to standard error."""
    settings = get_settings()
    level = (level or settings.log_level).upper()
    json = settings.log_json if json is None else json
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s", force=True)
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer()
            if json
            else structlog.dev.ConsoleRenderer(colors=False),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


@contextmanager
def settings_overrides(**values: Any) -> Iterator[None]:
    """Temporarily replace settings fields; None values are ignored."""
    settings = get_settings()
    changed = {key: value for key, value in values.items() if value is not None}
    saved = {key: getattr(settings, key) for key in changed}
    for key, value in changed.items():
        setattr(settings, key, value)
    try:
        yield
    finally:
        for key, value in saved.items():
            setattr(settings, key, value)


def field_grid(config: RunConfig) -> list[complex]:
    """Cartesian product of the scan table's real and imaginary parts."""
    assert config.scan is not None
    return [complex(re, im) for re in config.scan.h_re for im in config.scan.h_im]


def _reflected(h: complex, metadata: dict[str, Any]) -> complex:
    if h.real < 0:
        metadata["note"] = REFLECTION_NOTE
        return -h
    return h


def run_enumerate(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """Partition function and mean magnetization."""
    z = partition_function(model)
    magnetization = thermal_average(model, lambda spins: spins[:, :, 0].mean(axis=1))
    h = model.field
    if metadata.get("note") == REFLECTION_NOTE:
        h, magnetization = -h, -magnetization
    return [
        {
            "sites": model.n_sites,
            "h": h,
            "partition_function": z,
            "log_modulus": math.log(abs(z)) if z != 0 else -math.inf,
            "magnetization": magnetization,
        }
    ]


def run_ursell(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """Connected n-point function at the configured slots."""
    assert config.ursell is not None
    sites = [as_site(s) for s in config.ursell.sites]
    components = config.ursell.components or [1] * len(sites)
    result = ursell(model, sites, components)
    if metadata.get("note") == REFLECTION_NOTE:
        result = result.model_copy(
            update={
                "value": reflection_sign(components) * result.value,
                "field": -result.field,
            }
        )
    return [result]


def run_transfer_scan(
    config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]
) -> Rows:
    """Spectral gap, top eigenvalues and two-point functions on the grid."""
    assert config.scan is not None
    grid = field_grid(config)
    mapped = [_reflected(h, metadata) for h in grid]
    rows = []
    for h, scan in zip(grid, transfer_scan(model, mapped), strict=True):
        row = scan.model_dump() | {"h": h}
        for x in config.scan.separations:
            row[f"g{x}"] = two_point_transfer(model.with_field(scan.h), x)
        rows.append(row)
    return rows


def run_zeros(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """Fugacity roots of the configured model and of a random suite."""
    rng = np.random.default_rng(config.seed)
    models = [model]
    for _ in range(config.zeros.instances):
        spec = random_ising_instance(
            model.lattice,
            rng,
            beta=model.beta,
            j_range=(config.zeros.j_min, config.zeros.j_max),
        )
        models.append(validate_model(spec))

    rows = []
    for k, instance in enumerate(models):
        rows.extend({"instance": k} | record.model_dump() for record in zeros(instance))
    metadata["max_circle_deviation"] = max(abs(row["modulus"] - 1.0) for row in rows)
    metadata["no_zero_suite"] = no_zero_suite(models, seed=config.seed).model_dump()
    return rows


def run_check_c1(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """Wedge certificates and M_h on their vertical segments."""
    rows = []
    for u0 in config.wedge.u0:
        cert = find_wedge_params(model.measure, u0, config.wedge.kappa_cap)
        height = cert.u_tilde * math.tan(cert.alpha_tilde)
        segment = np.linspace(-height, height, config.wedge.gamma_v_points)
        m_max = max(m_factor(model.measure, complex(cert.u_tilde, v)) for v in segment)
        rows.append(
            {
                "u0": u0,
                "alpha_tilde": cert.alpha_tilde,
                "u_tilde": cert.u_tilde,
                "kappa": cert.kappa,
                "kappa_cap": cert.kappa_cap,
                "m_max": m_max,
            }
        )
    if rows:
        metadata["grid"] = cert.grid.model_dump()
    return rows


def run_cluster(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """Per-order cluster series for the connected two-point function."""
    options = config.cluster
    rows, report = expansion_report(
        model,
        options.separations,
        options.order,
        epsilon=options.epsilon,
        compare_exact=options.compare_exact,
    )
    metadata.update(report)
    return rows


def run_max_principle(
    config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]
) -> Rows:
    """Boundary-versus-interior checks of F over the selected domains."""
    options = config.max_principle
    c1 = options.c1 if options.c1 is not None else 1.0
    rows = []
    for re, im in options.fields:
        h = _reflected(complex(re, im), metadata)
        cert = find_wedge_params(model.measure, max(h.real, c1))
        choice = select_parameters(h, cert, options.m0, c1)
        report = max_principle_check(
            model,
            options.x,
            wedge_domain(choice),
            choice.epsilon,
            boundary_points=options.boundary_points,
            interior_points=options.interior_points,
            refinements=options.refinements,
        )
        rows.append({"h": h} | choice.model_dump() | report.model_dump())
    return rows


def run_tree_decay(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """n-point Ursell functions of collinear families and their decay fit."""
    options = config.tree_decay
    families = collinear_families(model, options.n_points, options.lengths, options.center)
    components = options.components or [1] * options.n_points
    fit = tree_decay_fit(model, families, components)
    sign = reflection_sign(components) if metadata.get("note") == REFLECTION_NOTE else 1
    metadata["fit"] = fit.model_dump()
    return [
        {
            "points": family,
            "tree_length": tree_length(family),
            "value": sign * ursell(model, list(family), components).value,
        }
        for family in families
    ]


def run_ratio_scan(config: RunConfig, model: ValidatedModel, metadata: dict[str, Any]) -> Rows:
    """m(h) / Re h over the grid and its infimum."""
    grid = field_grid(config)
    for h in grid:
        if h.real == 0.0:
            raise OutsideHalfPlane(
                "ratio scans need Re h != 0", field_re=h.real, field_im=h.imag
            )
    rows, infimum = ratio_scan(model, [_reflected(h, metadata) for h in grid])
    metadata["infimum"] = infimum
    return [row.model_copy(update={"h": h}) for h, row in zip(grid, rows, strict=True)]


PIPELINES: dict[Command, Pipeline] = {
    Command.ENUMERATE: run_enumerate,
    Command.URSELL: run_ursell,
    Command.TRANSFER_SCAN: run_transfer_scan,
    Command.ZEROS: run_zeros,
    Command.CHECK_C1: run_check_c1,
    Command.CLUSTER: run_cluster,
    Command.MAX_PRINCIPLE: run_max_principle,
    Command.TREE_DECAY: run_tree_decay,
    Command.RATIO_SCAN: run_ratio_scan,
}


def summary_line(command: Command, row: Any) -> str:
    """One-line key=value rendering of a result row."""
    record = sanitize(row)
    return f"{command.value} " + " ".join(
        f"{key}={orjson.dumps(value).decode()}" for key, value in record.items()
    )


def run(
    config: RunConfig,
    out: str | None = None,
    fmt: OutputFormat | None = None,
    seed: int | None = None,
    stdout: Any = None,
    stderr: Any = None,
) -> int:
    """Execute the configured pipeline and write its result file.

    Returns:
        Exit status: 0 on success, 1 on invalid input, 2 on numerical failure
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    log = logger.bind(command=config.command.value, seed=config.seed)
    log.info("run_started", version=__version__)

    try:
        with settings_overrides(
            enumeration_budget=config.enumeration_budget,
            polymer_budget=config.polymer_budget,
        ):
            spec = spec_from_config(config.model)
            metadata: dict[str, Any] = {"version": __version__}
            if spec.field.real < 0:
                spec = reflect_field(spec)
                metadata["note"] = REFLECTION_NOTE
            model = validate_model(spec)
            rows = PIPELINES[config.command](config, model, metadata)
            path = emit(
                out or config.out,
                config.command,
                rows,
                fmt or config.format,
                config.seed,
                metadata,
            )
    except ValidationError as exc:
        return run_failed(log, stderr, ConfigParse(f"invalid parameters: {exc}"))
    except SpinLabError as exc:
        return run_failed(log, stderr, exc)
    except (ArithmeticError, ValueError) as exc:
        # numpy and scipy report overflow, singular matrices and NaN input this way.
        failure = NumericalFailure(f"{type(exc).__name__}: {exc}", exception=type(exc).__name__)
        return run_failed(log, stderr, failure)

    for row in rows:
        stdout.write(summary_line(config.command, row) + "\n")
    log.info("run_finished", rows=len(rows), path=str(path))
    return 0


def run_failed(log: Any, stderr: Any, exc: SpinLabError) -> int:
    """Write the JSON error record and return the exit status."""
    log.error("run_failed", error=exc.error_code, message=exc.message)
    stderr.write(orjson.dumps(sanitize(exc.to_record())).decode() + "\n")
    return exc.exit_code
