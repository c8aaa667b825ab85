"""Transfer operators for chains and narrow strips at complex field.

A strip of shape (L, W) is treated as a chain of length L whose super-sites
are the q^W configurations of one column. The operator is split
symmetrically,

    T[A, B] = sqrt(w_A) sqrt(w_B) exp(E_A / 2 + E_B / 2 + G_AB),

with w the tilted column weights, E the intra-column exponent and G the
exponent of the bonds between neighbouring columns. T is complex
symmetric, not Hermitian, once h is complex.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Iterable
from typing import Literal, NamedTuple

import numpy as np
import structlog
from scipy import linalg

from spinlab.config import get_settings
from spinlab.core.executor import get_executor
from spinlab.core.model import ValidatedModel
from spinlab.exceptions import (
    BudgetExceeded,
    DegenerateTop,
    InvalidSlots,
    NotAChain,
    NumericalFailure,
    ZeroPartition,
)
from spinlab.schemas import ScanRow

logger = structlog.get_logger(__name__)

# |lambda_2| below this fraction of |lambda_1| counts as an exact zero.
RANK_ONE_TOLERANCE = 1e-14


@dataclasses.dataclass(frozen=True, eq=False)
class TransferOperator:
    """Symmetric-split transfer matrix of a chain of super-sites."""

    matrix: np.ndarray
    boundary: np.ndarray
    spins: np.ndarray
    length: int
    periodic: bool

    @property
    def dimension(self) -> int:
        """Number of super-site states."""
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        """Sites per super-site."""
        return self.spins.shape[1]

    def site_operator(self, component: int, row: int = 0) -> np.ndarray:
        """Diagonal of phi^component at ``row`` of the super-site."""
        if not 1 <= component <= self.spins.shape[2]:
            raise InvalidSlots(f"component {component} is out of range")
        if not 0 <= row < self.width:
            raise InvalidSlots(f"row {row} is outside a strip of width {self.width}")
        return self.spins[:, row, component - 1]


class Spectrum(NamedTuple):
    """Eigenvalues by decreasing modulus with matching eigenvectors.

    ``left[:, k]`` is the row vector l_k with l_k T = lambda_k l_k.
    """

    values: np.ndarray
    left: np.ndarray
    right: np.ndarray


def _chain_couplings(model: ValidatedModel) -> tuple[int, int, tuple[float, ...]]:
    lattice = model.lattice
    if lattice.dimension not in (1, 2):
        raise NotAChain(f"transfer operators need d=1 or d=2 strips, got d={lattice.dimension}")
    if model.spec.couplings.pairs:
        raise NotAChain("explicit pair couplings break translation invariance")

    along = (1,) + (0,) * (lattice.dimension - 1)
    for offset, coupling in model.spec.couplings.entries.items():
        if any(coupling) and sum(abs(c) for c in offset) != 1:
            raise NotAChain(f"offset {offset} is not nearest-neighbour")

    zero = (0.0,) * model.n_components
    length = lattice.dims[0]
    width = lattice.dims[1] if lattice.dimension == 2 else 1
    return length, width, model.spec.couplings.entries.get(along, zero)


def build_transfer(model: ValidatedModel) -> TransferOperator:
    """Transfer operator of a nearest-neighbour chain or strip.

    Raises:
        NotAChain: Geometry or couplings do not reduce to a chain
        BudgetExceeded: q^W exceeds the super-site state cap
        ZeroNormalizer: The Laplace transform vanishes at beta * h
        NumericalFailure: Some matrix entry overflows
    """
    length, width, along = _chain_couplings(model)
    q = model.atom_count
    states = q**width
    cap = get_settings().max_transfer_states
    if states > cap:
        raise BudgetExceeded(
            f"{states} super-site states exceed the cap {cap}", states=states, budget=cap
        )

    digits = (np.arange(states)[:, None] // q ** np.arange(width - 1, -1, -1)) % q
    tilted = model.tilted.weights
    spins = model.points[digits]
    weights = np.prod(tilted[digits], axis=1)

    # Bonds inside column 0 carry any wrap and short-ring accumulation.
    column = np.zeros(states)
    for pos, bond in enumerate(model.bonds):
        a, b = model.sites[bond.i], model.sites[bond.j]
        if a[0] == 0 and b[0] == 0:
            column += model.pair_tables[pos][digits[:, a[1]], digits[:, b[1]]]

    across = model.beta * np.einsum(
        "k,ack,bck->ab", np.asarray(along, dtype=float), spins, spins
    )
    with np.errstate(over="ignore", invalid="ignore"):
        half = np.sqrt(weights.astype(complex)) * np.exp(column / 2.0)
        matrix = half[:, None] * np.exp(across) * half[None, :]
    if not np.isfinite(matrix).all():
        raise NumericalFailure(
            "transfer matrix overflows; lower beta * J",
            beta=model.beta,
            states=states,
        )
    return TransferOperator(
        matrix=matrix,
        boundary=half,
        spins=spins,
        length=length,
        periodic=model.lattice.periodic,
    )


def spectrum(op: TransferOperator) -> Spectrum:
    """Eigen-decomposition sorted by modulus, ties broken by argument.

    Raises:
        NumericalFailure: The eigensolver does not converge
    """
    try:
        values, left, right = linalg.eig(op.matrix, left=True, right=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    order = np.lexsort((np.angle(values), -np.abs(values)))
    return Spectrum(values=values[order], left=left[:, order].conj(), right=right[:, order])


def spectral_mass_gap(model: ValidatedModel) -> float:
    """log(|lambda_1| / |lambda_2|), or inf for a rank-one operator.

    Raises:
        DegenerateTop: |lambda_1| and |lambda_2| agree within tolerance
    """
    values = spectrum(build_transfer(model)).values
    return _gap(values, model.field)


def _gap(values: np.ndarray, field: complex) -> float:
    top = abs(values[0])
    if top == 0.0:
        raise ZeroPartition("transfer operator is nilpotent")
    if len(values) == 1 or abs(values[1]) <= RANK_ONE_TOLERANCE * top:
        return math.inf
    second = abs(values[1])
    if top - second <= get_settings().degenerate_tolerance * top:
        raise DegenerateTop(
            "top eigenvalues have equal modulus",
            field_re=field.real,
            field_im=field.imag,
        )
    return math.log(top / second)


def two_point_transfer(
    model: ValidatedModel,
    x: int,
    i: int = 1,
    j: int = 1,
    volume: Literal["infinite", "finite"] = "infinite",
    origin: int = 0,
    row: int = 0,
) -> complex:
    """Connected <phi^i_0 ; phi^j_x> along the chain axis.

    The infinite-volume value is the spectral sum
    sum_{k>=2} (lambda_k/lambda_1)^x (l_1 D_i r_k)(l_k D_j r_1) / norms.
    When the eigenvector basis is ill-conditioned the top eigenpair is
    deflated and matrix powers are used instead. Finite chains are
    evaluated by exact matrix products; on free chains the two points
    are ``origin`` and ``origin + x``.
    """
    if x < 0:
        raise InvalidSlots(f"separation must be nonnegative, got {x}")
    op = build_transfer(model)
    d_i = op.site_operator(i, row)
    d_j = op.site_operator(j, row)
    if volume == "finite":
        return _finite_two_point(op, x, d_i, d_j, origin)

    spec = spectrum(op)
    lam = spec.values
    l1, r1 = spec.left[:, 0], spec.right[:, 0]
    norm1 = l1 @ r1
    if np.linalg.cond(spec.right) <= get_settings().eigvec_condition_cap:
        total = 0j
        for k in range(1, op.dimension):
            lk, rk = spec.left[:, k], spec.right[:, k]
            weight = (l1 @ (d_i * rk)) * (lk @ (d_j * r1)) / ((lk @ rk) * norm1)
            total += (lam[k] / lam[0]) ** x * weight
        return complex(total)

    logger.debug("transfer_deflation_fallback", x=x)
    projector = np.outer(r1, l1) / norm1
    if x == 0:
        middle = np.eye(op.dimension) - projector
    else:
        middle = np.linalg.matrix_power(op.matrix / lam[0] - projector, x)
    return complex(l1 @ (d_i[:, None] * middle * d_j[None, :]) @ r1 / norm1)


def _finite_two_point(
    op: TransferOperator, x: int, d_i: np.ndarray, d_j: np.ndarray, origin: int
) -> complex:
    length = op.length
    scale = np.abs(op.matrix).max() or 1.0
    t = op.matrix / scale
    power = np.linalg.matrix_power

    if op.periodic and length >= 2:
        if x >= length:
            raise InvalidSlots(f"separation {x} does not fit a ring of length {length}")
        z = np.trace(power(t, length))
        both = np.trace(np.diag(d_i) @ power(t, x) @ np.diag(d_j) @ power(t, length - x))
        first = np.trace(np.diag(d_i) @ power(t, length)) / z
        second = np.trace(np.diag(d_j) @ power(t, length)) / z
        return complex(both / z - first * second)

    end = origin + x
    if origin < 0 or end >= length:
        raise InvalidSlots(f"sites {origin} and {end} are not in a chain of length {length}")
    v = op.boundary

    def sandwich(*operators: tuple[int, np.ndarray]) -> complex:
        vector = v.copy()
        site = 0
        for position, diagonal in operators:
            vector = vector @ power(t, position - site) * diagonal
            site = position
        return complex(vector @ power(t, length - 1 - site) @ v)

    z = sandwich()
    first = sandwich((origin, d_i)) / z
    second = sandwich((end, d_j)) / z
    if x == 0:
        both = sandwich((origin, d_i * d_j)) / z
    else:
        both = sandwich((origin, d_i), (end, d_j)) / z
    return both - first * second


def chain_partition_function(model: ValidatedModel) -> complex:
    """Partition function from the transfer operator.

    Periodic chains use tr(T^L) for L >= 2; free chains and rings of
    length one use v^T T^(L-1) v.
    """
    op = build_transfer(model)
    if op.periodic and op.length >= 2:
        return complex(np.trace(np.linalg.matrix_power(op.matrix, op.length)))
    return complex(
        op.boundary @ np.linalg.matrix_power(op.matrix, op.length - 1) @ op.boundary
    )


def transfer_scan(model: ValidatedModel, fields: Iterable[complex]) -> list[ScanRow]:
    """Spectral mass gap and top eigenvalues over a field grid."""

    def evaluate(h: complex) -> ScanRow:
        values = spectrum(build_transfer(model.with_field(h))).values
        second = complex(values[1]) if len(values) > 1 else None
        try:
            gap = _gap(values, h)
            degenerate = False
        except DegenerateTop:
            logger.warning("degenerate_top", field_re=h.real, field_im=h.imag)
            gap, degenerate = 0.0, True
        return ScanRow(
            h=h,
            mass_gap=gap,
            lambda1=complex(values[0]),
            lambda2=second,
            degenerate=degenerate,
        )

    rows = get_executor().map(evaluate, [complex(h) for h in fields])
    logger.info("transfer_scan_done", points=len(rows))
    return rows
