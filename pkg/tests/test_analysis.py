"""Tests for wedge domains, decay fits and maximum-principle checks."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from spinlab.core.exact import ursell
from spinlab.core.leeyang import find_wedge_params
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
from spinlab.schemas import Boundary, DecayFit, WedgeCertificate, WedgeGrid
from spinlab.services.analysis import (
    F_function,
    WedgeDomain,
    _fit,
    alpha0,
    collinear_families,
    epsilon_of_alpha,
    explicit_lower_bound,
    fit_window,
    mass_gap_fit,
    max_principle_check,
    phi_alpha,
    prefactor,
    ratio_scan,
    select_parameters,
    tree_decay_fit,
    tree_length,
    wedge_domain,
)


def on_boundary(domain, z, tol=1e-9):
    """Whether z lies on the arc, a radial side or the vertical side."""
    return (
        abs(abs(z) - domain.delta) < tol
        or abs(z.real - domain.eta) < tol
        or abs(abs(math.atan2(z.imag, z.real)) - domain.alpha) < tol
    )


@pytest.fixture
def certificate():
    """Hand-made wedge certificate."""
    return WedgeCertificate(
        u0=1.0,
        alpha_tilde=0.6,
        u_tilde=2.0,
        kappa=2.0,
        kappa_cap=10.0,
        grid=WedgeGrid(
            u_points=24,
            alpha_points=32,
            kappa_grid_points=256,
            refinement_passes=2,
            u_span=64.0,
        ),
    )


@pytest.fixture
def domain():
    """Quarter-turn wedge."""
    return WedgeDomain(alpha=math.pi / 4, delta=0.1, eta=1.0)


@pytest.mark.unit
def test_domain_geometry(domain):
    """Test corners, exponent and the radial end."""
    lower, upper = domain.corners
    assert lower == pytest.approx(1.0 - 1.0j)
    assert upper == pytest.approx(1.0 + 1.0j)
    assert domain.exponent == pytest.approx(2.0)
    assert domain.radial_end == pytest.approx(math.sqrt(2.0))


@pytest.mark.unit
def test_domain_validation():
    """Test parameter bounds of the domain."""
    with pytest.raises(ValidationError):
        WedgeDomain(alpha=math.pi / 2, delta=0.1, eta=1.0)
    with pytest.raises(ValidationError):
        WedgeDomain(alpha=0.5, delta=0.1, eta=0.5)


@pytest.mark.unit
def test_interior_samples_inside(domain):
    """Test that interior samples lie in the open domain."""
    points = domain.interior(100)
    assert len(points) >= 100
    assert all(domain.contains(z) for z in points)


@pytest.mark.unit
def test_boundary_samples_on_boundary(domain):
    """Test that boundary samples are not interior points."""
    points = domain.boundary(64)
    assert all(on_boundary(domain, z) for z in points)
    assert domain.corners[1] in points
    centered = domain.boundary(64, centered=True)
    assert all(on_boundary(domain, z) for z in centered)
    assert domain.corners[1] not in centered


@pytest.mark.unit
def test_phi_alpha():
    """Test phi at the centre and at the wedge edge."""
    assert phi_alpha(0.0, 0.7) == pytest.approx(1.0)
    assert phi_alpha(math.pi / 4, math.pi / 4) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.unit
def test_epsilon_of_alpha():
    """Test epsilon = m0 / c1^2 at alpha = pi/4."""
    assert epsilon_of_alpha(math.pi / 4, 0.5, 1.0) == pytest.approx(0.5)
    assert epsilon_of_alpha(math.pi / 4, 1.0, 2.0) == pytest.approx(0.25)
    assert epsilon_of_alpha(math.pi / 4, 5.0, 1.0) == 1.0


@pytest.mark.unit
def test_explicit_lower_bound():
    """Test rho (1 - rho) at alpha = pi/4."""
    assert explicit_lower_bound(0.5, math.pi / 4, 1.0, 1.0) == pytest.approx(0.1875)


@pytest.mark.unit
def test_alpha0():
    """Test |arg h| and the half-plane check."""
    assert alpha0(1.0 + 1.0j) == pytest.approx(math.pi / 4)
    assert alpha0(2.0 - 0.5j) == pytest.approx(math.atan(0.25))
    with pytest.raises(OutsideHalfPlane):
        alpha0(-0.1 + 1.0j)


@pytest.mark.unit
def test_real_branch(certificate):
    """Test the real-field parameter choice."""
    choice = select_parameters(1.0, certificate, m0=1.0)
    assert choice.branch == "real"
    assert choice.delta == 0.1
    assert choice.eta == 2.0
    assert choice.alpha == 0.6
    assert choice.epsilon == pytest.approx(2.0 ** (-math.pi / 1.2), rel=1e-12)
    assert wedge_domain(choice).contains(1.0)


@pytest.mark.unit
def test_complex_branch_below_c1(certificate):
    """Test eta = c1 and delta = Re h^p for small complex fields."""
    h = 0.5 + 0.3j
    choice = select_parameters(h, certificate, m0=1.0, c1=1.0)
    p = math.pi / (2 * choice.alpha)
    assert choice.branch == "complex"
    assert choice.eta == 1.0
    assert choice.alpha == 0.6
    assert choice.delta == pytest.approx(min(0.1, (h**p).real))
    assert choice.alpha0 == pytest.approx(math.atan(0.6))


@pytest.mark.unit
def test_complex_branch_widens_angle(certificate):
    """Test an angle strictly above alpha0 when the certificate is narrow."""
    h = 0.4 + 0.4j
    choice = select_parameters(h, certificate, m0=1.0)
    assert choice.alpha > math.pi / 4
    assert choice.alpha == pytest.approx(math.pi / 4 + 0.05 * math.pi / 4)


@pytest.mark.unit
def test_parameter_errors(certificate):
    """Test rejection of bad c1, uncovered fields and Re h <= 0."""
    with pytest.raises(ConfigError):
        select_parameters(1.0, certificate, m0=1.0, c1=0.5)
    with pytest.raises(ConfigError):
        select_parameters(3.0, certificate, m0=1.0)
    with pytest.raises(OutsideHalfPlane):
        select_parameters(-1.0, certificate, m0=1.0)


@pytest.mark.unit
def test_prefactor():
    """Test exp(epsilon z^p |x|) at real z."""
    assert prefactor(2.0, 0.5, math.pi / 4, 3) == pytest.approx(math.exp(6.0))


@pytest.mark.unit
def test_f_function(ising_chain):
    """Test F as prefactor times the connected function."""
    model = ising_chain(4)
    z = 0.6 + 0.2j
    expected = complex(prefactor(z, 0.3, 0.9, 2)) * ursell(model.with_field(z), [0, 2]).value
    assert F_function(model, 2, 0.3, 0.9, z) == pytest.approx(expected)
    with pytest.raises(OutsideHalfPlane):
        F_function(model, 2, 0.3, 0.9, -0.1j)


@pytest.mark.integration
def test_max_principle_on_chain(ising_chain, certificate):
    """Test that |F| of a chain peaks on the domain boundary."""
    model = ising_chain(4)
    choice = select_parameters(0.5 + 0.2j, certificate, m0=1.0)
    report = max_principle_check(
        model, 2, wedge_domain(choice), choice.epsilon, boundary_points=128, interior_points=16
    )
    assert report.passed
    assert report.interior_max <= report.boundary_max * (1 + 1e-9)
    assert report.attempts == 1
    assert report.interior_points >= 16


@pytest.mark.unit
def test_max_principle_retries(mocker, ising_chain, domain):
    """Test doubling of sample counts before giving up."""
    fake = mocker.patch(
        "spinlab.services.analysis.F_function",
        side_effect=lambda model, x, eps, alpha, z, *args: (
            1.0 if on_boundary(domain, z) else 2.0
        ),
    )
    with pytest.raises(SampleTooCoarse) as info:
        max_principle_check(
            ising_chain(2), 1, domain, 0.5, boundary_points=16, interior_points=4, refinements=2
        )
    assert info.value.details["attempts"] == 3
    assert fake.call_count > 3 * (16 + 4)


@pytest.mark.unit
def test_max_principle_extra_points(mocker, ising_chain, domain):
    """Test that extra interior points are always checked."""
    mocker.patch(
        "spinlab.services.analysis.F_function",
        side_effect=lambda model, x, eps, alpha, z, *args: 3.0 if z == 0.5 else 1.0,
    )
    with pytest.raises(SampleTooCoarse):
        max_principle_check(
            ising_chain(2),
            1,
            domain,
            0.5,
            boundary_points=16,
            interior_points=4,
            refinements=0,
            extra_interior=[0.5],
        )


@pytest.mark.unit
def test_fit_window(ising_chain):
    """Test separations for periodic and free boxes."""
    assert fit_window(ising_chain(16, boundary=Boundary.PERIODIC)) == ((0,), [1, 2, 3, 4])
    assert fit_window(ising_chain(12)) == ((3,), [1, 2, 3, 4, 5])


@pytest.mark.integration
def test_mass_gap_fit_matches_spectrum(ising_chain):
    """Test the fitted slope of a ring against the transfer gap."""
    small = ising_chain(12, field=0.5, boundary=Boundary.PERIODIC)
    large = ising_chain(16, field=0.5, boundary=Boundary.PERIODIC)
    fit = mass_gap_fit([small, large])
    assert fit.slope == pytest.approx(spectral_mass_gap(large), rel=1e-2)
    assert fit.volume_slopes == ((16, fit.slope),)
    assert fit.residual < 1e-2


@pytest.mark.unit
def test_mass_gap_fit_insufficient(ising_chain):
    """Test that short free chains leave too few separations."""
    with pytest.raises(InsufficientData):
        mass_gap_fit(ising_chain(8, field=0.5))
    with pytest.raises(InsufficientData):
        mass_gap_fit([])


@pytest.mark.unit
def test_mass_gap_fit_sentinel(ising_chain):
    """Test the infinite slope for identically zero correlations."""
    model = ising_chain(16, field=0.5, coupling=0.0, boundary=Boundary.PERIODIC)
    fit = mass_gap_fit(model)
    assert fit.is_sentinel
    assert math.isnan(fit.intercept)


@pytest.mark.unit
def test_fit_rejects_growth():
    """Test NonDecay for correlations growing with distance."""
    with pytest.raises(NonDecay):
        _fit([1, 2, 3, 4], [0.1, 0.2, 0.4, 0.8])


@pytest.mark.unit
def test_fit_exponential():
    """Test an exact exponential."""
    fit, _, _ = _fit([1, 2, 3, 4, 5], [np.exp(-0.7 * x) for x in range(1, 6)])
    assert isinstance(fit, DecayFit)
    assert fit.slope == pytest.approx(0.7)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.window == (1.0, 5.0)


@pytest.mark.unit
def test_tree_length():
    """Test minimal tree lengths of small point sets."""
    assert tree_length([(0,)]) == 0
    assert tree_length([(0,), (3,)]) == 3
    assert tree_length([(0,), (2,), (5,)]) == 5
    assert tree_length([(0, 0), (2, 0), (0, 2)]) == 4
    assert tree_length([(0, 0), (1, 0), (0, 1), (1, 1)]) == 3
    with pytest.raises(InvalidSlots):
        tree_length([(k,) for k in range(7)])


@pytest.mark.unit
def test_collinear_families(ising_chain):
    """Test families spread around the centre of a chain."""
    families = collinear_families(ising_chain(16), 3, [2, 4])
    assert families == [((7,), (8,), (9,)), ((6,), (8,), (10,))]
    assert [tree_length(f) for f in families] == [2, 4]
    with pytest.raises(InvalidSlots):
        collinear_families(ising_chain(16), 3, [20])


@pytest.mark.integration
def test_tree_decay_fit(ising_chain):
    """Test decay of three-point functions in the tree length."""
    model = ising_chain(14, field=0.8)
    families = collinear_families(model, 3, [2, 3, 4, 5, 6, 7])
    fit = tree_decay_fit(model, families)
    assert fit.slope > 0
    for family, ell in zip(families, fit.distances, strict=True):
        value = abs(ursell(model, list(family)).value)
        assert value <= fit.envelope * math.exp(-fit.slope * ell) * (1 + 1e-12)


@pytest.mark.unit
def test_tree_decay_mixed_sizes(ising_chain):
    """Test rejection of families of different sizes."""
    with pytest.raises(InvalidSlots):
        tree_decay_fit(ising_chain(8), [[0, 1], [0, 1, 2]])


@pytest.mark.unit
def test_ratio_scan_spectral(ising_chain):
    """Test m(h) / Re h from the transfer operator."""
    model = ising_chain(10)
    rows, infimum = ratio_scan(model, [0.2, 0.5 + 0.3j], alpha=math.pi / 4)
    assert [row.method for row in rows] == ["spectral", "spectral"]
    assert rows[0].ratio == pytest.approx(spectral_mass_gap(model.with_field(0.2)) / 0.2)
    assert infimum == min(row.ratio for row in rows)
    assert rows[0].lower_bound == pytest.approx(0.04 * 0.96)
    assert rows[0].mass_gap >= rows[0].lower_bound


@pytest.mark.unit
def test_ratio_scan_falls_back_to_fit(mocker, model_factory):
    """Test the fitted gap when the model is not a chain."""
    mocker.patch(
        "spinlab.services.analysis.spectral_mass_gap", side_effect=NotAChain("cube")
    )
    fit = mocker.MagicMock(slope=0.9)
    mocked = mocker.patch("spinlab.services.analysis.mass_gap_fit", return_value=fit)
    rows, infimum = ratio_scan(model_factory((2, 2, 2)), [0.3])
    assert rows[0].method == "fit"
    assert infimum == pytest.approx(3.0)
    mocked.assert_called_once()


@pytest.mark.unit
def test_ratio_scan_half_plane(ising_chain):
    """Test rejection of Re h <= 0."""
    with pytest.raises(OutsideHalfPlane):
        ratio_scan(ising_chain(4), [0.5, 0.0])


@pytest.mark.unit
@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.2, 1.5])
def test_phi_alpha_properties(alpha):
    """Test phi(0) = 1, phi(alpha) = 0 and monotone decrease in between."""
    theta = np.linspace(0.0, alpha, 2001)
    values = phi_alpha(theta, alpha)
    assert values[0] == pytest.approx(1.0, abs=1e-15)
    assert values[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(values) <= 1e-12)


@pytest.mark.unit
@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.2, 1.5])
def test_prefactor_on_radial_sides(alpha):
    """Test that the prefactor has modulus one on both radial sides."""
    domain = WedgeDomain(alpha=alpha, delta=0.05, eta=2.0)
    z = domain.gamma_r(64)
    for distance in (1, 3, 7):
        moduli = np.abs(prefactor(z, 0.4, alpha, distance))
        assert np.allclose(moduli, 1.0, rtol=0.0, atol=1e-12)


@pytest.mark.unit
@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.2, 1.5])
def test_prefactor_on_arc(alpha):
    """Test |prefactor| <= exp(epsilon delta^p |x|) on the small arc."""
    domain = WedgeDomain(alpha=alpha, delta=0.1, eta=1.0)
    z = domain.gamma_c(65)
    for distance in (1, 4):
        cap = math.exp(0.7 * domain.delta**domain.exponent * distance)
        assert np.all(np.abs(prefactor(z, 0.7, alpha, distance)) <= cap * (1 + 1e-12))


@pytest.mark.slow
@pytest.mark.parametrize("field", [0.5, 1.0, 1.0 + 0.5j])
def test_max_principle_six_site_chain(ising_chain, field):
    """Test the boundary maximum on 512 boundary and 128 interior samples."""
    model = ising_chain(6)
    cert = find_wedge_params(model.measure, max(complex(field).real, 1.0))
    choice = select_parameters(field, cert, m0=1.0)
    report = max_principle_check(
        model, 3, wedge_domain(choice), choice.epsilon, boundary_points=512, interior_points=128
    )
    assert report.passed
    assert report.interior_max <= report.boundary_max * (1 + 1e-9)
    assert report.interior_points >= 128


@pytest.mark.slow
def test_tree_decay_fourteen_sites(ising_chain):
    """Test three-point decay at h = 1 against its fitted envelope."""
    model = ising_chain(14, field=1.0)
    families = collinear_families(model, 3, [2, 3, 4, 5, 6, 7, 8])
    fit = tree_decay_fit(model, families)
    assert fit.slope > 0
    assert fit.residual <= 0.05 * fit.slope
    for family, ell in zip(families, fit.distances, strict=True):
        value = abs(ursell(model, list(family)).value)
        assert value <= fit.envelope * math.exp(-fit.slope * ell) * (1 + 1e-6)
