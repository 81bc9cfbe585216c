"""Device model: geometry, beam absorption, efficiency and dark-rate curves."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from snspdsim.device import (
    ArrayGeometry,
    BeamProfile,
    OpticalPath,
    PixelModel,
    absorption_fraction,
    absorption_map,
    dark_rate,
    expected_pixel_rate,
    internal_efficiency,
)
from snspdsim.errors import DetectorLatchedError

GEO = ArrayGeometry()
PIXEL = PixelModel(channel=0)
OPTICS = OpticalPath()


# ---------------------------------------------------------------------------
# geometry


def test_channel_rowcol_bijection():
    seen = set()
    for row in range(GEO.rows):
        for col in range(GEO.cols):
            ch = GEO.channel_of(row, col)
            assert GEO.rowcol_of(ch) == (row, col)
            seen.add(ch)
    assert seen == set(range(64))


def test_channel_bounds_checked():
    with pytest.raises(ValueError):
        GEO.channel_of(8, 0)
    with pytest.raises(ValueError):
        GEO.rowcol_of(64)


def test_fill_factor():
    assert GEO.fill_factor == pytest.approx((27.8 * 27.5) / 900.0)
    assert 0 < GEO.fill_factor <= 1


def test_pixel_zero_center_is_origin():
    assert GEO.pixel_center(0) == (0.0, 0.0)
    assert GEO.pixel_center(9) == (30.0, 30.0)  # row 1, col 1


def test_footprint_bounds():
    x_lo, x_hi, y_lo, y_hi = GEO.footprint_bounds()
    assert (x_lo, y_lo) == (-15.0, -15.0)
    assert (x_hi, y_hi) == (225.0, 225.0)


def test_neighbors_edge_clipping():
    assert set(GEO.neighbors(0)) == {1, 8}  # corner
    assert set(GEO.neighbors(1)) == {0, 2, 9}  # edge
    assert set(GEO.neighbors(9)) == {1, 8, 10, 17}  # interior
    assert len(GEO.neighbors(9, "8-neighbor")) == 8
    assert len(GEO.neighbors(0, "8-neighbor")) == 3


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(active_width_um=31.0)  # exceeds pitch
    with pytest.raises(ValueError):
        ArrayGeometry(rows=0)


# ---------------------------------------------------------------------------
# absorption


def test_gaussian_absorption_matches_quadrature_oracle():
    """Closed-form erf product vs direct 2-D integration of the beam density."""
    beam = BeamProfile(kind="gaussian", center_um=(0.0, 0.0), diameter_1e2_um=27.0)
    sigma = 27.0 / 4.0

    def density(y, x):
        return np.exp(-(x * x + y * y) / (2 * sigma * sigma)) / (2 * np.pi * sigma * sigma)

    x_lo, x_hi, y_lo, y_hi = GEO.active_bounds(0)
    oracle, err = integrate.dblquad(density, x_lo, x_hi, y_lo, y_hi, epsabs=1e-12)
    assert err < 1e-9
    value = absorption_fraction(GEO, 0, beam)
    assert value == pytest.approx(oracle, abs=1e-9)
    assert value == pytest.approx(0.9205280163834775, abs=1e-12)


def test_flood_covering_footprint_sums_to_fill_factor():
    beam = BeamProfile(
        kind="flood", center_um=(105.0, 105.0), extent_um=(240.0, 240.0), flux_cps=1.0
    )
    total = absorption_map(GEO, beam).sum()
    assert total == pytest.approx(GEO.fill_factor, abs=1e-6)


def test_gaussian_absorption_sums_below_one():
    for center in [(0.0, 0.0), (105.0, 105.0), (-40.0, 10.0)]:
        beam = BeamProfile(kind="gaussian", center_um=center, diameter_1e2_um=80.0)
        assert absorption_map(GEO, beam).sum() <= 1.0 + 1e-12


def test_translation_equivariance():
    """Moving beam and geometry together leaves every fraction unchanged."""
    shift = (13.7, -4.2)
    moved = ArrayGeometry(origin_um=shift)
    for kind, extra in [
        ("gaussian", {"diameter_1e2_um": 27.0}),
        ("flood", {"extent_um": (60.0, 45.0)}),
    ]:
        base = BeamProfile(kind=kind, center_um=(5.0, 8.0), **extra)
        offset = BeamProfile(
            kind=kind, center_um=(5.0 + shift[0], 8.0 + shift[1]), **extra
        )
        np.testing.assert_allclose(
            absorption_map(GEO, base), absorption_map(moved, offset), rtol=1e-12
        )


def test_absorption_map_matches_scalar_path():
    beam = BeamProfile(kind="gaussian", center_um=(60.0, 30.0), diameter_1e2_um=27.0)
    amap = absorption_map(GEO, beam)
    for ch in (0, 9, 27, 63):
        assert amap[ch] == pytest.approx(absorption_fraction(GEO, ch, beam), rel=1e-12)


def test_corner_spot_spills_off_array():
    """A spot on the corner pixel loses the off-array tail that a spot on an
    interior pixel keeps, which is what depresses edge-pixel efficiency."""
    spot = {"kind": "gaussian", "diameter_1e2_um": 27.0}
    corner = absorption_map(GEO, BeamProfile(center_um=GEO.pixel_center(0), **spot)).sum()
    interior = absorption_map(GEO, BeamProfile(center_um=GEO.pixel_center(27), **spot)).sum()
    assert corner < interior
    # the on-pixel fraction itself is identical; only spill differs
    assert absorption_fraction(GEO, 0, BeamProfile(center_um=GEO.pixel_center(0), **spot)) == (
        pytest.approx(
            absorption_fraction(GEO, 27, BeamProfile(center_um=GEO.pixel_center(27), **spot)),
            rel=1e-12,
        )
    )


def test_flood_partial_overlap():
    beam = BeamProfile(kind="flood", center_um=(-15.0, 0.0), extent_um=(30.0, 30.0))
    # the flood rectangle [-30,0]x[-15,15] covers the left half of pixel 0's
    # active rectangle only: overlap (13.9 * 27.5) over area 900
    assert absorption_fraction(GEO, 0, beam) == pytest.approx(13.9 * 27.5 / 900.0, rel=1e-12)


# ---------------------------------------------------------------------------
# efficiency and dark-rate curves


def test_internal_efficiency_midpoint_and_plateau():
    assert internal_efficiency(PIXEL, 14.0) == pytest.approx(0.5, abs=1e-12)
    assert internal_efficiency(PIXEL, 21.0) == pytest.approx(0.9997673709209644, abs=1e-12)
    assert internal_efficiency(PIXEL, 0.0) < 1e-10


def test_internal_efficiency_monotone():
    bias = np.linspace(0.0, 25.0, 101)
    eff = np.array([internal_efficiency(PIXEL, b) for b in bias])
    assert np.all(np.diff(eff) >= 0)
    assert np.all((eff >= 0) & (eff <= 1))


def test_dark_rate_values():
    # floor + exponential with amplitude = floor: 20 cps at the 21 uA default
    assert dark_rate(PIXEL, 21.0) == pytest.approx(20.0, rel=1e-9)
    ratio = dark_rate(PIXEL, 23.0) / dark_rate(PIXEL, 21.0)
    assert ratio == pytest.approx(12.1825, rel=1e-3)
    assert ratio >= 5.0


def test_dark_rate_monotone():
    bias = np.linspace(0.0, 25.0, 101)
    dcr = np.array([dark_rate(PIXEL, b) for b in bias])
    assert np.all(np.diff(dcr) >= 0)


def test_latching_above_switching_current():
    with pytest.raises(DetectorLatchedError):
        internal_efficiency(PIXEL, 25.1)
    with pytest.raises(DetectorLatchedError):
        dark_rate(PIXEL, 26.0)
    # at the switching current itself the wire still counts
    assert internal_efficiency(PIXEL, 25.0) > 0.999


def test_negative_bias_rejected():
    with pytest.raises(ValueError):
        internal_efficiency(PIXEL, -1.0)
    with pytest.raises(ValueError):
        dark_rate(PIXEL, -0.5)


def test_expected_pixel_rate_affine_in_flux():
    beam0 = BeamProfile(kind="gaussian", center_um=(0.0, 0.0), flux_cps=0.0)
    beam1 = BeamProfile(kind="gaussian", center_um=(0.0, 0.0), flux_cps=1.0e6)
    beam2 = BeamProfile(kind="gaussian", center_um=(0.0, 0.0), flux_cps=2.0e6)
    r0 = expected_pixel_rate(GEO, PIXEL, OPTICS, beam0, 21.0)
    r1 = expected_pixel_rate(GEO, PIXEL, OPTICS, beam1, 21.0)
    r2 = expected_pixel_rate(GEO, PIXEL, OPTICS, beam2, 21.0)
    assert r0 == pytest.approx(dark_rate(PIXEL, 21.0), rel=1e-12)
    assert r2 - r1 == pytest.approx(r1 - r0, rel=1e-9)


def test_perpendicular_rate_scaled_by_contrast():
    par = BeamProfile(kind="gaussian", center_um=(0.0, 0.0), flux_cps=1.0e6)
    perp = BeamProfile(
        kind="gaussian", center_um=(0.0, 0.0), flux_cps=1.0e6, polarization="perpendicular"
    )
    dark = dark_rate(PIXEL, 21.0)
    r_par = expected_pixel_rate(GEO, PIXEL, OPTICS, par, 21.0) - dark
    r_perp = expected_pixel_rate(GEO, PIXEL, OPTICS, perp, 21.0) - dark
    assert r_perp / r_par == pytest.approx(OPTICS.polarization_contrast, rel=1e-12)


# ---------------------------------------------------------------------------
# model validation


def test_pixel_model_invariants():
    with pytest.raises(ValueError):
        PixelModel(channel=0, eta_system_max=1.2)
    with pytest.raises(ValueError):
        PixelModel(channel=0, i_turn_on_ua=23.0)  # above the knee
    with pytest.raises(ValueError):
        PixelModel(channel=0, dcr_knee_ua=26.0)  # above i_switch
    with pytest.raises(ValueError):
        PixelModel(channel=0, i_width_ua=0.0)
    with pytest.raises(ValueError):
        PixelModel(channel=0, dead_time_ns=-1.0)


def test_beam_profile_validation():
    with pytest.raises(ValueError):
        BeamProfile(kind="bessel")
    with pytest.raises(ValueError):
        BeamProfile(polarization="circular")
    with pytest.raises(ValueError):
        BeamProfile(flux_cps=-1.0)
    with pytest.raises(ValueError):
        BeamProfile(kind="flood", extent_um=(0.0, 10.0))


def test_optical_path_validation():
    with pytest.raises(ValueError):
        OpticalPath(element_transmissions=(0.9, 1.1))
    with pytest.raises(ValueError):
        OpticalPath(polarization_contrast=0.0)
    assert OpticalPath().total_transmission == pytest.approx(
        0.97 * 0.97 * 0.97 * 0.96 * 0.98
    )
