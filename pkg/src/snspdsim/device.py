"""Detector array device model: geometry, per-pixel response, optics, beam.

All lengths are in micrometers, currents in microamperes, rates in counts per
second. Channels are numbered row-major: channel = row * cols + col.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
from scipy.special import erf

from .errors import DetectorLatchedError

# FWHM of a Gaussian = 2*sqrt(2*ln 2) * sigma
FWHM_SIGMA = 2.3548200450309493


@dataclass(frozen=True)
class ArrayGeometry:
    """Rectangular pixel grid. The active area of each pixel is centered on its
    lattice site; the remaining pitch is dead space (connecting wires, gaps)."""

    rows: int = 8
    cols: int = 8
    pitch_um: float = 30.0
    active_width_um: float = 27.8
    active_height_um: float = 27.5
    origin_um: tuple[float, float] = (0.0, 0.0)  # center of pixel (0, 0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one pixel")
        if not (0 < self.active_width_um <= self.pitch_um):
            raise ValueError("active_width_um must be in (0, pitch_um]")
        if not (0 < self.active_height_um <= self.pitch_um):
            raise ValueError("active_height_um must be in (0, pitch_um]")

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @property
    def fill_factor(self) -> float:
        return (self.active_width_um * self.active_height_um) / self.pitch_um**2

    def channel_of(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"pixel ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def rowcol_of(self, channel: int) -> tuple[int, int]:
        if not (0 <= channel < self.n_pixels):
            raise ValueError(f"channel {channel} outside 0..{self.n_pixels - 1}")
        return divmod(channel, self.cols)

    def pixel_center(self, channel: int) -> tuple[float, float]:
        row, col = self.rowcol_of(channel)
        x0, y0 = self.origin_um
        return (x0 + col * self.pitch_um, y0 + row * self.pitch_um)

    def active_bounds(self, channel: int) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi) of the pixel's active rectangle."""
        cx, cy = self.pixel_center(channel)
        hw, hh = self.active_width_um / 2, self.active_height_um / 2
        return (cx - hw, cx + hw, cy - hh, cy + hh)

    def footprint_bounds(self) -> tuple[float, float, float, float]:
        """Bounds of the full pitch-aligned array footprint."""
        x0, y0 = self.origin_um
        hp = self.pitch_um / 2
        return (
            x0 - hp,
            x0 + (self.cols - 1) * self.pitch_um + hp,
            y0 - hp,
            y0 + (self.rows - 1) * self.pitch_um + hp,
        )

    def neighbors(self, channel: int, topology: str = "4-neighbor") -> tuple[int, ...]:
        """Adjacent channels under the given topology, clipped at array edges."""
        row, col = self.rowcol_of(channel)
        if topology == "4-neighbor":
            offsets = ((-1, 0), (1, 0), (0, -1), (0, 1))
        elif topology == "8-neighbor":
            offsets = tuple(
                (dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)
            )
        else:
            raise ValueError(f"unknown topology {topology!r}")
        out = []
        for dr, dc in offsets:
            r, c = row + dr, col + dc
            if 0 <= r < self.rows and 0 <= c < self.cols:
                out.append(r * self.cols + c)
        return tuple(out)


@dataclass(frozen=True)
class PixelModel:
    """Per-pixel detector response parameters.

    eta_system_max is the plateau system detection efficiency (optics included)
    reached at high bias with parallel polarization. The bias dependence below
    it is a symmetric error-function sigmoid; dark counts follow a flat floor
    plus an exponential rise above dcr_knee_ua with amplitude equal to the floor.
    """

    channel: int
    eta_system_max: float = 0.8193306506889303
    i_turn_on_ua: float = 14.0  # sigmoid midpoint: 0.5 relative efficiency
    i_width_ua: float = 2.0
    dcr_base_cps: float = 18.48283639957513  # 20 cps at 21 uA with knee 22, scale 0.4
    dcr_knee_ua: float = 22.0
    dcr_scale_ua: float = 0.4
    dead_time_ns: float = 49.6124031007752  # 1/(2*tau) ~ 10.08 Mcps
    jitter_fwhm_ps: float = 85.0
    i_switch_ua: float = 25.0

    def __post_init__(self):
        if not (0 < self.eta_system_max <= 1):
            raise ValueError("eta_system_max must be in (0, 1]")
        if not (0 < self.i_turn_on_ua < self.dcr_knee_ua <= self.i_switch_ua):
            raise ValueError("require 0 < i_turn_on_ua < dcr_knee_ua <= i_switch_ua")
        if self.i_width_ua <= 0 or self.dcr_scale_ua <= 0:
            raise ValueError("i_width_ua and dcr_scale_ua must be positive")
        if self.dead_time_ns < 0 or self.jitter_fwhm_ps < 0 or self.dcr_base_cps < 0:
            raise ValueError("dead_time_ns, jitter_fwhm_ps, dcr_base_cps must be >= 0")


@dataclass(frozen=True)
class OpticalPath:
    """Free-space path in front of the array. Element transmissions are
    descriptive (eta_system_max already includes them); polarization_contrast
    is the multiplicative efficiency factor for perpendicular polarization."""

    element_transmissions: tuple[float, ...] = (0.97, 0.97, 0.97, 0.96, 0.98)
    polarization_contrast: float = 0.9485199485199485

    def __post_init__(self):
        if any(not (0 < t <= 1) for t in self.element_transmissions):
            raise ValueError("element transmissions must be in (0, 1]")
        if not (0 < self.polarization_contrast <= 1):
            raise ValueError("polarization_contrast must be in (0, 1]")

    @property
    def total_transmission(self) -> float:
        return float(np.prod(self.element_transmissions))


@dataclass(frozen=True)
class BeamProfile:
    """Illumination profile. 'gaussian' uses the 1/e^2 intensity diameter;
    'flood' is uniform over a stated rectangle (extent_um) centered on center_um.
    flux_cps is the total photon rate delivered over the whole profile."""

    kind: str = "gaussian"
    center_um: tuple[float, float] = (0.0, 0.0)
    flux_cps: float = 1.0e6
    polarization: str = "parallel"
    diameter_1e2_um: float = 27.0
    extent_um: tuple[float, float] = field(default=(240.0, 240.0))

    def __post_init__(self):
        if self.kind not in ("gaussian", "flood"):
            raise ValueError(f"unknown beam kind {self.kind!r}")
        if self.polarization not in ("parallel", "perpendicular"):
            raise ValueError(f"unknown polarization {self.polarization!r}")
        if self.flux_cps < 0:
            raise ValueError("flux_cps must be >= 0")
        if self.kind == "gaussian" and self.diameter_1e2_um <= 0:
            raise ValueError("diameter_1e2_um must be positive")
        if self.kind == "flood" and (self.extent_um[0] <= 0 or self.extent_um[1] <= 0):
            raise ValueError("flood extent_um must be positive")


def _gauss_frac(lo, hi, center, sigma):
    """Fraction of a 1-D Gaussian (std sigma) falling in [lo, hi]."""
    s = sigma * sqrt(2.0)
    return 0.5 * (erf((hi - center) / s) - erf((lo - center) / s))


def absorption_fraction(geometry: ArrayGeometry, channel: int, beam: BeamProfile) -> float:
    """Fraction of the beam power landing on one pixel's active rectangle.

    For a gaussian beam the 1/e^2 intensity diameter D maps to a Gaussian power
    density with sigma = D/4 per axis, so the fraction is a product of 1-D
    error-function integrals. For a flood it is the rectangle overlap ratio.
    """
    x_lo, x_hi, y_lo, y_hi = geometry.active_bounds(channel)
    bx, by = beam.center_um
    if beam.kind == "gaussian":
        sigma = beam.diameter_1e2_um / 4.0
        return float(_gauss_frac(x_lo, x_hi, bx, sigma) * _gauss_frac(y_lo, y_hi, by, sigma))
    w, h = beam.extent_um
    fx_lo, fx_hi = bx - w / 2, bx + w / 2
    fy_lo, fy_hi = by - h / 2, by + h / 2
    dx = max(0.0, min(x_hi, fx_hi) - max(x_lo, fx_lo))
    dy = max(0.0, min(y_hi, fy_hi) - max(y_lo, fy_lo))
    return (dx * dy) / (w * h)


def absorption_map(geometry: ArrayGeometry, beam: BeamProfile) -> np.ndarray:
    """absorption_fraction for every channel, shape (n_pixels,)."""
    ch = np.arange(geometry.n_pixels)
    rows, cols = divmod(ch, geometry.cols)
    x0, y0 = geometry.origin_um
    cx = x0 + cols * geometry.pitch_um
    cy = y0 + rows * geometry.pitch_um
    hw, hh = geometry.active_width_um / 2, geometry.active_height_um / 2
    bx, by = beam.center_um
    if beam.kind == "gaussian":
        sigma = beam.diameter_1e2_um / 4.0
        fx = _gauss_frac(cx - hw, cx + hw, bx, sigma)
        fy = _gauss_frac(cy - hh, cy + hh, by, sigma)
        return fx * fy
    w, h = beam.extent_um
    dx = np.clip(np.minimum(cx + hw, bx + w / 2) - np.maximum(cx - hw, bx - w / 2), 0, None)
    dy = np.clip(np.minimum(cy + hh, by + h / 2) - np.maximum(cy - hh, by - h / 2), 0, None)
    return (dx * dy) / (w * h)


def internal_efficiency(pixel: PixelModel, bias_ua: float) -> float:
    """Relative internal efficiency in [0, 1]: error-function sigmoid of bias,
    midpoint at i_turn_on_ua, plateau 1. Raises if the bias would latch the wire."""
    if bias_ua < 0:
        raise ValueError("bias_ua must be >= 0")
    if bias_ua > pixel.i_switch_ua:
        raise DetectorLatchedError(
            f"bias {bias_ua} uA above switching current {pixel.i_switch_ua} uA "
            f"on channel {pixel.channel}: detector latched"
        )
    z = (bias_ua - pixel.i_turn_on_ua) / (pixel.i_width_ua * sqrt(2.0))
    return float(0.5 * (1.0 + erf(z)))


def dark_rate(pixel: PixelModel, bias_ua: float) -> float:
    """Dark count rate in cps: flat floor plus exponential rise above the knee,
    with the exponential amplitude at the knee equal to the floor."""
    if bias_ua < 0:
        raise ValueError("bias_ua must be >= 0")
    if bias_ua > pixel.i_switch_ua:
        raise DetectorLatchedError(
            f"bias {bias_ua} uA above switching current {pixel.i_switch_ua} uA "
            f"on channel {pixel.channel}: detector latched"
        )
    return float(
        pixel.dcr_base_cps
        * (1.0 + np.exp((bias_ua - pixel.dcr_knee_ua) / pixel.dcr_scale_ua))
    )


def expected_pixel_rate(
    geometry: ArrayGeometry,
    pixel: PixelModel,
    optics: OpticalPath,
    beam: BeamProfile,
    bias_ua: float,
) -> float:
    """Expected detected count rate (cps) on one pixel before dead time:
    flux x absorption x eta_system_max x internal_efficiency x polarization
    factor, plus the dark rate. Affine in flux."""
    pol = optics.polarization_contrast if beam.polarization == "perpendicular" else 1.0
    photon = (
        beam.flux_cps
        * absorption_fraction(geometry, pixel.channel, beam)
        * pixel.eta_system_max
        * internal_efficiency(pixel, bias_ua)
        * pol
    )
    return photon + dark_rate(pixel, bias_ua)


def expected_rate_maps(
    geometry: ArrayGeometry,
    pixels: tuple[PixelModel, ...],
    optics: OpticalPath,
    beam: BeamProfile,
    bias_ua: float,
) -> tuple[np.ndarray, np.ndarray]:
    """(photon_rates, dark_rates) arrays over all channels, cps.

    Same model as expected_pixel_rate but split, which the synthesizer needs:
    pulsed sources gate photons on pulse epochs while darks stay Poissonian.
    """
    absorb = absorption_map(geometry, beam)
    pol = optics.polarization_contrast if beam.polarization == "perpendicular" else 1.0
    photon = np.empty(geometry.n_pixels)
    dark = np.empty(geometry.n_pixels)
    for i, px in enumerate(pixels):
        photon[i] = beam.flux_cps * absorb[i] * px.eta_system_max * pol * internal_efficiency(
            px, bias_ua
        )
        dark[i] = dark_rate(px, bias_ua)
    return photon, dark
