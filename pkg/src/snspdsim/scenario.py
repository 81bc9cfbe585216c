"""Scenario configuration: a versioned JSON schema tying the device model to
the synthesis blocks, with scalar-broadcast shorthand for per-pixel fields.

Per-pixel numeric fields accept a scalar (broadcast to every pixel) or a list
of length n_pixels. An optional "spread" block draws per-pixel Gaussian
variation (clipped at +-clip_sigma) deterministically from device_seed, so a
scenario file fully determines the device.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from .device import (
    ArrayGeometry,
    BeamProfile,
    OpticalPath,
    PixelModel,
    absorption_map,
    internal_efficiency,
)
from .errors import ScenarioError
from .synth import STAGE_DEVICE_SPREAD, CrosstalkModel, SourceModel, TdcModel, keyed_rng

SCHEMA_VERSION = 1

# spread draws are keyed per field so adding one does not shift the others
_SPREAD_FIELD_IDS = {
    "eta_system_max": 0,
    "i_turn_on_ua": 1,
    "i_width_ua": 2,
    "dcr_base_cps": 3,
    "dcr_knee_ua": 4,
    "dcr_scale_ua": 5,
    "dead_time_ns": 6,
    "jitter_fwhm_ps": 7,
    "i_switch_ua": 8,
}

_PIXEL_FIELDS = tuple(_SPREAD_FIELD_IDS)

_number = {"type": "number"}
_scalar_or_list = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
    ]
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "device_seed": {"type": "integer", "minimum": 0},
        "bias_ua": {"type": "number", "minimum": 0},
        "wire_efficiency": {"type": "number", "minimum": 0, "maximum": 1},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 1},
                "pitch_um": {"type": "number", "exclusiveMinimum": 0},
                "active_width_um": {"type": "number", "exclusiveMinimum": 0},
                "active_height_um": {"type": "number", "exclusiveMinimum": 0},
                "origin_um": {
                    "type": "array",
                    "items": _number,
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "pixels": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{name: _scalar_or_list for name in _PIXEL_FIELDS},
                "spread": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        name: {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["sigma"],
                            "properties": {
                                "sigma": {"type": "number", "minimum": 0},
                                "clip_sigma": {"type": "number", "exclusiveMinimum": 0},
                            },
                        }
                        for name in _PIXEL_FIELDS
                    },
                },
            },
        },
        "optics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "element_transmissions": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
                "polarization_contrast": {
                    "type": "number",
                    "exclusiveMinimum": 0,
                    "maximum": 1,
                },
            },
        },
        "beam": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gaussian", "flood"]},
                "center_um": {
                    "type": "array",
                    "items": _number,
                    "minItems": 2,
                    "maxItems": 2,
                },
                "flux_cps": {"type": "number", "minimum": 0},
                "polarization": {"enum": ["parallel", "perpendicular"]},
                "diameter_1e2_um": {"type": "number", "exclusiveMinimum": 0},
                "extent_um": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["cw", "pulsed"]},
                "rep_rate_mhz": {"type": "number", "exclusiveMinimum": 0},
                "pulse_width_ps": {"type": "number", "minimum": 0},
                "sync_channel": {"type": "integer", "minimum": 0},
            },
        },
        "tdc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tick_ps": {"type": "number", "exclusiveMinimum": 0},
                "rms_jitter_ps": {"type": "number", "minimum": 0},
                "max_tag_rate_cps": {"type": "number", "exclusiveMinimum": 0},
                "drop_policy": {"enum": ["drop_newest", "error"]},
                "window_ms": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "crosstalk": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probability": {"type": "number", "minimum": 0, "maximum": 1},
                "delay_mean_ns": {"type": "number", "minimum": 0},
                "delay_sigma_ns": {"type": "number", "minimum": 0},
                "topology": {"enum": ["4-neighbor", "8-neighbor"]},
            },
        },
    },
}


@dataclass(frozen=True)
class Scenario:
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    pixels: tuple[PixelModel, ...] = ()
    optics: OpticalPath = field(default_factory=OpticalPath)
    beam: BeamProfile = field(default_factory=BeamProfile)
    bias_ua: float = 21.0
    source: SourceModel = field(default_factory=SourceModel)
    tdc: TdcModel = field(default_factory=TdcModel)
    crosstalk: CrosstalkModel = field(default_factory=CrosstalkModel)
    device_seed: int = 0
    description: str = ""

    def __post_init__(self):
        if len(self.pixels) != self.geometry.n_pixels:
            raise ScenarioError(
                f"need {self.geometry.n_pixels} pixel models, got {len(self.pixels)}"
            )
        if self.source.kind == "pulsed" and self.source.sync_channel < self.geometry.n_pixels:
            raise ScenarioError("sync_channel must not collide with a detector channel")

    @property
    def channel_count(self) -> int:
        n = self.geometry.n_pixels
        if self.source.kind == "pulsed":
            n = max(n, self.source.sync_channel + 1)
        return n

    def dead_time_ps(self) -> dict[int, float]:
        return {px.channel: px.dead_time_ns * 1.0e3 for px in self.pixels}

    def detector_sigma_ps(self) -> dict[int, float]:
        from .device import FWHM_SIGMA

        out = {px.channel: px.jitter_fwhm_ps / FWHM_SIGMA for px in self.pixels}
        if self.source.kind == "pulsed":
            out[self.source.sync_channel] = 0.0  # electrical sync: TDC jitter only
        return out


def _tick_ratio(tick_ps: float) -> tuple[int, int]:
    """Exact rational tick, normalized to denominator 1000 when possible."""
    frac = Fraction(repr(float(tick_ps))).limit_denominator(10**9)
    if 1000 % frac.denominator == 0:
        mult = 1000 // frac.denominator
        return frac.numerator * mult, 1000
    return frac.numerator, frac.denominator


def _broadcast(value, n: int, path: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ScenarioError(f"{path}: expected a scalar or {n} values, got {arr.size}")
    return arr


def materialize_pixels(
    geometry: ArrayGeometry, pixel_cfg: dict, device_seed: int
) -> tuple[PixelModel, ...]:
    """Build per-pixel models from config, applying clipped-Gaussian spread.

    Spread draws come from the (device_seed, field, STAGE_DEVICE_SPREAD) RNG
    lane, so the same scenario file always yields the same device.
    """
    n = geometry.n_pixels
    template = PixelModel(channel=0)
    values = {}
    for name in _PIXEL_FIELDS:
        base = pixel_cfg.get(name, getattr(template, name))
        values[name] = _broadcast(base, n, f"$.pixels.{name}")
    for name, spec in pixel_cfg.get("spread", {}).items():
        sigma = float(spec["sigma"])
        if sigma == 0:
            continue
        clip = float(spec.get("clip_sigma", 2.0))
        rng = keyed_rng(device_seed, _SPREAD_FIELD_IDS[name], STAGE_DEVICE_SPREAD)
        draw = rng.normal(0.0, 1.0, n)
        np.clip(draw, -clip, clip, out=draw)
        values[name] = values[name] + sigma * draw
    try:
        return tuple(
            PixelModel(channel=ch, **{name: float(values[name][ch]) for name in _PIXEL_FIELDS})
            for ch in range(n)
        )
    except ValueError as e:
        raise ScenarioError(f"$.pixels: {e}") from e


def scenario_from_dict(cfg: dict) -> Scenario:
    """Validate a scenario dict against the schema and build the objects.

    Raises ScenarioError naming the offending JSON path on any violation,
    including unknown keys and a wrong schema_version.
    """
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path
        )
        raise ScenarioError(f"{path}: {e.message}")
    if cfg.get("wire_efficiency", 0.0) != 0.0:
        raise ScenarioError(
            "$.wire_efficiency: photosensitive connecting wires are not modeled; "
            "only the default 0.0 is supported"
        )
    try:
        geometry = ArrayGeometry(**{
            "rows": cfg.get("geometry", {}).get("rows", 8),
            "cols": cfg.get("geometry", {}).get("cols", 8),
            "pitch_um": cfg.get("geometry", {}).get("pitch_um", 30.0),
            "active_width_um": cfg.get("geometry", {}).get("active_width_um", 27.8),
            "active_height_um": cfg.get("geometry", {}).get("active_height_um", 27.5),
            "origin_um": tuple(cfg.get("geometry", {}).get("origin_um", (0.0, 0.0))),
        })
    except ValueError as e:
        raise ScenarioError(f"$.geometry: {e}") from e

    device_seed = int(cfg.get("device_seed", 0))
    pixels = materialize_pixels(geometry, cfg.get("pixels", {}), device_seed)

    try:
        opt_cfg = cfg.get("optics", {})
        optics = OpticalPath(
            element_transmissions=tuple(
                opt_cfg.get("element_transmissions", OpticalPath().element_transmissions)
            ),
            polarization_contrast=opt_cfg.get(
                "polarization_contrast", OpticalPath().polarization_contrast
            ),
        )
    except ValueError as e:
        raise ScenarioError(f"$.optics: {e}") from e

    try:
        beam_cfg = dict(cfg.get("beam", {}))
        defaults = BeamProfile()
        beam = BeamProfile(
            kind=beam_cfg.get("kind", defaults.kind),
            center_um=tuple(beam_cfg.get("center_um", defaults.center_um)),
            flux_cps=beam_cfg.get("flux_cps", defaults.flux_cps),
            polarization=beam_cfg.get("polarization", defaults.polarization),
            diameter_1e2_um=beam_cfg.get("diameter_1e2_um", defaults.diameter_1e2_um),
            extent_um=tuple(beam_cfg.get("extent_um", defaults.extent_um)),
        )
    except ValueError as e:
        raise ScenarioError(f"$.beam: {e}") from e

    try:
        src_cfg = cfg.get("source", {})
        source = SourceModel(
            kind=src_cfg.get("kind", "cw"),
            rep_rate_mhz=src_cfg.get("rep_rate_mhz", 20.0),
            pulse_width_ps=src_cfg.get("pulse_width_ps", 0.4),
            sync_channel=src_cfg.get("sync_channel", geometry.n_pixels),
        )
    except ValueError as e:
        raise ScenarioError(f"$.source: {e}") from e

    try:
        tdc_cfg = cfg.get("tdc", {})
        num, den = _tick_ratio(tdc_cfg.get("tick_ps", 15.625))
        tdc = TdcModel(
            tick_num=num,
            tick_den=den,
            rms_jitter_ps=tdc_cfg.get("rms_jitter_ps", 20.0),
            max_tag_rate_cps=tdc_cfg.get("max_tag_rate_cps", 900.0e6),
            drop_policy=tdc_cfg.get("drop_policy", "drop_newest"),
            window_ms=tdc_cfg.get("window_ms", 1.0),
        )
    except ValueError as e:
        raise ScenarioError(f"$.tdc: {e}") from e

    try:
        ct_cfg = cfg.get("crosstalk", {})
        crosstalk = CrosstalkModel(
            probability=ct_cfg.get("probability", 0.0),
            delay_mean_ns=ct_cfg.get("delay_mean_ns", 2.0),
            delay_sigma_ns=ct_cfg.get("delay_sigma_ns", 1.0),
            topology=ct_cfg.get("topology", "4-neighbor"),
        )
    except ValueError as e:
        raise ScenarioError(f"$.crosstalk: {e}") from e

    return Scenario(
        geometry=geometry,
        pixels=pixels,
        optics=optics,
        beam=beam,
        bias_ua=float(cfg.get("bias_ua", 21.0)),
        source=source,
        tdc=tdc,
        crosstalk=crosstalk,
        device_seed=device_seed,
        description=cfg.get("description", ""),
    )


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(cfg, dict) or "schema_version" not in cfg:
        raise ScenarioError(f"{path}: $.schema_version: missing")
    return scenario_from_dict(cfg)


def save_scenario(cfg: dict, path: str | Path) -> None:
    scenario_from_dict(cfg)  # refuse to write an invalid file
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def calibrated_eta_system_max(
    geometry: ArrayGeometry | None = None,
    spot_diameter_um: float = 27.0,
    target_mean_spde: float = 0.777,
    bias_ua: float = 21.0,
) -> float:
    """Plateau system efficiency that makes the spot-scan SPDE measurement
    recover target_mean_spde on average over all pixel positions.

    The spot-scan method counts the whole array while a gaussian spot sits on
    one pixel, so the measured SPDE per position is eta * (total active-area
    capture for that position) * internal_efficiency(bias); the calibration
    divides the target by the mean capture over positions.
    """
    geometry = geometry or ArrayGeometry()
    template = PixelModel(channel=0)
    captures = []
    for ch in range(geometry.n_pixels):
        beam = BeamProfile(
            kind="gaussian",
            center_um=geometry.pixel_center(ch),
            diameter_1e2_um=spot_diameter_um,
            flux_cps=1.0,
        )
        captures.append(absorption_map(geometry, beam).sum())
    mean_capture = float(np.mean(captures))
    return target_mean_spde / (mean_capture * internal_efficiency(template, bias_ua))


# Frozen output of calibrated_eta_system_max() for the default 8x8 geometry;
# kept literal so default devices do not depend on import-time float drift.
DEFAULT_ETA_SYSTEM_MAX = 0.8193306506889303

# Per-pixel spread defaults: SPDE sigma 0.6% absolute maps to eta sigma
# 0.006/0.9486 (mean spot capture); dead time and intrinsic jitter get small
# spreads that keep every pixel inside the documented performance bands.
DEFAULT_PIXEL_SPREAD = {
    "eta_system_max": {"sigma": 0.00633, "clip_sigma": 2.0},
    "dead_time_ns": {"sigma": 1.6, "clip_sigma": 2.0},
    "jitter_fwhm_ps": {"sigma": 1.0, "clip_sigma": 2.0},
}


def default_scenario_dict(**overrides) -> dict:
    """Canonical full-array CW flood scenario as a plain JSON-ready dict.

    The flood covers the array footprint exactly; flux puts roughly 1e5 cps
    on each pixel at the nominal 21 uA bias. Override any top-level block via
    keyword arguments (deep merge is the caller's job).
    """
    cfg = {
        "schema_version": SCHEMA_VERSION,
        "description": "default: CW flood over the full array at nominal bias",
        "device_seed": 1,
        "bias_ua": 21.0,
        "geometry": {
            "rows": 8,
            "cols": 8,
            "pitch_um": 30.0,
            "active_width_um": 27.8,
            "active_height_um": 27.5,
            "origin_um": [0.0, 0.0],
        },
        "pixels": {
            "eta_system_max": DEFAULT_ETA_SYSTEM_MAX,
            "spread": dict(DEFAULT_PIXEL_SPREAD),
        },
        "optics": {},
        "beam": {
            "kind": "flood",
            "center_um": [105.0, 105.0],
            "extent_um": [240.0, 240.0],
            "flux_cps": 9.2e6,
            "polarization": "parallel",
        },
        "source": {"kind": "cw"},
        "tdc": {},
        "crosstalk": {"probability": 0.0},
    }
    cfg.update(overrides)
    return cfg


def default_scenario(**overrides) -> Scenario:
    return scenario_from_dict(default_scenario_dict(**overrides))
