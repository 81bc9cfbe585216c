"""Deterministic simulator and analysis toolkit for a 64-pixel
superconducting-nanowire single-photon imaging array read out through a
time-to-digital converter.

The simulator turns a JSON scenario (device parameters, optics, beam,
source, readout) into a sorted time-tag stream; the analysis side recovers
the standard characterization quantities (efficiency maps, dark counts,
maximum count rate, timing jitter, crosstalk bounds) from such streams.
"""

__version__ = "0.1.0"

from .device import (
    ArrayGeometry,
    BeamProfile,
    OpticalPath,
    PixelModel,
    absorption_fraction,
    absorption_map,
    dark_rate,
    expected_pixel_rate,
    expected_rate_maps,
    internal_efficiency,
)
from .errors import (
    AnalysisError,
    DetectorLatchedError,
    RateCapError,
    ScenarioError,
    TagFormatError,
)
from .scenario import (
    DEFAULT_ETA_SYSTEM_MAX,
    Scenario,
    calibrated_eta_system_max,
    default_scenario,
    default_scenario_dict,
    load_scenario,
    save_scenario,
    scenario_from_dict,
)
from .simulate import SimulationResult, simulate
from .stream import TagStream, TimeTag, empty_stream
from .synth import (
    CrosstalkModel,
    SourceModel,
    TdcModel,
    apply_dead_time,
    digitize,
    generate_arrivals,
    inject_crosstalk,
    merge_streams,
)
from .tagio import (
    TagFileHeader,
    export_csv,
    load_tags,
    read_header,
    read_tags,
    stream_stats,
    write_tags,
)

__all__ = [
    "__version__",
    "AnalysisError",
    "ArrayGeometry",
    "BeamProfile",
    "CrosstalkModel",
    "DEFAULT_ETA_SYSTEM_MAX",
    "DetectorLatchedError",
    "OpticalPath",
    "PixelModel",
    "RateCapError",
    "Scenario",
    "ScenarioError",
    "SimulationResult",
    "SourceModel",
    "TagFileHeader",
    "TagFormatError",
    "TagStream",
    "TdcModel",
    "TimeTag",
    "absorption_fraction",
    "absorption_map",
    "apply_dead_time",
    "calibrated_eta_system_max",
    "dark_rate",
    "default_scenario",
    "default_scenario_dict",
    "digitize",
    "empty_stream",
    "expected_pixel_rate",
    "expected_rate_maps",
    "export_csv",
    "generate_arrivals",
    "inject_crosstalk",
    "internal_efficiency",
    "load_scenario",
    "load_tags",
    "merge_streams",
    "read_header",
    "read_tags",
    "save_scenario",
    "scenario_from_dict",
    "simulate",
    "stream_stats",
    "write_tags",
]
