"""Exception types shared across the package."""


class ScenarioError(ValueError):
    """Invalid scenario configuration (carries a JSON path when parsed from file)."""


class DetectorLatchedError(ValueError):
    """Bias at or above the switching current: the nanowire is resistive, no counts."""


class TagFormatError(ValueError):
    """Malformed tag file: bad magic, unsupported version, or truncated payload."""


class RateCapError(RuntimeError):
    """TDC tag-rate budget exceeded under the 'error' drop policy."""

    def __init__(self, window_start_ps: float):
        self.window_start_ps = window_start_ps
        super().__init__(
            f"tag rate cap exceeded in the 1 ms window starting at {window_start_ps:.0f} ps"
        )


class AnalysisError(ValueError):
    """Analysis preconditions not met (missing recordings, degenerate input, ...)."""
