"""Exception types shared across the pipeline."""


class LeafFitError(Exception):
    """Base class for all pipeline errors."""


class FormatError(LeafFitError):
    """Input file does not match the expected layout."""


class DataError(LeafFitError):
    """Input values are unusable (non-finite, empty, ...)."""


class ParameterError(LeafFitError):
    """A caller-supplied parameter is out of range or inconsistent."""


class DegenerateInputError(LeafFitError):
    """Geometry too degenerate for the requested operation."""


class NumericsError(LeafFitError):
    """A numerical solve failed; message carries diagnostics."""


class TraceError(LeafFitError):
    """Rootward path tracing got stuck before reaching the root."""


class ReconstructionError(LeafFitError):
    """Surface reconstruction produced unusable topology."""


class StageError(LeafFitError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class AssetError(LeafFitError):
    """Asset container is inconsistent, corrupt, or from another version."""
