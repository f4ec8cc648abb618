"""Exception and warning types shared across the package."""


class SongGraphError(Exception):
    """Base class for all library errors."""


class MidiParseError(SongGraphError):
    """Structurally invalid Standard MIDI File data."""


class UnsupportedMidiError(MidiParseError):
    """Well-formed SMF data using features outside this pipeline's scope
    (format 2, SMPTE time division, non-4/4 time signatures)."""


class FormatError(SongGraphError):
    """A serialized artifact (tensor dump, graph JSON, checkpoint) is malformed."""


class EmptyImageError(SongGraphError):
    """An operation that needs at least one positive cell got an empty image."""


class NumericError(SongGraphError):
    """A numeric computation produced non-finite values."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(message if where is None else f"{message} (in {where})")
        self.where = where


class TrainingDivergedError(NumericError):
    """Loss became non-finite during training."""

    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


class ConfigError(SongGraphError):
    """Invalid run configuration."""


class ParseWarning(UserWarning):
    """Recoverable oddity in input data (unpaired note-on, unmapped program, ...)."""
