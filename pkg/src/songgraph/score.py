"""In-memory symbolic score: notes, keys, quantization, instrument mapping.

Time lives in one of two domains. Right after parsing, note onsets and
durations are MIDI ticks. `quantize` converts them to the 48th-note grid
(12 units per quarter note, 48 per 4/4 bar), after which `Score.quantized`
is True and `Score.bars` is meaningful.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from importlib import resources

from .errors import ConfigError, ParseWarning

GRID_PER_QUARTER = 12
GRID_PER_BAR = 48
N_PITCHES = 128


@dataclass(frozen=True, slots=True)
class Note:
    """One note. `onset`/`duration` are ticks before quantization, grid units after.

    `channel` and `program` are carried for writing/mapping but excluded from
    equality: note identity is (pitch, onset, duration, velocity, instrument).
    """

    pitch: int
    onset: int
    duration: int
    velocity: int
    instrument: int = -1
    channel: int = field(default=0, compare=False)
    program: int = field(default=0, compare=False)


@dataclass(frozen=True, slots=True)
class Key:
    """Key label: tonic pitch class 0-11 plus major/minor mode."""

    tonic: int
    minor: bool = False

    @property
    def slot(self) -> int:
        """Embedding slot in 0..23 (majors first, then minors)."""
        return self.tonic + (12 if self.minor else 0)

    def __str__(self) -> str:
        names = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
        return f"{names[self.tonic]}:{'min' if self.minor else 'maj'}"


@dataclass(frozen=True, slots=True)
class Score:
    notes: tuple[Note, ...]
    ticks_per_quarter: int = 480
    bars: int = 0
    key: Key | None = None
    genre: str | None = None
    quantized: bool = False


def sort_notes(notes) -> tuple[Note, ...]:
    return tuple(
        sorted(notes, key=lambda n: (n.onset, n.instrument, n.pitch, n.duration, n.velocity))
    )


def _snap(value: float) -> int:
    # nearest grid unit, ties rounded up
    import math

    return int(math.floor(value + 0.5))


def quantize(score: Score) -> Score:
    """Snap onsets/durations to the 48th-note grid and normalize overlaps.

    Idempotent: a quantized score only goes through overlap normalization
    again, which is itself idempotent. Durations floor at 1 grid unit;
    overlapping same-pitch notes on one instrument are truncated at the
    next onset.
    """
    if score.ticks_per_quarter <= 0:
        raise ConfigError("ticks_per_quarter must be positive")
    unit = score.ticks_per_quarter / GRID_PER_QUARTER
    if score.quantized:
        snapped = list(score.notes)
    else:
        snapped = [
            replace(
                n,
                onset=_snap(n.onset / unit),
                duration=max(1, _snap(n.duration / unit)),
            )
            for n in score.notes
        ]

    # Truncate a note at the next onset of the same (instrument, channel, pitch).
    by_line: dict[tuple[int, int, int], list[int]] = {}
    for i, n in enumerate(snapped):
        by_line.setdefault((n.instrument, n.channel, n.pitch), []).append(i)
    for idxs in by_line.values():
        idxs.sort(key=lambda i: snapped[i].onset)
        for a, b in zip(idxs, idxs[1:]):
            na, nb = snapped[a], snapped[b]
            if nb.onset > na.onset and na.onset + na.duration > nb.onset:
                snapped[a] = replace(na, duration=nb.onset - na.onset)

    notes = sort_notes(snapped)
    bars = (max(n.onset for n in notes) // GRID_PER_BAR + 1) if notes else 0
    return replace(score, notes=notes, bars=bars, quantized=True)


@dataclass(frozen=True)
class InstrumentScheme:
    """(channel, program) -> instrument class mapping.

    `program_to_class[p]` is -1 for unmapped programs, which fall into the
    `other` class (with a warning) if one is configured.
    """

    names: tuple[str, ...]
    drums: int
    program_to_class: tuple[int, ...]
    write_programs: tuple[int, ...]
    other: int | None = None

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def class_id(self, name: str) -> int:
        return self.names.index(name)

    def lookup(self, channel: int, program: int) -> int:
        if channel == 9:
            return self.drums
        cls = self.program_to_class[program]
        if cls >= 0:
            return cls
        if self.other is not None:
            warnings.warn(
                f"program {program} not in mapping; using '{self.names[self.other]}'",
                ParseWarning,
                stacklevel=2,
            )
            return self.other
        raise ConfigError(f"program {program} unmapped and no 'other' class configured")


def parse_scheme(text: str) -> InstrumentScheme:
    """Parse the plain-text instrument table (see data/instruments.cfg)."""
    names: list[str] = []
    write_programs: list[int] = []
    drums = -1
    prog: list[int] = [-1] * 128
    ranges: list[tuple[str, int, int]] = []
    other_name: str | None = None

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "other":
            if len(parts) != 2:
                raise ConfigError(f"bad 'other' line: {raw!r}")
            other_name = parts[1]
            continue
        if len(parts) != 4:
            raise ConfigError(f"bad instrument line: {raw!r}")
        cls_id, name, span, wprog = parts
        if int(cls_id) != len(names):
            raise ConfigError("instrument class ids must be consecutive from 0")
        names.append(name)
        write_programs.append(int(wprog))
        if span == "drums":
            drums = int(cls_id)
        else:
            lo, _, hi = span.partition("-")
            ranges.append((name, int(lo), int(hi) if hi else int(lo)))

    if drums < 0:
        raise ConfigError("instrument table must define a drums class")
    for name, lo, hi in ranges:
        if not (0 <= lo <= hi <= 127):
            raise ConfigError(f"program range {lo}-{hi} out of bounds")
        for p in range(lo, hi + 1):
            prog[p] = names.index(name)

    other = names.index(other_name) if other_name is not None else None
    return InstrumentScheme(tuple(names), drums, tuple(prog), tuple(write_programs), other)


_DEFAULT_SCHEME: InstrumentScheme | None = None


def default_scheme() -> InstrumentScheme:
    """The bundled 17-class table (drums + 16 General-MIDI program families)."""
    global _DEFAULT_SCHEME
    if _DEFAULT_SCHEME is None:
        text = resources.files("songgraph").joinpath("data/instruments.cfg").read_text()
        _DEFAULT_SCHEME = parse_scheme(text)
    return _DEFAULT_SCHEME


def map_instruments(score: Score, scheme: InstrumentScheme | None = None) -> Score:
    """Assign every note its instrument class from (channel, program)."""
    scheme = scheme or default_scheme()
    notes = tuple(
        replace(n, instrument=scheme.lookup(n.channel, n.program)) for n in score.notes
    )
    return replace(score, notes=sort_notes(notes))
