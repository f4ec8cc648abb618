"""Two-channel onset-only pianoroll images, one per (bar, instrument).

A cell holds data only at a note's onset: channel 0 is velocity, channel 1
is duration in grid units (raw, not normalized; a note crossing the barline
keeps its full duration here). Layout is (pitch 0-127 rows, time 0-47
columns).
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParseWarning
from .score import GRID_PER_BAR, N_PITCHES, Note, Score

CONLON_MAGIC = b"CLON"


@dataclass
class ConlonImage:
    velocity: np.ndarray
    duration: np.ndarray

    @classmethod
    def zeros(cls) -> "ConlonImage":
        return cls(
            np.zeros((N_PITCHES, GRID_PER_BAR)),
            np.zeros((N_PITCHES, GRID_PER_BAR)),
        )

    def is_empty(self) -> bool:
        return not np.any(self.velocity > 0)

    def stack(self) -> np.ndarray:
        """(2, 128, 48) array, velocity channel first."""
        return np.stack([self.velocity, self.duration])


def encode_conlon(notes) -> ConlonImage:
    """Encode the notes of one (bar, instrument); onsets are bar offsets 0-47.

    Two notes at the same (pitch, offset) keep the higher velocity with a
    warning.
    """
    image = ConlonImage.zeros()
    for n in notes:
        if not 0 <= n.onset < GRID_PER_BAR:
            raise ValueError(f"offset {n.onset} outside bar")
        if not 0 <= n.pitch < N_PITCHES:
            raise ValueError(f"pitch {n.pitch} out of range")
        if image.velocity[n.pitch, n.onset] > 0:
            warnings.warn(
                f"two notes at pitch {n.pitch}, offset {n.onset}; keeping the louder",
                ParseWarning,
                stacklevel=2,
            )
            if n.velocity <= image.velocity[n.pitch, n.onset]:
                continue
        image.velocity[n.pitch, n.onset] = n.velocity
        image.duration[n.pitch, n.onset] = n.duration
    return image


def decode_conlon(image: ConlonImage, min_velocity: float = 1.0) -> list[Note]:
    """Cells with velocity > min_velocity become notes (onset = bar offset).

    Velocities round and clamp to 1-127; durations round with a floor of 1
    grid unit. Instrument is left unassigned.
    """
    notes = []
    pitches, offsets = np.nonzero(image.velocity > min_velocity)
    for pitch, offset in zip(pitches.tolist(), offsets.tolist()):
        velocity = min(127, max(1, int(math.floor(image.velocity[pitch, offset] + 0.5))))
        duration = max(1, int(math.floor(image.duration[pitch, offset] + 0.5)))
        notes.append(Note(pitch=pitch, onset=offset, duration=duration, velocity=velocity))
    return notes


@dataclass
class BarSequence:
    """N x I grid of optional ConlonImages; a cell is present iff non-empty."""

    n_bars: int
    instruments: tuple[int, ...]
    images: dict[tuple[int, int], ConlonImage] = field(default_factory=dict)

    def get(self, bar: int, instrument: int) -> ConlonImage | None:
        return self.images.get((bar, instrument))

    def has(self, bar: int, instrument: int) -> bool:
        return (bar, instrument) in self.images

    def merged(self, bar: int) -> ConlonImage:
        """All instruments of one bar summed into a single image."""
        out = ConlonImage.zeros()
        for inst in self.instruments:
            img = self.images.get((bar, inst))
            if img is not None:
                out.velocity += img.velocity
                out.duration += img.duration
        return out


def split_bars(score: Score) -> BarSequence:
    """Group a quantized score into per-(bar, instrument) images.

    A note belongs to bar onset // 48; notes crossing the barline stay in
    their onset bar with full duration.
    """
    if not score.quantized:
        raise ValueError("split_bars needs a quantized score")
    groups: dict[tuple[int, int], list[Note]] = {}
    for n in score.notes:
        bar = n.onset // GRID_PER_BAR
        groups.setdefault((bar, n.instrument), []).append(
            Note(
                pitch=n.pitch,
                onset=n.onset % GRID_PER_BAR,
                duration=n.duration,
                velocity=n.velocity,
                instrument=n.instrument,
            )
        )
    instruments = tuple(sorted({inst for _, inst in groups}))
    seq = BarSequence(n_bars=score.bars, instruments=instruments)
    for cell, notes in groups.items():
        seq.images[cell] = encode_conlon(notes)
    return seq


def conlon_bytes(image: ConlonImage) -> bytes:
    header = CONLON_MAGIC + struct.pack("<III", 2, N_PITCHES, GRID_PER_BAR)
    body = image.stack().astype("<f4").tobytes()
    return header + body


def conlon_from_bytes(blob: bytes) -> ConlonImage:
    if blob[:4] != CONLON_MAGIC:
        raise FormatError("not a CONLON tensor dump")
    channels, pitches, steps = struct.unpack("<III", blob[4:16])
    if (channels, pitches, steps) != (2, N_PITCHES, GRID_PER_BAR):
        raise FormatError(f"unexpected tensor shape {(channels, pitches, steps)}")
    data = np.frombuffer(blob[16:], dtype="<f4")
    if data.size != 2 * pitches * steps:
        raise FormatError("tensor payload size mismatch")
    stack = data.reshape(2, pitches, steps).astype(np.float64)
    return ConlonImage(stack[0], stack[1])


def save_conlon(image: ConlonImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(conlon_bytes(image))


def load_conlon(path) -> ConlonImage:
    with open(path, "rb") as fh:
        return conlon_from_bytes(fh.read())


def write_pgm(gray: np.ndarray, path) -> None:
    """Binary PGM (P5) of values already scaled to [0, 1]."""
    levels = np.clip(np.round(np.asarray(gray, dtype=np.float64) * 255), 0, 255)
    data = levels.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def render_conlon_pgm(image: ConlonImage, velocity_path, duration_path) -> None:
    """One PGM per channel, pitch 0 at the bottom row."""
    write_pgm(np.flipud(image.velocity) / 127.0, velocity_path)
    write_pgm(np.flipud(np.clip(image.duration, 0, GRID_PER_BAR)) / GRID_PER_BAR, duration_path)


def render_curve_pgm(values, path, height: int = 64) -> None:
    """Bar-chart PGM of a 1-D curve, min-max normalized; flat curves render black."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    levels = (v - v.min()) / span if span > 0 else np.zeros_like(v)
    rows = np.arange(height)[:, None]  # row 0 is the top of the image
    filled = rows >= (height - np.round(levels * height)[None, :])
    write_pgm(filled.astype(np.float64), path)
