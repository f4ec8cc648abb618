"""Standard MIDI File reader and writer, formats 0 and 1.

Hand-rolled against the SMF binary layout: big-endian chunk headers,
variable-length delta times, running status, velocity-0 note-ons as
note-offs. The reader resolves on/off pairs into `Note`s (tick domain);
the writer emits format 1 with one track per instrument class.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

from .errors import MidiParseError, ParseWarning, UnsupportedMidiError
from .score import GRID_PER_QUARTER, InstrumentScheme, Key, Note, Score, default_scheme, sort_notes

_META_TEMPO = 0x51
_META_TIME_SIG = 0x58
_META_KEY_SIG = 0x59
_META_END_OF_TRACK = 0x2F

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)


@dataclass(frozen=True, slots=True)
class RawEvent:
    """One decoded track event at an absolute tick.

    kind: note_on | note_off | tempo | time_signature | key_signature |
    program_change | other. `channel` is None for meta/sysex events and
    `data` is a kind-specific tuple.
    """

    tick: int
    kind: str
    channel: int | None
    data: tuple


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes")


def _write_vlq(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _parse_header(blob: bytes) -> tuple[int, int, int, int]:
    if len(blob) < 8 or blob[:4] != b"MThd":
        raise MidiParseError("missing MThd header chunk")
    (length,) = struct.unpack(">I", blob[4:8])
    if length < 6 or len(blob) < 8 + length:
        raise MidiParseError("malformed MThd chunk")
    fmt, ntracks, division = struct.unpack(">HHH", blob[8:14])
    if fmt == 2:
        raise UnsupportedMidiError("SMF format 2 is not supported")
    if fmt > 2:
        raise MidiParseError(f"unknown SMF format {fmt}")
    if division & 0x8000:
        raise UnsupportedMidiError("SMPTE time division is not supported")
    if division == 0:
        raise MidiParseError("division of zero ticks per quarter note")
    return fmt, ntracks, division, 8 + length


def _parse_track(data: bytes) -> list[RawEvent]:
    events: list[RawEvent] = []
    pos = 0
    tick = 0
    running_status: int | None = None

    while pos < len(data):
        delta, pos = _read_vlq(data, pos)
        tick += delta
        if pos >= len(data):
            raise MidiParseError("event truncated after delta time")

        status = data[pos]
        if status & 0x80:
            pos += 1
            if status < 0xF0:
                running_status = status
        else:
            if running_status is None:
                raise MidiParseError("data byte with no running status")
            status = running_status

        if status == 0xFF:
            if pos >= len(data):
                raise MidiParseError("truncated meta event")
            meta_type = data[pos]
            size, pos = _read_vlq(data, pos + 1)
            if pos + size > len(data):
                raise MidiParseError("meta event payload exceeds track")
            payload = data[pos : pos + size]
            pos += size
            if meta_type == _META_END_OF_TRACK:
                break
            events.append(_decode_meta(tick, meta_type, payload))
            running_status = None
        elif status in (0xF0, 0xF7):
            size, pos = _read_vlq(data, pos)
            if pos + size > len(data):
                raise MidiParseError("sysex payload exceeds track")
            pos += size
            events.append(RawEvent(tick, "other", None, (status,)))
            running_status = None
        else:
            channel = status & 0x0F
            kind = status >> 4
            width = 1 if kind in (0xC, 0xD) else 2
            if pos + width > len(data):
                raise MidiParseError("channel event truncated")
            args = tuple(data[pos : pos + width])
            pos += width
            for b in args:
                if b & 0x80:
                    raise MidiParseError("data byte with high bit set")
            if kind == 0x9:
                events.append(RawEvent(tick, "note_on", channel, args))
            elif kind == 0x8:
                events.append(RawEvent(tick, "note_off", channel, args))
            elif kind == 0xC:
                events.append(RawEvent(tick, "program_change", channel, args))
            else:
                events.append(RawEvent(tick, "other", channel, (status,) + args))

    return events


def _decode_meta(tick: int, meta_type: int, payload: bytes) -> RawEvent:
    if meta_type == _META_TEMPO and len(payload) == 3:
        return RawEvent(tick, "tempo", None, (int.from_bytes(payload, "big"),))
    if meta_type == _META_TIME_SIG and len(payload) >= 2:
        return RawEvent(tick, "time_signature", None, (payload[0], 1 << payload[1]))
    if meta_type == _META_KEY_SIG and len(payload) >= 2:
        sf = struct.unpack(">b", payload[:1])[0]
        return RawEvent(tick, "key_signature", None, (sf, payload[1]))
    return RawEvent(tick, "other", None, (meta_type,))


def read_events(blob: bytes) -> tuple[int, int, list[list[RawEvent]]]:
    """Decode all tracks to (format, ticks_per_quarter, events per track)."""
    fmt, ntracks, division, pos = _parse_header(blob)
    tracks: list[list[RawEvent]] = []
    while len(tracks) < ntracks and pos < len(blob):
        if pos + 8 > len(blob):
            raise MidiParseError("truncated chunk header")
        tag = blob[pos : pos + 4]
        (size,) = struct.unpack(">I", blob[pos + 4 : pos + 8])
        if pos + 8 + size > len(blob):
            raise MidiParseError("chunk length exceeds remaining bytes")
        if tag == b"MTrk":
            tracks.append(_parse_track(blob[pos + 8 : pos + 8 + size]))
        # unknown chunk types are skipped per the SMF spec
        pos += 8 + size
    if len(tracks) < ntracks:
        raise MidiParseError(f"header promises {ntracks} tracks, found {len(tracks)}")
    return fmt, division, tracks


def _key_from_signature(sf: int, minor: bool) -> Key:
    tonic = (7 * sf + (9 if minor else 0)) % 12
    return Key(tonic, minor)


def _signature_from_key(key: Key) -> tuple[int, int]:
    base = (key.tonic - 9) % 12 if key.minor else key.tonic
    sf = (base * 7) % 12
    if sf > 6:
        sf -= 12
    return sf, int(key.minor)


def parse_smf(blob: bytes) -> Score:
    """Parse SMF bytes into a tick-domain Score (instruments unassigned).

    Rejects non-4/4 time signatures. Unpaired note-ons are closed at the
    end of their track with a warning.
    """
    _, division, tracks = read_events(blob)

    notes: list[Note] = []
    key: Key | None = None
    for events in tracks:
        program = [0] * 16
        open_notes: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        end_tick = 0
        for ev in events:
            end_tick = max(end_tick, ev.tick)
            if ev.kind == "time_signature":
                if ev.data != (4, 4):
                    raise UnsupportedMidiError(
                        f"only 4/4 input is supported, got {ev.data[0]}/{ev.data[1]}"
                    )
            elif ev.kind == "key_signature":
                if key is None:
                    key = _key_from_signature(*ev.data)
            elif ev.kind == "program_change":
                program[ev.channel] = ev.data[0]
            elif ev.kind == "note_on" and ev.data[1] > 0:
                pitch, velocity = ev.data
                open_notes.setdefault((ev.channel, pitch), []).append(
                    (ev.tick, velocity, program[ev.channel])
                )
            elif ev.kind == "note_off" or (ev.kind == "note_on" and ev.data[1] == 0):
                pitch = ev.data[0]
                queue = open_notes.get((ev.channel, pitch))
                if not queue:
                    continue  # stray note-off
                start, velocity, prog = queue.pop(0)
                notes.append(
                    Note(
                        pitch=pitch,
                        onset=start,
                        duration=max(1, ev.tick - start),
                        velocity=velocity,
                        channel=ev.channel,
                        program=prog,
                    )
                )
        for (channel, pitch), queue in open_notes.items():
            for start, velocity, prog in queue:
                warnings.warn(
                    f"note-on (ch {channel}, pitch {pitch}) never closed; "
                    "ending it at end of track",
                    ParseWarning,
                    stacklevel=2,
                )
                notes.append(
                    Note(
                        pitch=pitch,
                        onset=start,
                        duration=max(1, end_tick - start),
                        velocity=velocity,
                        channel=channel,
                        program=prog,
                    )
                )

    return Score(notes=sort_notes(notes), ticks_per_quarter=division, key=key)


def load_score(blob: bytes, scheme: InstrumentScheme | None = None) -> Score:
    """parse -> map instruments -> quantize, the standard ingestion pipeline."""
    from .score import map_instruments, quantize

    return quantize(map_instruments(parse_smf(blob), scheme))


def _instrument_channels(instruments: list[int], drums: int) -> dict[int, int]:
    channels = {}
    melodic = [c for c in range(16) if c != 9]
    i = 0
    for inst in instruments:
        if inst == drums:
            channels[inst] = 9
        else:
            channels[inst] = melodic[i % len(melodic)]
            i += 1
    return channels


def write_smf(
    score: Score,
    scheme: InstrumentScheme | None = None,
    ticks_per_quarter: int = 480,
    tempo: int = DEFAULT_TEMPO,
) -> bytes:
    """Serialize a quantized Score as format-1 SMF bytes.

    One track of metadata plus one track per instrument class present.
    Requires ticks_per_quarter divisible by 12 so grid units map to whole
    ticks.
    """
    if not score.quantized:
        raise ValueError("write_smf needs a quantized score")
    if ticks_per_quarter % GRID_PER_QUARTER:
        raise ValueError("ticks_per_quarter must be divisible by 12")
    scheme = scheme or default_scheme()
    unit = ticks_per_quarter // GRID_PER_QUARTER

    instruments = sorted({n.instrument for n in score.notes})
    channels = _instrument_channels(instruments, scheme.drums)

    meta = bytearray()
    meta += _write_vlq(0) + bytes((0xFF, _META_TIME_SIG, 4, 4, 2, 24, 8))
    meta += _write_vlq(0) + bytes((0xFF, _META_TEMPO, 3)) + tempo.to_bytes(3, "big")
    if score.key is not None:
        sf, mi = _signature_from_key(score.key)
        meta += _write_vlq(0) + bytes((0xFF, _META_KEY_SIG, 2)) + struct.pack(">bB", sf, mi)
    meta += _write_vlq(0) + bytes((0xFF, _META_END_OF_TRACK, 0))

    track_blobs = [bytes(meta)]
    for inst in instruments:
        channel = channels[inst]
        program = scheme.write_programs[inst] if 0 <= inst < scheme.n_classes else 0
        # (tick, order, pitch, velocity): note-offs sort before note-ons at a tick
        moments: list[tuple[int, int, int, int]] = []
        for n in score.notes:
            if n.instrument != inst:
                continue
            moments.append((n.onset * unit, 1, n.pitch, n.velocity))
            moments.append(((n.onset + n.duration) * unit, 0, n.pitch, 0))
        moments.sort()

        buf = bytearray()
        buf += _write_vlq(0) + bytes((0xC0 | channel, program))
        now = 0
        for tick, order, pitch, velocity in moments:
            buf += _write_vlq(tick - now)
            now = tick
            status = (0x90 if order else 0x80) | channel
            buf += bytes((status, pitch, velocity if order else 0))
        buf += _write_vlq(0) + bytes((0xFF, _META_END_OF_TRACK, 0))
        track_blobs.append(bytes(buf))

    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, 1, len(track_blobs), ticks_per_quarter)
    for blob in track_blobs:
        out += b"MTrk" + struct.pack(">I", len(blob)) + blob
    return bytes(out)
