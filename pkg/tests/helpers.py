"""Shared test utilities: score builders and a finite-difference oracle."""

from __future__ import annotations

import numpy as np

from songgraph.score import GRID_PER_BAR, Key, Note, Score, sort_notes


def grid_score(notes, key=None, genre=None, tpq=480) -> Score:
    """A quantized Score from (pitch, onset, duration, velocity, instrument) tuples."""
    built = tuple(
        Note(pitch=p, onset=o, duration=d, velocity=v, instrument=i)
        for p, o, d, v, i in notes
    )
    bars = (max(n.onset for n in built) // GRID_PER_BAR + 1) if built else 0
    return Score(
        notes=sort_notes(built),
        ticks_per_quarter=tpq,
        bars=bars,
        key=key,
        genre=genre,
        quantized=True,
    )


def random_grid_score(rng: np.random.Generator, max_bars=8, max_notes=40) -> Score:
    """Random quantized score with no same-pitch overlaps per instrument."""
    n_notes = int(rng.integers(1, max_notes + 1))
    instruments = rng.choice([0, 1, 4, 5, 9], size=3, replace=False)
    candidates = []
    for _ in range(n_notes):
        candidates.append(
            (
                int(rng.integers(0, 128)),                     # pitch
                int(rng.integers(0, max_bars * GRID_PER_BAR)),  # onset
                int(rng.integers(1, 25)),                       # duration
                int(rng.integers(1, 128)),                      # velocity
                int(rng.choice(instruments)),                   # instrument
            )
        )
    # keep only non-overlapping notes per (instrument, pitch) line
    kept = []
    last_end: dict[tuple[int, int], int] = {}
    for pitch, onset, duration, velocity, inst in sorted(
        candidates, key=lambda t: (t[4], t[0], t[1])
    ):
        if onset < last_end.get((inst, pitch), -1):
            continue
        last_end[(inst, pitch)] = onset + duration
        kept.append((pitch, onset, duration, velocity, inst))
    if not kept:
        kept = [(60, 0, 4, 90, 1)]
    return grid_score(kept)


def hand_score() -> Score:
    """16 bars, 2 instruments; bars 8-15 repeat bars 0-7 exactly."""
    notes = []
    for bar in range(16):
        base = bar * GRID_PER_BAR
        for k in range(4):
            notes.append((60 + 2 * k, base + 12 * k, 6, 100, 1))
        notes.append((36, base, 24, 90, 5))
        notes.append((43, base + 24, 24, 85, 5))
    return grid_score(notes)


def demo_score() -> Score:
    """Deterministic 32-bar, 3-instrument song with a clear A/B structure."""
    notes = []
    piano, bass, drums = 1, 5, 0
    for bar in range(32):
        section = (bar // 8) % 2  # sections alternate every 8 bars
        base = bar * GRID_PER_BAR
        if section == 0:
            melody = [60, 64, 67, 64]
            bass_pitch = 36
        else:
            melody = [57, 60, 65, 69]
            bass_pitch = 33
        for beat, pitch in enumerate(melody):
            notes.append((pitch, base + beat * 12, 10, 96 - 4 * beat, piano))
            if section == 1:
                notes.append((pitch + 12, base + beat * 12 + 6, 4, 70, piano))
        notes.append((bass_pitch, base, 24, 100, bass))
        notes.append((bass_pitch + 7, base + 24, 24, 90, bass))
        for beat in range(4):
            notes.append((36, base + beat * 12, 2, 110, drums))
            if beat % 2 == 1:
                notes.append((38, base + beat * 12, 2, 100, drums))
    return grid_score(notes, key=Key(0, minor=False), genre="pop")


def toy_graph(n_nodes=6, seed=0, genre=None, song_id="toy", latent_dim=8, n_instruments=3):
    """Small random song-structure graph with known latents on every node."""
    from songgraph.graph import EdgeKind, MusicalPattern, SongStructureGraph

    rng = np.random.default_rng(seed)
    nodes = [
        MusicalPattern(
            id=i,
            start_bar=8 * i,
            length=8,
            instrument=int(rng.integers(0, n_instruments)),
            latent=rng.normal(size=latent_dim),
        )
        for i in range(n_nodes)
    ]
    flow = tuple((i, i + 1) for i in range(n_nodes - 1))

    def random_pairs(count):
        pairs = set()
        for _ in range(count):
            a, b = (int(x) for x in rng.integers(0, n_nodes, size=2))
            if a != b:
                pairs.add((min(a, b), max(a, b)))
        return tuple(sorted(pairs | {(b, a) for a, b in pairs}))

    edges = {
        EdgeKind.SAME_TIME: random_pairs(n_nodes),
        EdgeKind.SAME_INSTRUMENT_FLOW: flow,
        EdgeKind.SAME_SONG_STRUCTURE: random_pairs(max(1, n_nodes // 2)),
        EdgeKind.SIMILAR_HOMOGENEITY: random_pairs(max(1, n_nodes // 2)),
    }
    return SongStructureGraph(nodes=nodes, edges=edges, song_id=song_id, genre=genre)


def central_difference(loss_fn, tensors, epsilon=1e-6) -> list[np.ndarray]:
    """Finite-difference gradients of a scalar loss w.r.t. each tensor's data."""
    grads = []
    for tensor in tensors:
        grad = np.zeros_like(tensor.data)
        flat = tensor.data.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            keep = flat[i]
            step = epsilon * (1.0 + abs(keep))
            flat[i] = keep + step
            hi = loss_fn()
            flat[i] = keep - step
            lo = loss_fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(grad)
    return grads


def max_relative_error(analytic, numeric) -> float:
    """Worst elementwise relative error with an absolute floor.

    The 1e-5 floor keeps near-zero gradient entries from being judged by
    central-difference roundoff noise (~eps * |loss| / step ~ 1e-10);
    entries of any real magnitude are compared strictly relatively.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-5)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
