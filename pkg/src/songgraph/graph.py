"""Song-structure graph: musical-pattern nodes and four typed edge relations.

A pattern is one instrument's notes over a run of bars. Segment starts come
from the novelty curve's boundaries; bars left uncovered afterwards are
chunked into fixed-length segments so every sounding bar belongs to exactly
one pattern per instrument. Edges:

  same_time             both patterns sound in overlapping bars (symmetric)
  same_instrument_flow  one instrument continues into the next segment (directed)
  same_song_structure   same instrument, similar start bars in the SSM (symmetric)
  similar_homogeneity   similar velocity-channel shape by Hu distance (symmetric)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .conlon import ConlonImage, split_bars
from .errors import FormatError
from .latent import embed_baseline
from .score import GRID_PER_BAR, N_PITCHES, Key, Score
from .structure import (
    HuSignature,
    compute_ssm,
    default_novelty_threshold,
    detect_boundaries,
    hu_distance,
    hu_signature,
    novelty,
)


class EdgeKind(str, Enum):
    SAME_TIME = "same_time"
    SAME_INSTRUMENT_FLOW = "same_instrument_flow"
    SAME_SONG_STRUCTURE = "same_song_structure"
    SIMILAR_HOMOGENEITY = "similar_homogeneity"


SYMMETRIC_KINDS = (EdgeKind.SAME_TIME, EdgeKind.SAME_SONG_STRUCTURE, EdgeKind.SIMILAR_HOMOGENEITY)


@dataclass
class MusicalPattern:
    id: int
    start_bar: int
    length: int
    instrument: int
    key: Key | None = None
    images: tuple[ConlonImage | None, ...] | None = None
    latent: np.ndarray | None = None
    hu: HuSignature | None = None
    image_refs: tuple[str | None, ...] | None = None

    @property
    def end_bar(self) -> int:
        return self.start_bar + self.length


@dataclass
class SongStructureGraph:
    nodes: list[MusicalPattern]
    edges: dict[EdgeKind, tuple[tuple[int, int], ...]]
    song_id: str = ""
    genre: str | None = None
    drum_instruments: frozenset[int] = frozenset({0})

    def node_by_id(self, node_id: int) -> MusicalPattern:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def positions(self) -> dict[int, int]:
        return {node.id: i for i, node in enumerate(self.nodes)}


@dataclass(frozen=True)
class GraphConfig:
    pattern_len: int = 8
    kernel_half_width: int = 8
    sigma: float = 0.5
    novelty_threshold: float | None = None  # None: mean + 0.5 std of the curve
    ssm_threshold: float = 0.8
    hu_threshold: float = 0.1
    embed_dim: int = 32
    embed_seed: int = 0


def _segment_starts(n_bars: int, boundaries: list[int], pattern_len: int) -> list[tuple[int, int]]:
    """(start, length) segments: boundary-seeded first, then gap-fill chunks."""
    used = np.zeros(n_bars, dtype=bool)
    segments: list[tuple[int, int]] = []
    for t in boundaries:
        if t >= n_bars or used[t]:
            continue
        length = min(pattern_len, n_bars - t)
        segments.append((t, length))
        used[t : t + length] = True
    # chunk every maximal uncovered run into pattern_len pieces
    bar = 0
    while bar < n_bars:
        if used[bar]:
            bar += 1
            continue
        run_end = bar
        while run_end < n_bars and not used[run_end]:
            run_end += 1
        for start in range(bar, run_end, pattern_len):
            segments.append((start, min(pattern_len, run_end - start)))
        bar = run_end
    return sorted(segments)


def build_graph(
    score: Score,
    song_id: str = "",
    config: GraphConfig | None = None,
    embed=None,
    drum_instruments=frozenset({0}),
) -> SongStructureGraph:
    """Run the full construction: split bars, SSM, novelty, segments, edges.

    `embed` maps a ConlonImage to a latent vector; the seeded baseline
    embedder is used when none is given.
    """
    config = config or GraphConfig()
    if embed is None:
        def embed(image):
            return embed_baseline(image, config.embed_dim, config.embed_seed)

    empty = SongStructureGraph(
        nodes=[], edges={kind: () for kind in EdgeKind}, song_id=song_id,
        genre=score.genre, drum_instruments=frozenset(drum_instruments),
    )
    if not score.notes:
        return empty

    bars = split_bars(score)
    bar_latents = np.stack([embed(bars.merged(b)) for b in range(bars.n_bars)])
    ssm = compute_ssm(bar_latents)
    curve = novelty(ssm, config.kernel_half_width, config.sigma)
    threshold = (
        config.novelty_threshold
        if config.novelty_threshold is not None
        else default_novelty_threshold(curve)
    )
    boundaries = detect_boundaries(curve, threshold)
    segments = _segment_starts(bars.n_bars, boundaries, config.pattern_len)

    nodes: list[MusicalPattern] = []
    for start, length in segments:
        for inst in bars.instruments:
            images = tuple(bars.get(start + k, inst) for k in range(length))
            if all(img is None for img in images):
                continue
            latents = [
                embed(img if img is not None else ConlonImage.zeros()) for img in images
            ]
            strip = np.concatenate(
                [img.velocity if img is not None else np.zeros((N_PITCHES, GRID_PER_BAR))
                 for img in images],
                axis=1,
            )
            nodes.append(
                MusicalPattern(
                    id=-1,
                    start_bar=start,
                    length=length,
                    instrument=inst,
                    key=score.key,
                    images=images,
                    latent=np.mean(latents, axis=0),
                    hu=hu_signature(strip),
                )
            )

    nodes.sort(key=lambda p: (p.start_bar, p.instrument))
    nodes = [replace(node, id=i) for i, node in enumerate(nodes)]

    edges = {
        EdgeKind.SAME_TIME: connect_same_time(nodes),
        EdgeKind.SAME_INSTRUMENT_FLOW: connect_instrument_flow(nodes),
        EdgeKind.SAME_SONG_STRUCTURE: connect_same_song_structure(nodes, ssm, config.ssm_threshold),
        EdgeKind.SIMILAR_HOMOGENEITY: connect_similar_homogeneity(nodes, config.hu_threshold),
    }
    return SongStructureGraph(
        nodes=nodes,
        edges=edges,
        song_id=song_id,
        genre=score.genre,
        drum_instruments=frozenset(drum_instruments),
    )


def _both_ways(pairs) -> tuple[tuple[int, int], ...]:
    out = set()
    for a, b in pairs:
        out.add((a, b))
        out.add((b, a))
    return tuple(sorted(out))


def connect_same_time(nodes) -> tuple[tuple[int, int], ...]:
    pairs = [
        (a.id, b.id)
        for i, a in enumerate(nodes)
        for b in nodes[i + 1 :]
        if a.start_bar < b.end_bar and b.start_bar < a.end_bar
    ]
    return _both_ways(pairs)


def connect_instrument_flow(nodes) -> tuple[tuple[int, int], ...]:
    """Directed edges where a segment of the same instrument starts exactly
    where the previous one ends; gaps break the chain."""
    edges = set()
    by_inst: dict[int, list[MusicalPattern]] = {}
    for node in nodes:
        by_inst.setdefault(node.instrument, []).append(node)
    for patterns in by_inst.values():
        patterns.sort(key=lambda p: p.start_bar)
        for a, b in zip(patterns, patterns[1:]):
            if b.start_bar == a.end_bar:
                edges.add((a.id, b.id))
    return tuple(sorted(edges))


def connect_same_song_structure(nodes, ssm: np.ndarray, threshold: float) -> tuple[tuple[int, int], ...]:
    n = ssm.shape[0]
    pairs = [
        (a.id, b.id)
        for i, a in enumerate(nodes)
        for b in nodes[i + 1 :]
        if a.instrument == b.instrument
        and a.start_bar < n
        and b.start_bar < n
        and ssm[a.start_bar, b.start_bar] > threshold
    ]
    return _both_ways(pairs)


def connect_similar_homogeneity(nodes, threshold: float) -> tuple[tuple[int, int], ...]:
    eligible = [p for p in nodes if p.hu is not None and not p.hu.degenerate]
    pairs = [
        (a.id, b.id)
        for i, a in enumerate(eligible)
        for b in eligible[i + 1 :]
        if hu_distance(a.hu, b.hu) < threshold
    ]
    return _both_ways(pairs)


# -- serialization ---------------------------------------------------------

SCHEMA = "ssg/1"


def _image_ref(song_id: str, node_id: int, bar: int) -> str:
    return f"{song_id or 'song'}_node{node_id:04d}_bar{bar:02d}.clon"


def node_image_refs(graph: SongStructureGraph, node: MusicalPattern) -> tuple[str | None, ...]:
    if node.image_refs is not None:
        return node.image_refs
    if node.images is None:
        return (None,) * node.length
    return tuple(
        _image_ref(graph.song_id, node.id, k) if img is not None else None
        for k, img in enumerate(node.images)
    )


def serialize(graph: SongStructureGraph, config: dict | None = None) -> str:
    """Deterministic JSON: nodes by (start_bar, instrument), edges by
    (kind, src, dst); identical inputs give identical bytes."""
    nodes = sorted(graph.nodes, key=lambda p: (p.start_bar, p.instrument))
    node_objs = []
    for node in nodes:
        node_objs.append(
            {
                "id": node.id,
                "start_bar": node.start_bar,
                "length": node.length,
                "instrument": node.instrument,
                "key": None if node.key is None else {"tonic": node.key.tonic, "minor": node.key.minor},
                "masked": node.latent is None,
                "latent": None if node.latent is None else [float(v) for v in node.latent],
                "conlon": list(node_image_refs(graph, node)),
            }
        )
    edge_objs = [
        {"kind": kind.value, "src": src, "dst": dst}
        for kind in EdgeKind
        for src, dst in sorted(graph.edges.get(kind, ()))
    ]
    doc = {
        "schema": SCHEMA,
        "song_id": graph.song_id,
        "genre": graph.genre,
        "drums": sorted(graph.drum_instruments),
        "config": config,
        "nodes": node_objs,
        "edges": edge_objs,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def parse_graph(text: str) -> SongStructureGraph:
    """Inverse of serialize, minus image payloads (refs are kept)."""
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise FormatError(f"unknown graph schema {doc.get('schema')!r}")
    nodes = []
    for obj in doc["nodes"]:
        key = obj.get("key")
        nodes.append(
            MusicalPattern(
                id=obj["id"],
                start_bar=obj["start_bar"],
                length=obj["length"],
                instrument=obj["instrument"],
                key=None if key is None else Key(key["tonic"], key["minor"]),
                latent=None if obj.get("latent") is None else np.asarray(obj["latent"]),
                image_refs=tuple(obj.get("conlon") or ()) or None,
            )
        )
    edges: dict[EdgeKind, list[tuple[int, int]]] = {kind: [] for kind in EdgeKind}
    for obj in doc["edges"]:
        edges[EdgeKind(obj["kind"])].append((obj["src"], obj["dst"]))
    return SongStructureGraph(
        nodes=nodes,
        edges={kind: tuple(sorted(pairs)) for kind, pairs in edges.items()},
        song_id=doc.get("song_id", ""),
        genre=doc.get("genre"),
        drum_instruments=frozenset(doc.get("drums", [0])),
    )


_DOT_COLORS = {
    EdgeKind.SAME_TIME: "blue",
    EdgeKind.SAME_INSTRUMENT_FLOW: "black",
    EdgeKind.SAME_SONG_STRUCTURE: "forestgreen",
    EdgeKind.SIMILAR_HOMOGENEITY: "red",
}


def to_dot(graph: SongStructureGraph) -> str:
    """GraphViz text; symmetric relations are drawn once, undirected."""
    lines = ["digraph song {", "  rankdir=LR;"]
    for node in sorted(graph.nodes, key=lambda p: (p.start_bar, p.instrument)):
        label = f"{node.id}: inst {node.instrument} bars {node.start_bar}-{node.end_bar - 1}"
        lines.append(f'  n{node.id} [label="{label}"];')
    for kind in EdgeKind:
        color = _DOT_COLORS[kind]
        for src, dst in sorted(graph.edges.get(kind, ())):
            if kind in SYMMETRIC_KINDS:
                if src > dst:
                    continue
                lines.append(f'  n{src} -> n{dst} [color={color}, dir=none, label="{kind.value}"];')
            else:
                lines.append(f'  n{src} -> n{dst} [color={color}, label="{kind.value}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
