"""Node-representation-to-latent generator and the three generation tasks.

The generator is a small bottleneck network with an additive skip
connection between its matching 128-wide layers: node representation in,
pianoroll latent out. Tasks pick a set of nodes to mask, predict their
latents from the graph, decode them to bar images, and splice the decoded
notes into a copy of the score; bars outside masked segments are untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import SGD, Tensor, affine, leaky_relu, mean, square
from .checkpoint import load_checkpoint, save_checkpoint
from .conlon import decode_conlon
from .errors import ConfigError, TrainingDivergedError
from .graph import EdgeKind, SongStructureGraph
from .latent import AutoencoderParams, decode
from .rgcn import GnnParams, node_representations, sample_mask
from .score import GRID_PER_BAR, Note, Score, sort_notes


@dataclass
class GeneratorParams:
    down_w: Tensor
    down_b: Tensor
    mid_w: Tensor
    mid_b: Tensor
    up_w: Tensor
    up_b: Tensor
    out_w: Tensor
    out_b: Tensor
    in_dim: int
    latent_dim: int
    width: int
    bottleneck: int

    @classmethod
    def init(
        cls,
        in_dim: int = 64,
        latent_dim: int = 32,
        width: int = 128,
        bottleneck: int = 64,
        seed: int = 0,
    ) -> "GeneratorParams":
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out):
            limit = np.sqrt(6.0 / (n_in + n_out))
            return Tensor(rng.uniform(-limit, limit, (n_in, n_out)), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        return cls(
            down_w=dense(in_dim, width), down_b=zeros(width),
            mid_w=dense(width, bottleneck), mid_b=zeros(bottleneck),
            up_w=dense(bottleneck, width), up_b=zeros(width),
            out_w=dense(width, latent_dim), out_b=zeros(latent_dim),
            in_dim=in_dim, latent_dim=latent_dim, width=width, bottleneck=bottleneck,
        )

    def tensors(self) -> dict[str, Tensor]:
        return {
            "down_w": self.down_w, "down_b": self.down_b,
            "mid_w": self.mid_w, "mid_b": self.mid_b,
            "up_w": self.up_w, "up_b": self.up_b,
            "out_w": self.out_w, "out_b": self.out_b,
        }


def generator_batch(params: GeneratorParams, x: Tensor) -> Tensor:
    skip = leaky_relu(affine(x, params.down_w, params.down_b))
    squeezed = leaky_relu(affine(skip, params.mid_w, params.mid_b))
    lifted = leaky_relu(affine(squeezed, params.up_w, params.up_b)) + skip
    return affine(lifted, params.out_w, params.out_b)


def generator_forward(params: GeneratorParams, node_repr: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(node_repr, dtype=np.float64))
    out = generator_batch(params, Tensor(x)).data
    return out[0] if np.asarray(node_repr).ndim == 1 else out


@dataclass
class GenTrainConfig:
    epochs: int = 200
    lr: float = 0.01
    batch_size: int = 16
    width: int = 128
    bottleneck: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train_generator(
    inputs: np.ndarray, targets: np.ndarray, config: GenTrainConfig
) -> tuple[GeneratorParams, list[float]]:
    """MSE fit of (node representation -> latent) pairs."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ConfigError("no training pairs")
    params = GeneratorParams.init(
        inputs.shape[1], targets.shape[1], config.width, config.bottleneck, seed=config.seed
    )
    opt = SGD(params.tensors().values(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    n = inputs.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                loss = mean(
                    square(generator_batch(params, Tensor(inputs[idx])) - Tensor(targets[idx]))
                )
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            epoch_loss = total / n
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(epoch)
            trace.append(epoch_loss)
    return params, trace


def save_generator(path, params: GeneratorParams, config: GenTrainConfig | None = None) -> None:
    meta = {
        "in_dim": params.in_dim,
        "latent_dim": params.latent_dim,
        "width": params.width,
        "bottleneck": params.bottleneck,
        "config": config.to_dict() if config else None,
    }
    save_checkpoint(path, "generator", {k: v.data for k, v in params.tensors().items()}, meta)


_GEN_TENSORS = ("down_w", "down_b", "mid_w", "mid_b", "up_w", "up_b", "out_w", "out_b")


def load_generator(path) -> GeneratorParams:
    kind, arrays, meta = load_checkpoint(path)
    if kind != "generator":
        raise ConfigError(f"expected a generator checkpoint, got {kind!r}")
    missing = [name for name in _GEN_TENSORS if name not in arrays]
    if missing:
        raise ConfigError(f"checkpoint {path} is missing tensors {missing}")
    fields = {name: Tensor(arrays[name], requires_grad=True) for name in _GEN_TENSORS}
    return GeneratorParams(
        in_dim=int(meta["in_dim"]),
        latent_dim=int(meta["latent_dim"]),
        width=int(meta["width"]),
        bottleneck=int(meta["bottleneck"]),
        **fields,
    )


# -- tasks ---------------------------------------------------------------------

TASK_KINDS = ("inpaint", "generate", "melody_conditioned")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    seed: int = 0
    mask_ratio: float = 0.3
    keep_bars: int = 8  # generation keeps only patterns inside this prefix


@dataclass
class TaskResult:
    score: Score
    masked_ids: tuple[int, ...]
    latents: dict[int, np.ndarray]
    primary_instrument: int | None
    drum_nodes: tuple[int, ...]


def primary_instrument(graph: SongStructureGraph) -> tuple[int | None, dict[int, int]]:
    """Instrument with the most homogeneity-edge incidences (ties: lowest id).

    Returns (instrument or None when the graph has no homogeneity edges,
    per-instrument incidence counts).
    """
    counts: dict[int, int] = {}
    by_id = {p.id: p for p in graph.nodes}
    for src, _dst in graph.edges.get(EdgeKind.SIMILAR_HOMOGENEITY, ()):
        inst = by_id[src].instrument
        counts[inst] = counts.get(inst, 0) + 1
    if not counts:
        return None, counts
    best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0], counts


def select_mask(graph: SongStructureGraph, spec: TaskSpec) -> tuple[frozenset[int], int | None]:
    """The masked node set for a task, plus the melody task's kept instrument."""
    if spec.kind == "inpaint":
        rng = np.random.default_rng(spec.seed)
        return sample_mask(graph, spec.mask_ratio, rng), None
    if spec.kind == "generate":
        masked = frozenset(
            p.id for p in graph.nodes if not (p.start_bar + p.length <= spec.keep_bars)
        )
        return masked, None
    if spec.kind == "melody_conditioned":
        kept, _counts = primary_instrument(graph)
        if kept is None:
            populous: dict[int, int] = {}
            for p in graph.nodes:
                populous[p.instrument] = populous.get(p.instrument, 0) + 1
            kept = min(populous.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            warnings.warn(
                "no homogeneity edges; falling back to the most populated instrument",
                stacklevel=2,
            )
        return frozenset(p.id for p in graph.nodes if p.instrument != kept), kept
    raise ConfigError(f"unknown task kind {spec.kind!r}")


def splice(score: Score, graph: SongStructureGraph, decoded: dict[int, list[Note]]) -> Score:
    """Replace each masked pattern's segment with its decoded notes.

    Notes of other instruments and of untouched segments pass through
    bit-identically.
    """
    removed: set[tuple[int, int, int]] = set()  # (instrument, start_bar, end_bar)
    for node_id in decoded:
        node = graph.node_by_id(node_id)
        removed.add((node.instrument, node.start_bar, node.end_bar))

    def keep(note: Note) -> bool:
        bar = note.onset // GRID_PER_BAR
        return not any(
            note.instrument == inst and lo <= bar < hi for inst, lo, hi in removed
        )

    notes = [n for n in score.notes if keep(n)]
    for node_id, bar_notes in decoded.items():
        node = graph.node_by_id(node_id)
        for bar in range(node.start_bar, node.end_bar):
            for n in bar_notes:
                notes.append(
                    replace(n, onset=bar * GRID_PER_BAR + n.onset, instrument=node.instrument)
                )
    return replace(score, notes=sort_notes(notes))


def run_task(
    score: Score,
    graph: SongStructureGraph,
    gnn: GnnParams,
    gen: GeneratorParams,
    ae: AutoencoderParams | None,
    spec: TaskSpec,
    decode_threshold: float = 1.0,
    decode_fn=None,
) -> TaskResult:
    """Mask per the task, predict latents for masked nodes, decode, splice.

    `decode_fn` (latent -> ConlonImage) overrides the autoencoder decoder;
    one of `ae` / `decode_fn` must be given. The decoded bar image is tiled
    across the pattern's segment.
    """
    if decode_fn is None:
        if ae is None:
            raise ConfigError("run_task needs an autoencoder or an explicit decode_fn")
        def decode_fn(z):
            return decode(ae, z)

    masked, kept_instrument = select_mask(graph, spec)
    if not masked:
        raise ConfigError(f"task {spec.kind!r} selected an empty mask set")

    reprs = node_representations(gnn, graph, masked).data
    pos = graph.positions()
    latents: dict[int, np.ndarray] = {}
    decoded: dict[int, list[Note]] = {}
    for node_id in sorted(masked):
        z = generator_forward(gen, reprs[pos[node_id]])
        latents[node_id] = z
        decoded[node_id] = decode_conlon(decode_fn(z), decode_threshold)

    drum_nodes = tuple(
        sorted(
            p.id for p in graph.nodes
            if p.id in masked and p.instrument in graph.drum_instruments
        )
    )
    return TaskResult(
        score=splice(score, graph, decoded),
        masked_ids=tuple(sorted(masked)),
        latents=latents,
        primary_instrument=kept_instrument,
        drum_nodes=drum_nodes,
    )
