"""Relational graph network over song-structure graphs.

Each layer computes sigma(W_self h_i + sum_r sum_{j in N_i^r} W_r h_j / |N_i^r|)
with one weight matrix per relation. The directed flow relation is split
into forward and backward halves so messages travel both ways, giving five
relation matrices. Node states start as (key+instrument embedding + latent
projection) concatenated with a sinusoidal position code; masked nodes
contribute a zero latent projection and are trained to regress their true
latent, alongside a genre head over the mean node representation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    SGD,
    Tensor,
    affine,
    concat,
    leaky_relu,
    matmul,
    mean,
    rows,
    softmax_cross_entropy,
    square,
    tensor_sum,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, TrainingDivergedError
from .graph import EdgeKind, SYMMETRIC_KINDS, SongStructureGraph

GENRES = (
    "country", "piano", "rock", "pop", "folk", "electronic", "rap", "chill",
    "dance", "jazz", "rnb", "reggae", "house", "techno", "trance", "metal",
    "pop_rock", "latin", "catchy",
)

KEY_SLOTS = 25  # 24 keys + unknown
RELATIONS = (
    "same_time",
    "flow_forward",
    "flow_backward",
    "same_song_structure",
    "similar_homogeneity",
)


def key_slot(key) -> int:
    return KEY_SLOTS - 1 if key is None else key.slot


def instrument_slot(instrument: int, n_instruments: int) -> int:
    if instrument == -1:
        return n_instruments  # unknown slot
    if 0 <= instrument < n_instruments:
        return instrument
    raise ConfigError(f"instrument id {instrument} outside the {n_instruments}-entry table")


def sinusoidal_encoding(position: int, dim: int) -> np.ndarray:
    out = np.empty(dim)
    half = np.arange(dim // 2)
    angle = position / np.power(10000.0, 2.0 * half / dim)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


@dataclass
class NodeFeatureTables:
    key_table: Tensor          # (25, d_h)
    instrument_table: Tensor   # (n_instruments + 1, d_h)
    latent_proj: Tensor        # (d_z, d_h)
    time_dim: int


@dataclass
class RgcnLayer:
    w_self: Tensor
    w_rel: tuple[Tensor, ...]  # aligned with RELATIONS
    activation: str            # "leaky_relu" | "identity"


@dataclass
class GnnParams:
    tables: NodeFeatureTables
    layers: tuple[RgcnLayer, ...]
    latent_head_w: Tensor
    latent_head_b: Tensor
    genre_head_w: Tensor
    genre_head_b: Tensor
    hidden_dim: int
    time_dim: int
    latent_dim: int
    n_instruments: int

    @classmethod
    def init(
        cls,
        hidden_dim: int = 64,
        time_dim: int = 16,
        latent_dim: int = 32,
        n_instruments: int = 17,
        n_layers: int = 2,
        seed: int = 0,
    ) -> "GnnParams":
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out, scale=None):
            scale = scale if scale is not None else np.sqrt(2.0 / (n_in + n_out))
            return Tensor(rng.normal(0.0, scale, (n_in, n_out)), requires_grad=True)

        tables = NodeFeatureTables(
            key_table=dense(KEY_SLOTS, hidden_dim, 0.1),
            instrument_table=dense(n_instruments + 1, hidden_dim, 0.1),
            latent_proj=dense(latent_dim, hidden_dim),
            time_dim=time_dim,
        )
        layers = []
        d_in = hidden_dim + time_dim
        for i in range(n_layers):
            layers.append(
                RgcnLayer(
                    w_self=dense(d_in, hidden_dim),
                    w_rel=tuple(dense(d_in, hidden_dim) for _ in RELATIONS),
                    activation="leaky_relu" if i < n_layers - 1 else "identity",
                )
            )
            d_in = hidden_dim
        return cls(
            tables=tables,
            layers=tuple(layers),
            latent_head_w=dense(hidden_dim, latent_dim),
            latent_head_b=Tensor(np.zeros(latent_dim), requires_grad=True),
            genre_head_w=dense(hidden_dim, len(GENRES)),
            genre_head_b=Tensor(np.zeros(len(GENRES)), requires_grad=True),
            hidden_dim=hidden_dim,
            time_dim=time_dim,
            latent_dim=latent_dim,
            n_instruments=n_instruments,
        )

    def tensors(self) -> dict[str, Tensor]:
        out = {
            "key_table": self.tables.key_table,
            "instrument_table": self.tables.instrument_table,
            "latent_proj": self.tables.latent_proj,
            "latent_head_w": self.latent_head_w,
            "latent_head_b": self.latent_head_b,
            "genre_head_w": self.genre_head_w,
            "genre_head_b": self.genre_head_b,
        }
        for li, layer in enumerate(self.layers):
            out[f"layer{li}_self"] = layer.w_self
            for ri, w in enumerate(layer.w_rel):
                out[f"layer{li}_{RELATIONS[ri]}"] = w
        return out


def initial_state(
    graph: SongStructureGraph,
    tables: NodeFeatureTables,
    masked: frozenset[int] | set[int] | None = None,
) -> Tensor:
    """h0 rows: (key_emb + inst_emb + latent_projection) concat time code.

    Masked nodes (or nodes with no latent) contribute a zero latent
    projection; key/instrument/time features are never masked.
    """
    if masked is None:
        masked = {p.id for p in graph.nodes if p.latent is None}
    n_instruments = tables.instrument_table.data.shape[0] - 1
    d_z = tables.latent_proj.data.shape[0]

    key_idx = [key_slot(p.key) for p in graph.nodes]
    inst_idx = [instrument_slot(p.instrument, n_instruments) for p in graph.nodes]
    latents = np.zeros((len(graph.nodes), d_z))
    for i, p in enumerate(graph.nodes):
        if p.id not in masked and p.latent is not None:
            latents[i] = p.latent
    time_code = np.stack(
        [sinusoidal_encoding(p.start_bar, tables.time_dim) for p in graph.nodes]
    )

    x = rows(tables.key_table, key_idx) + rows(tables.instrument_table, inst_idx)
    y_hat = matmul(Tensor(latents), tables.latent_proj)
    return concat([x + y_hat, Tensor(time_code)], axis=1)


def relation_matrices(graph: SongStructureGraph) -> dict[str, np.ndarray]:
    """Neighbor-averaging matrices A_r with A_r[i, j] = 1/|N_i^r|."""
    pos = graph.positions()
    n = len(graph.nodes)
    mats = {name: np.zeros((n, n)) for name in RELATIONS}
    for kind in SYMMETRIC_KINDS:
        for src, dst in graph.edges.get(kind, ()):
            mats[kind.value][pos[dst], pos[src]] = 1.0
    for src, dst in graph.edges.get(EdgeKind.SAME_INSTRUMENT_FLOW, ()):
        mats["flow_forward"][pos[dst], pos[src]] = 1.0
        mats["flow_backward"][pos[src], pos[dst]] = 1.0
    for mat in mats.values():
        counts = mat.sum(axis=1, keepdims=True)
        np.divide(mat, counts, out=mat, where=counts > 0)
    return mats


def rgcn_forward(layer: RgcnLayer, mats: dict[str, np.ndarray], h: Tensor) -> Tensor:
    out = matmul(h, layer.w_self)
    for name, w in zip(RELATIONS, layer.w_rel):
        if mats[name].any():
            out = out + matmul(matmul(Tensor(mats[name]), h), w)
    if layer.activation == "leaky_relu":
        return leaky_relu(out)
    return out


def node_representations(
    params: GnnParams,
    graph: SongStructureGraph,
    masked: frozenset[int] | set[int] | None = None,
    mats: dict[str, np.ndarray] | None = None,
) -> Tensor:
    h = initial_state(graph, params.tables, masked)
    mats = mats if mats is not None else relation_matrices(graph)
    for layer in params.layers:
        h = rgcn_forward(layer, mats, h)
    return h


@dataclass
class LossParts:
    total: Tensor
    recon: Tensor
    genre: Tensor | None
    genre_used: bool

    def values(self) -> tuple[float, float, float]:
        return (
            self.total.item(),
            self.recon.item(),
            self.genre.item() if self.genre is not None else 0.0,
        )


def composite_loss(
    params: GnnParams,
    graph: SongStructureGraph,
    masked: frozenset[int] | set[int],
    genre_weight: float = 1.0,
    mats: dict[str, np.ndarray] | None = None,
) -> LossParts:
    """Masked-latent regression plus weighted genre cross-entropy.

    The reconstruction term sums, over masked nodes, the mean squared error
    of the latent head against the node's true latent. The genre term is the
    cross-entropy of a linear head over the mean node representation; it is
    dropped (flagged via genre_used) when the graph has no known genre.
    """
    pos = graph.positions()
    h = node_representations(params, graph, masked, mats)
    predicted = affine(h, params.latent_head_w, params.latent_head_b)

    target_ids = sorted(
        m for m in masked if m in pos and graph.node_by_id(m).latent is not None
    )
    if target_ids:
        idx = [pos[m] for m in target_ids]
        targets = np.stack([graph.node_by_id(m).latent for m in target_ids])
        diff = rows(predicted, idx) - Tensor(targets)
        recon = tensor_sum(square(diff)) / params.latent_dim
    else:
        recon = Tensor(0.0)

    genre_used = graph.genre in GENRES
    if genre_used and genre_weight != 0.0:
        pooled = mean(h, axis=0, keepdims=True)
        logits = affine(pooled, params.genre_head_w, params.genre_head_b)
        genre = softmax_cross_entropy(logits, GENRES.index(graph.genre))
        total = recon + genre_weight * genre
    else:
        genre = None
        total = recon
    return LossParts(total=total, recon=recon, genre=genre, genre_used=genre_used)


def genre_logits(params: GnnParams, graph: SongStructureGraph) -> np.ndarray:
    h = node_representations(params, graph, masked=frozenset())
    pooled = mean(h, axis=0, keepdims=True)
    return affine(pooled, params.genre_head_w, params.genre_head_b).data[0]


# -- masking and augmentation ------------------------------------------------

def mask_count(n_nodes: int, mask_ratio: float) -> int:
    """Nearest integer with ties up, floored at 1.

    The epsilon rescues exact halves that float representation nudged just
    below .5 (e.g. 15 * 0.3).
    """
    return max(1, int(np.floor(n_nodes * mask_ratio + 0.5 + 1e-9)))


def sample_mask(graph: SongStructureGraph, mask_ratio: float, rng) -> frozenset[int]:
    ids = sorted(p.id for p in graph.nodes)
    if not ids:
        return frozenset()
    k = mask_count(len(ids), mask_ratio)
    return frozenset(rng.choice(ids, size=min(k, len(ids)), replace=False).tolist())


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def drop_edge(graph: SongStructureGraph, p: float, seed) -> SongStructureGraph:
    """View with each undirected edge pair (or directed flow edge) removed
    independently with probability p; the input graph is untouched."""
    if p <= 0:
        return graph
    rng = _as_rng(seed)
    edges: dict[EdgeKind, tuple[tuple[int, int], ...]] = {}
    for kind in EdgeKind:
        if kind in SYMMETRIC_KINDS:
            units = sorted({(min(s, d), max(s, d)) for s, d in graph.edges.get(kind, ())})
        else:
            units = sorted(graph.edges.get(kind, ()))
        kept = [pair for pair in units if rng.random() >= p]
        if kind in SYMMETRIC_KINDS:
            edges[kind] = tuple(sorted({(a, b) for a, b in kept} | {(b, a) for a, b in kept}))
        else:
            edges[kind] = tuple(kept)
    return replace(graph, edges=edges)


def drop_node(graph: SongStructureGraph, p: float, seed) -> SongStructureGraph:
    """View with nodes (and their incident edges) removed with probability p."""
    if p <= 0:
        return graph
    rng = _as_rng(seed)
    kept = [node for node in graph.nodes if rng.random() >= p]
    alive = {node.id for node in kept}
    edges = {
        kind: tuple((s, d) for s, d in graph.edges.get(kind, ()) if s in alive and d in alive)
        for kind in EdgeKind
    }
    return replace(graph, nodes=kept, edges=edges)


# -- training -----------------------------------------------------------------

@dataclass
class GnnTrainConfig:
    hidden_dim: int = 64
    time_dim: int = 16
    latent_dim: int = 32
    n_instruments: int = 17
    n_layers: int = 2
    epochs: int = 100
    lr: float = 0.01
    mask_ratio: float = 0.3
    drop_edge_p: float = 0.1
    drop_node_p: float = 0.05
    genre_loss_weight: float = 1.0
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainState:
    params: GnnParams
    losses: list[tuple[float, float, float]]  # (L, L_r, L_c) per step
    step: int
    seed: int


def train(graphs, config: GnnTrainConfig) -> TrainState:
    """Per step: sample a mask, apply DropEdge/DropNode, forward, backprop.

    Deterministic for a fixed seed. Raises TrainingDivergedError when the
    loss stops being finite.
    """
    graphs = [g for g in graphs if g.nodes]
    if not graphs:
        raise ConfigError("no non-empty graphs to train on")
    params = GnnParams.init(
        config.hidden_dim,
        config.time_dim,
        config.latent_dim,
        config.n_instruments,
        config.n_layers,
        seed=config.seed,
    )
    opt = SGD(params.tensors().values(), lr=config.lr)
    losses: list[tuple[float, float, float]] = []
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            for graph in graphs:
                rng = np.random.default_rng((config.seed, step))
                masked = sample_mask(graph, config.mask_ratio, rng)
                view = drop_edge(graph, config.drop_edge_p, rng)
                view = drop_node(view, config.drop_node_p, rng)
                if not view.nodes:
                    step += 1
                    continue
                parts = composite_loss(params, view, masked, config.genre_loss_weight)
                opt.zero_grad()
                parts.total.backward()
                opt.step()
                values = parts.values()
                if not all(np.isfinite(v) for v in values):
                    raise TrainingDivergedError(step)
                losses.append(values)
                step += 1
    return TrainState(params=params, losses=losses, step=step, seed=config.seed)


def save_gnn(path, params: GnnParams, config: GnnTrainConfig | None = None) -> None:
    meta = {
        "hidden_dim": params.hidden_dim,
        "time_dim": params.time_dim,
        "latent_dim": params.latent_dim,
        "n_instruments": params.n_instruments,
        "n_layers": len(params.layers),
        "config": config.to_dict() if config else None,
    }
    save_checkpoint(path, "rgcn", {k: v.data for k, v in params.tensors().items()}, meta)


def load_gnn(path) -> GnnParams:
    kind, arrays, meta = load_checkpoint(path)
    if kind != "rgcn":
        raise ConfigError(f"expected an rgcn checkpoint, got {kind!r}")
    params = GnnParams.init(
        int(meta["hidden_dim"]),
        int(meta["time_dim"]),
        int(meta["latent_dim"]),
        int(meta["n_instruments"]),
        int(meta["n_layers"]),
    )
    for name, tensor in params.tensors().items():
        if name not in arrays or arrays[name].shape != tensor.data.shape:
            raise ConfigError(f"checkpoint {path} is missing or misshapes tensor {name!r}")
        tensor.data = arrays[name]
    return params
