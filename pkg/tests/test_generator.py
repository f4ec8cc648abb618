"""Generator network and the three masking tasks."""

import numpy as np
import pytest
from helpers import central_difference, max_relative_error, toy_graph

from songgraph.autodiff import Tensor
from songgraph.conlon import ConlonImage
from songgraph.errors import ConfigError
from songgraph.generator import (
    GenTrainConfig,
    GeneratorParams,
    TaskSpec,
    generator_batch,
    generator_forward,
    load_generator,
    primary_instrument,
    run_task,
    save_generator,
    select_mask,
    splice,
    train_generator,
)
from songgraph.graph import EdgeKind, MusicalPattern, SongStructureGraph
from songgraph.rgcn import GnnParams
from songgraph.score import GRID_PER_BAR, Note, Score, sort_notes


def graph_with_score(n_segments=5, instruments=(1, 5), pattern_len=2):
    """A graph whose nodes line up with a real score for splice tests."""
    notes = []
    nodes = []
    node_id = 0
    for seg in range(n_segments):
        for inst in instruments:
            start = seg * pattern_len
            for bar in range(start, start + pattern_len):
                pitch = 40 + inst + (bar % 4)
                notes.append(Note(pitch, bar * GRID_PER_BAR + inst, 6, 90, inst))
            nodes.append(
                MusicalPattern(
                    id=node_id, start_bar=start, length=pattern_len, instrument=inst,
                    latent=np.full(8, float(node_id)),
                )
            )
            node_id += 1
    score = Score(
        notes=sort_notes(notes),
        bars=n_segments * pattern_len,
        quantized=True,
    )
    edges = {kind: () for kind in EdgeKind}
    graph = SongStructureGraph(nodes=nodes, edges=edges, song_id="aligned")
    return score, graph


class TestForward:
    def test_zero_weights_zero_output(self):
        params = GeneratorParams.init(in_dim=8, latent_dim=4, width=16, bottleneck=8)
        for t in params.tensors().values():
            t.data[...] = 0.0
        assert np.allclose(generator_forward(params, np.ones(8)), 0.0)

    def test_deterministic(self):
        params = GeneratorParams.init(in_dim=8, latent_dim=4, width=16, bottleneck=8, seed=1)
        x = np.linspace(-1, 1, 8)
        assert np.array_equal(generator_forward(params, x), generator_forward(params, x))

    def test_skip_connection_active(self):
        params = GeneratorParams.init(in_dim=8, latent_dim=4, width=16, bottleneck=8, seed=2)
        # zeroing the bottleneck path must not zero the output (skip survives)
        params.mid_w.data[...] = 0.0
        params.mid_b.data[...] = 0.0
        params.up_w.data[...] = 0.0
        params.up_b.data[...] = 0.0
        out = generator_forward(params, np.ones(8))
        assert np.abs(out).max() > 0

    def test_batched_and_single_agree(self):
        params = GeneratorParams.init(in_dim=8, latent_dim=4, width=16, bottleneck=8, seed=3)
        x = np.random.default_rng(0).normal(size=(5, 8))
        batch = generator_forward(params, x)
        assert batch.shape == (5, 4)
        for i in range(5):
            assert np.allclose(batch[i], generator_forward(params, x[i]))

    @pytest.mark.parametrize("seed", range(4))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        params = GeneratorParams.init(in_dim=5, latent_dim=3, width=6, bottleneck=4, seed=seed)
        x = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 3))
        tensors = list(params.tensors().values())

        def build():
            from songgraph.autodiff import mean, square

            return mean(square(generator_batch(params, Tensor(x)) - Tensor(target)))

        build().backward()
        analytic = [t.grad.copy() for t in tensors]
        numeric = central_difference(lambda: build().item(), tensors)
        assert max_relative_error(analytic, numeric) < 1e-4


class TestTraining:
    def test_single_pair_overfit(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(1, 16)), rng.normal(size=(1, 8))
        _, trace = train_generator(
            x, y, GenTrainConfig(epochs=200, lr=0.05, batch_size=1, width=32, bottleneck=16)
        )
        assert trace[-1] < 0.01 * trace[0]

    def test_zero_epochs_keeps_init(self):
        rng = np.random.default_rng(2)
        params, trace = train_generator(
            rng.normal(size=(4, 8)), rng.normal(size=(4, 4)),
            GenTrainConfig(epochs=0, width=16, bottleneck=8, seed=6),
        )
        fresh = GeneratorParams.init(8, 4, 16, 8, seed=6)
        assert trace == []
        for a, b in zip(params.tensors().values(), fresh.tensors().values()):
            assert np.array_equal(a.data, b.data)

    def test_seeded_trace_identical(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(10, 8)), rng.normal(size=(10, 4))
        config = GenTrainConfig(epochs=5, lr=0.02, batch_size=4, width=16, bottleneck=8, seed=4)
        assert train_generator(x, y, config)[1] == train_generator(x, y, config)[1]

    def test_checkpoint_round_trip(self, tmp_path):
        params = GeneratorParams.init(8, 4, 16, 8, seed=5)
        save_generator(tmp_path / "gen.ckpt", params)
        loaded = load_generator(tmp_path / "gen.ckpt")
        x = np.ones(8)
        assert np.allclose(generator_forward(params, x), generator_forward(loaded, x), atol=1e-4)


class TestMaskSelection:
    def test_inpaint_masks_three_of_ten(self):
        graph = toy_graph(10)
        masked, kept = select_mask(graph, TaskSpec(kind="inpaint", seed=5))
        assert len(masked) == 3 and kept is None

    def test_generate_keeps_prefix_patterns(self):
        graph = toy_graph(6)  # nodes start at bars 0, 8, 16, ... length 8
        masked, _ = select_mask(graph, TaskSpec(kind="generate", keep_bars=8))
        assert masked == frozenset(p.id for p in graph.nodes if p.start_bar >= 8)

    def test_generate_masks_everything_when_all_late(self):
        graph = toy_graph(4)
        for node in graph.nodes:
            node.start_bar += 8
        masked, _ = select_mask(graph, TaskSpec(kind="generate", keep_bars=8))
        assert masked == frozenset(p.id for p in graph.nodes)

    def test_melody_selects_most_homogeneity_incidences(self):
        nodes = [
            MusicalPattern(id=i, start_bar=0, length=4, instrument=inst, latent=np.zeros(4))
            for i, inst in enumerate([1, 1, 1, 5, 5])
        ]
        homo = ((0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1), (3, 4), (4, 3))
        edges = {kind: () for kind in EdgeKind}
        edges[EdgeKind.SIMILAR_HOMOGENEITY] = homo
        graph = SongStructureGraph(nodes=nodes, edges=edges)
        best, counts = primary_instrument(graph)
        assert counts == {1: 6, 5: 2}
        assert best == 1
        masked, kept = select_mask(graph, TaskSpec(kind="melody_conditioned"))
        assert kept == 1
        assert masked == frozenset({3, 4})

    def test_melody_tie_breaks_to_lower_instrument(self):
        nodes = [
            MusicalPattern(id=i, start_bar=0, length=4, instrument=inst, latent=np.zeros(4))
            for i, inst in enumerate([2, 7])
        ]
        edges = {kind: () for kind in EdgeKind}
        edges[EdgeKind.SIMILAR_HOMOGENEITY] = ((0, 1), (1, 0))
        graph = SongStructureGraph(nodes=nodes, edges=edges)
        best, counts = primary_instrument(graph)
        assert counts == {2: 1, 7: 1} and best == 2

    def test_melody_fallback_to_most_populated(self):
        graph = toy_graph(6)
        graph.edges[EdgeKind.SIMILAR_HOMOGENEITY] = ()
        with pytest.warns(UserWarning, match="most populated"):
            masked, kept = select_mask(graph, TaskSpec(kind="melody_conditioned"))
        populous = {}
        for p in graph.nodes:
            populous[p.instrument] = populous.get(p.instrument, 0) + 1
        assert kept == min(populous.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            select_mask(toy_graph(3), TaskSpec(kind="remix"))


class TestSpliceAndRunTask:
    def decode_stub(self, z):
        """Latent-independent single-note bar, good enough for splicing."""
        image = ConlonImage.zeros()
        image.velocity[70, 0] = 99.0
        image.duration[70, 0] = 6.0
        return image

    def test_splice_touches_only_masked_segments(self):
        score, graph = graph_with_score()
        decoded = {0: [Note(70, 0, 6, 99)]}  # node 0: instrument 1, bars 0-1
        out = splice(score, graph, decoded)
        node = graph.node_by_id(0)
        lo, hi = node.start_bar * GRID_PER_BAR, node.end_bar * GRID_PER_BAR

        def outside(notes):
            return sorted(
                (n for n in notes if not (n.instrument == 1 and lo <= n.onset < hi)),
                key=lambda n: (n.onset, n.instrument, n.pitch),
            )

        assert outside(out.notes) == outside(score.notes)
        inserted = [n for n in out.notes if n.instrument == 1 and lo <= n.onset < hi]
        assert [(n.pitch, n.onset) for n in inserted] == [(70, 0), (70, GRID_PER_BAR)]

    def test_run_task_inpaint_splice_invariant(self):
        score, graph = graph_with_score()
        gnn = GnnParams.init(hidden_dim=8, time_dim=4, latent_dim=8, n_instruments=8, seed=0)
        gen = GeneratorParams.init(in_dim=8, latent_dim=8, width=16, bottleneck=8, seed=0)
        spec = TaskSpec(kind="inpaint", seed=3)
        result = run_task(score, graph, gnn, gen, ae=None, spec=spec, decode_fn=self.decode_stub)
        assert len(result.masked_ids) == 3  # 30% of 10 nodes
        masked_segments = [
            (graph.node_by_id(i).instrument,
             graph.node_by_id(i).start_bar * GRID_PER_BAR,
             graph.node_by_id(i).end_bar * GRID_PER_BAR)
            for i in result.masked_ids
        ]

        def untouched(notes):
            return sorted(
                (
                    n for n in notes
                    if not any(n.instrument == inst and lo <= n.onset < hi
                               for inst, lo, hi in masked_segments)
                ),
                key=lambda n: (n.onset, n.instrument, n.pitch),
            )

        assert untouched(result.score.notes) == untouched(score.notes)
        assert result.score.bars == score.bars
        for node_id in result.masked_ids:
            assert result.latents[node_id].shape == (8,)

    def test_run_task_same_seed_same_output(self):
        score, graph = graph_with_score()
        gnn = GnnParams.init(hidden_dim=8, time_dim=4, latent_dim=8, n_instruments=8, seed=0)
        gen = GeneratorParams.init(in_dim=8, latent_dim=8, width=16, bottleneck=8, seed=0)
        spec = TaskSpec(kind="inpaint", seed=9)
        a = run_task(score, graph, gnn, gen, None, spec, decode_fn=self.decode_stub)
        b = run_task(score, graph, gnn, gen, None, spec, decode_fn=self.decode_stub)
        assert a.score == b.score and a.masked_ids == b.masked_ids

    def test_run_task_reports_drum_nodes(self):
        score, graph = graph_with_score(instruments=(0, 1))
        gnn = GnnParams.init(hidden_dim=8, time_dim=4, latent_dim=8, n_instruments=8, seed=0)
        gen = GeneratorParams.init(in_dim=8, latent_dim=8, width=16, bottleneck=8, seed=0)
        result = run_task(
            score, graph, gnn, gen, None, TaskSpec(kind="generate", keep_bars=2),
            decode_fn=self.decode_stub,
        )
        drum_ids = {p.id for p in graph.nodes if p.instrument == 0 and p.id in result.masked_ids}
        assert set(result.drum_nodes) == drum_ids

    def test_run_task_needs_decoder(self):
        score, graph = graph_with_score()
        gnn = GnnParams.init(hidden_dim=8, time_dim=4, latent_dim=8, n_instruments=8, seed=0)
        gen = GeneratorParams.init(in_dim=8, latent_dim=8, width=16, bottleneck=8, seed=0)
        with pytest.raises(ConfigError):
            run_task(score, graph, gnn, gen, None, TaskSpec(kind="inpaint"))
