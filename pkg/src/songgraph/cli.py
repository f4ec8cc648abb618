"""Command-line pipeline: analyze, graph, train, generate, evaluate, render.

Exit codes: 0 success, 1 internal error, 2 usage or input error. Every JSON
artifact embeds the effective config and seed; outputs are deterministic
for a fixed --seed. Dataset-wide commands fan file loading out to a
bounded thread pool and keep results in sorted-path order.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ENV_CONFIG, RunConfig, make_config
from .conlon import load_conlon, render_conlon_pgm, render_curve_pgm, split_bars, write_pgm
from .errors import ConfigError, SongGraphError
from .generator import (
    GenTrainConfig,
    TaskSpec,
    load_generator,
    run_task,
    save_generator,
    train_generator,
)
from .graph import GraphConfig, build_graph, parse_graph, serialize, to_dot
from .latent import (
    AeTrainConfig,
    decode as ae_decode,
    decode_baseline,
    embed_baseline,
    encode,
    load_autoencoder,
    save_autoencoder,
    train_autoencoder,
)
from .metrics import evaluate_task, report_to_csv, report_to_json
from .rgcn import GnnTrainConfig, load_gnn, node_representations, sample_mask, save_gnn, train
from .score import default_scheme
from .smf import load_score, write_smf
from .structure import compute_ssm, default_novelty_threshold, detect_boundaries, novelty


def _read_midi(path: str):
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"input file not found: {path}")
    return load_score(file.read_bytes())


def _load_many(paths, workers: int):
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda p: load_score(Path(p).read_bytes()), paths))


def _dataset_files(directory: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise ConfigError(f"dataset directory not found: {directory}")
    files = sorted(root.glob("*.mid")) + sorted(root.glob("*.midi"))
    if not files:
        raise ConfigError(f"no .mid files in {directory}")
    return files


def _genre_table(directory: str) -> dict[str, str]:
    path = Path(directory) / "genres.json"
    if path.is_file():
        return {str(k): str(v) for k, v in json.loads(path.read_text()).items()}
    return {}


def _graph_config(config: RunConfig) -> GraphConfig:
    return GraphConfig(
        pattern_len=config.pattern_len,
        kernel_half_width=config.kernel_half_width,
        sigma=config.sigma,
        novelty_threshold=config.novelty_thresh,
        ssm_threshold=config.ssm_thresh,
        hu_threshold=config.hu_thresh,
        embed_dim=config.latent_dim,
        embed_seed=0,  # embedding map is pinned, independent of --seed
    )


def _embedder(config: RunConfig, ae_path: str | None):
    """(embed callable, decode callable, latent dim) for graph building."""
    if ae_path:
        params = load_autoencoder(ae_path)
        return (
            lambda image: encode(params, image),
            lambda z: ae_decode(params, z),
            params.latent_dim,
        )
    dim = config.latent_dim
    return (
        lambda image: embed_baseline(image, dim, seed=0),
        lambda z: decode_baseline(z, seed=0),
        dim,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bar_latents(score, embed):
    bars = split_bars(score)
    return np.stack([embed(bars.merged(b)) for b in range(bars.n_bars)])


# -- commands -------------------------------------------------------------------

def cmd_analyze(args, config: RunConfig) -> int:
    score = _read_midi(args.midi)
    out = _out_dir(args)
    if score.bars == 0:
        _write_json(out / "boundaries.json", {
            "boundaries": [], "threshold": None, "config": config.to_dict(),
        })
        print(out / "boundaries.json")
        return 0
    embed, _, _ = _embedder(config, args.ae)
    ssm = compute_ssm(_bar_latents(score, embed))
    curve = novelty(ssm, config.kernel_half_width, config.sigma)
    threshold = (
        config.novelty_thresh
        if config.novelty_thresh is not None
        else default_novelty_threshold(curve)
    )
    boundaries = detect_boundaries(curve, threshold)

    np.savetxt(out / "ssm.csv", ssm, delimiter=",", fmt="%.9f")
    write_pgm(ssm, out / "ssm.pgm")
    np.savetxt(
        out / "novelty.csv",
        np.column_stack([np.arange(len(curve.values)), curve.values]),
        delimiter=",",
        fmt="%.9f",
        header="bar,novelty",
        comments="",
    )
    render_curve_pgm(curve.values, out / "novelty.pgm")
    _write_json(out / "boundaries.json", {
        "boundaries": boundaries,
        "threshold": threshold,
        "bars": score.bars,
        "config": config.to_dict(),
    })
    for name in ("ssm.csv", "ssm.pgm", "novelty.csv", "novelty.pgm", "boundaries.json"):
        print(out / name)
    return 0


def cmd_graph(args, config: RunConfig) -> int:
    score = _read_midi(args.midi)
    if args.genre:
        from dataclasses import replace

        score = replace(score, genre=args.genre)
    embed, _, _ = _embedder(config, args.ae)
    graph = build_graph(
        score,
        song_id=Path(args.midi).stem,
        config=_graph_config(config),
        embed=embed,
        drum_instruments=frozenset({default_scheme().drums}),
    )
    out = _out_dir(args)
    (out / "graph.json").write_text(serialize(graph, config=config.to_dict()))
    (out / "graph.dot").write_text(to_dot(graph))
    print(out / "graph.json")
    print(out / "graph.dot")
    return 0


def _write_loss_csv(path: Path, rows, header: str) -> None:
    lines = [header]
    for i, row in enumerate(rows):
        if isinstance(row, tuple):
            lines.append(",".join([str(i)] + [f"{v:.9f}" for v in row]))
        else:
            lines.append(f"{i},{row:.9f}")
    path.write_text("\n".join(lines) + "\n")


def cmd_train_ae(args, config: RunConfig) -> int:
    files = _dataset_files(args.dataset)
    scores = _load_many(files, config.workers)
    images = []
    for score in scores:
        images.extend(img for _, img in sorted(split_bars(score).images.items()))
    if not images:
        raise ConfigError("dataset contains no notes")
    ae_config = AeTrainConfig(
        latent_dim=config.latent_dim,
        hidden_dim=config.ae_hidden,
        epochs=config.epochs,
        lr=config.lr,
        batch_size=config.batch_size,
        mmd_weight=config.mmd_weight,
        seed=config.seed,
    )
    params, trace = train_autoencoder(images, ae_config)
    save_autoencoder(args.out, params, ae_config)
    _write_loss_csv(Path(args.out + ".loss.csv"), trace, "epoch,loss")
    print(args.out)
    return 0


def _build_dataset_graphs(args, config: RunConfig):
    files = _dataset_files(args.dataset)
    scores = _load_many(files, config.workers)
    genres = _genre_table(args.dataset)
    embed, decode_fn, latent_dim = _embedder(config, args.ae)
    graphs = []
    for file, score in zip(files, scores):
        if file.name in genres:
            from dataclasses import replace

            score = replace(score, genre=genres[file.name])
        graphs.append(
            build_graph(
                score,
                song_id=file.stem,
                config=_graph_config(config),
                embed=embed,
                drum_instruments=frozenset({default_scheme().drums}),
            )
        )
    return graphs, embed, decode_fn, latent_dim


def cmd_train_gnn(args, config: RunConfig) -> int:
    graphs, _, _, latent_dim = _build_dataset_graphs(args, config)
    gnn_config = GnnTrainConfig(
        hidden_dim=config.hidden_dim,
        time_dim=config.time_dim,
        latent_dim=latent_dim,
        n_instruments=default_scheme().n_classes,
        epochs=config.epochs,
        lr=config.lr,
        mask_ratio=config.mask_ratio,
        drop_edge_p=config.drop_edge_p,
        drop_node_p=config.drop_node_p,
        genre_loss_weight=config.genre_loss_weight,
        seed=config.seed,
    )
    state = train(graphs, gnn_config)
    save_gnn(args.out, state.params, gnn_config)
    _write_loss_csv(Path(args.out + ".loss.csv"), state.losses, "step,total,recon,genre")
    print(args.out)
    return 0


def _check_latent_dims(gnn, latent_dim: int) -> None:
    if gnn.latent_dim != latent_dim:
        raise ConfigError(
            f"graph-net checkpoint expects {gnn.latent_dim}-dim latents but the "
            f"embedder produces {latent_dim}; pass the matching --ae/--latent-dim"
        )


def cmd_train_gen(args, config: RunConfig) -> int:
    graphs, _, _, latent_dim = _build_dataset_graphs(args, config)
    gnn = load_gnn(args.gnn)
    _check_latent_dims(gnn, latent_dim)
    inputs, targets = [], []
    for i, graph in enumerate(graphs):
        rng = np.random.default_rng((config.seed, i))
        masked = sample_mask(graph, config.mask_ratio, rng)
        reprs = node_representations(gnn, graph, masked).data
        pos = graph.positions()
        for node in graph.nodes:
            if node.latent is not None:
                inputs.append(reprs[pos[node.id]])
                targets.append(node.latent)
    gen_config = GenTrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        batch_size=config.batch_size,
        seed=config.seed,
    )
    params, trace = train_generator(np.stack(inputs), np.stack(targets), gen_config)
    save_generator(args.out, params, gen_config)
    _write_loss_csv(Path(args.out + ".loss.csv"), trace, "epoch,loss")
    print(args.out)
    return 0


def _cmd_task(kind: str):
    def handler(args, config: RunConfig) -> int:
        score = _read_midi(args.midi)
        embed, decode_fn, latent_dim = _embedder(config, args.ae)
        graph = build_graph(
            score,
            song_id=Path(args.midi).stem,
            config=_graph_config(config),
            embed=embed,
            drum_instruments=frozenset({default_scheme().drums}),
        )
        gnn = load_gnn(args.gnn)
        gen = load_generator(args.gen)
        _check_latent_dims(gnn, latent_dim)
        spec = TaskSpec(
            kind=kind,
            seed=config.seed,
            mask_ratio=config.mask_ratio,
            keep_bars=config.keep_bars,
        )
        result = run_task(
            score, graph, gnn, gen, ae=None, spec=spec,
            decode_threshold=config.decode_threshold, decode_fn=decode_fn,
        )
        out = _out_dir(args)
        (out / "generated.mid").write_bytes(write_smf(result.score))
        _write_json(out / "task_report.json", {
            "task": kind,
            "seed": config.seed,
            "masked_ids": list(result.masked_ids),
            "primary_instrument": result.primary_instrument,
            "drum_nodes": list(result.drum_nodes),
            "config": config.to_dict(),
        })
        _write_json(out / "latents.json", {
            str(node_id): [float(v) for v in z] for node_id, z in sorted(result.latents.items())
        })
        for name in ("generated.mid", "task_report.json", "latents.json"):
            print(out / name)
        return 0

    return handler


def cmd_eval(args, config: RunConfig) -> int:
    original = _read_midi(args.original)
    generated = _read_midi(args.generated)
    embed, _, _ = _embedder(config, args.ae)
    graph = build_graph(
        original,
        song_id=Path(args.original).stem,
        config=_graph_config(config),
        embed=embed,
        drum_instruments=frozenset({default_scheme().drums}),
    )
    if args.task_report:
        report_doc = json.loads(Path(args.task_report).read_text())
        masked = set(report_doc["masked_ids"])
        patterns = [p for p in graph.nodes if p.id in masked]
        task = report_doc.get("task", "eval")
    else:
        patterns = list(graph.nodes)
        task = "eval"
    report = evaluate_task(
        original, generated, patterns,
        drum_instruments=graph.drum_instruments, task=task,
    )
    out = _out_dir(args)
    (out / "metrics.json").write_text(report_to_json(report, config=config.to_dict()))
    (out / "metrics.csv").write_text(report_to_csv(report))
    print(out / "metrics.json")
    print(out / "metrics.csv")
    return 0


def cmd_render(args, config: RunConfig) -> int:
    source = Path(args.artifact)
    if not source.is_file():
        raise ConfigError(f"input file not found: {args.artifact}")
    out = _out_dir(args)
    if source.suffix == ".clon":
        image = load_conlon(source)
        vel, dur = out / f"{source.stem}_velocity.pgm", out / f"{source.stem}_duration.pgm"
        render_conlon_pgm(image, vel, dur)
        print(vel)
        print(dur)
        return 0
    if source.suffix == ".json":
        graph = parse_graph(source.read_text())
        target = out / f"{source.stem}.dot"
        target.write_text(to_dot(graph))
        print(target)
        return 0
    if source.suffix == ".csv":
        first = source.read_text().splitlines()[0]
        has_header = any(c.isalpha() for c in first)
        matrix = np.loadtxt(source, delimiter=",", skiprows=1 if has_header else 0)
        target = out / f"{source.stem}.pgm"
        if matrix.ndim == 2 and matrix.shape[1] == 2 and matrix.shape[0] != 2:
            render_curve_pgm(matrix[:, 1], target)  # (index, value) curve dump
        else:
            write_pgm(np.clip(matrix, 0.0, 1.0), target)
        print(target)
        return 0
    raise ConfigError(f"don't know how to render {source.suffix!r} files")


# -- argument wiring -------------------------------------------------------------

_FLAGS = (
    # (flag, dest/config key, type, help)
    ("--pl", "pattern_len", int, "pattern length in bars"),
    ("--kernel-l", "kernel_half_width", int, "novelty kernel half-width"),
    ("--sigma", "sigma", float, "novelty kernel std deviation"),
    ("--novelty-thresh", "novelty_thresh", float, "boundary threshold (default: mean+0.5*std)"),
    ("--ssm-thresh", "ssm_thresh", float, "same-song-structure edge threshold"),
    ("--hu-thresh", "hu_thresh", float, "homogeneity edge distance threshold"),
    ("--mask-ratio", "mask_ratio", float, "fraction of nodes masked"),
    ("--lambda", "genre_loss_weight", float, "genre loss weight"),
    ("--seed", "seed", int, "global random seed"),
    ("--latent-dim", "latent_dim", int, "bar embedding dimension"),
    ("--hidden-dim", "hidden_dim", int, "graph-net hidden width"),
    ("--time-dim", "time_dim", int, "positional encoding width"),
    ("--ae-hidden", "ae_hidden", int, "autoencoder hidden width"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--lr", "lr", float, "learning rate"),
    ("--batch-size", "batch_size", int, "training batch size"),
    ("--mmd-weight", "mmd_weight", float, "latent MMD penalty weight"),
    ("--drop-edge", "drop_edge_p", float, "edge dropout probability"),
    ("--drop-node", "drop_node_p", float, "node dropout probability"),
    ("--decode-threshold", "decode_threshold", float, "minimum decoded velocity"),
    ("--keep-bars", "keep_bars", int, "generation task keeps patterns inside this prefix"),
    ("--workers", "workers", int, "worker pool size for dataset commands"),
)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("pipeline options")
    group.add_argument("--config", help=f"key=value config file (or ${ENV_CONFIG})")
    for flag, dest, kind, help_text in _FLAGS:
        group.add_argument(flag, dest=dest, type=kind, default=None, help=help_text)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="songgraph",
        description="Multitrack MIDI structure analysis and pattern generation.",
    )
    parser.add_argument("--version", action="version", version=f"songgraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="similarity matrix, novelty, boundaries")
    p.add_argument("midi")
    p.add_argument("--ae", help="autoencoder checkpoint for embeddings")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("graph", parents=[common], help="build the song-structure graph")
    p.add_argument("midi")
    p.add_argument("--ae")
    p.add_argument("--genre", help="genre label to attach")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_graph)

    p = sub.add_parser("train-ae", parents=[common], help="train the bar autoencoder")
    p.add_argument("dataset", help="directory of .mid files")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(handler=cmd_train_ae)

    p = sub.add_parser("train-gnn", parents=[common], help="train the graph network")
    p.add_argument("dataset")
    p.add_argument("--ae")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_gnn)

    p = sub.add_parser("train-gen", parents=[common], help="train the latent generator")
    p.add_argument("dataset")
    p.add_argument("--gnn", required=True)
    p.add_argument("--ae")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_gen)

    for kind, name, blurb in (
        ("inpaint", "inpaint", "reconstruct a masked share of patterns"),
        ("generate", "generate", "regenerate everything past the opening bars"),
        ("melody_conditioned", "melody-gen", "keep the primary instrument, generate the rest"),
    ):
        p = sub.add_parser(name, parents=[common], help=blurb)
        p.add_argument("midi")
        p.add_argument("--gnn", required=True)
        p.add_argument("--gen", required=True)
        p.add_argument("--ae")
        p.add_argument("--out", required=True)
        p.set_defaults(handler=_cmd_task(kind))

    p = sub.add_parser("eval", parents=[common], help="metric report original vs generated")
    p.add_argument("original")
    p.add_argument("generated")
    p.add_argument("--task-report", help="task_report.json naming the masked nodes")
    p.add_argument("--ae")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="PGM/DOT visualizations of artifacts")
    p.add_argument("artifact", help=".clon, graph .json, or matrix .csv file")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = {
        dest: getattr(args, dest) for _, dest, _, _ in _FLAGS if getattr(args, dest) is not None
    }
    try:
        config = make_config(args.config, overrides)
        return args.handler(args, config)
    except (SongGraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - safety net
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
