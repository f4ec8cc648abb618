"""Multitrack MIDI structure analysis, song-structure graphs, and
pattern generation with full metric evaluation."""

from .conlon import BarSequence, ConlonImage, decode_conlon, encode_conlon, split_bars
from .graph import EdgeKind, GraphConfig, MusicalPattern, SongStructureGraph, build_graph
from .score import Key, Note, Score, default_scheme, map_instruments, quantize
from .smf import load_score, parse_smf, write_smf
from .structure import checkerboard_kernel, compute_ssm, detect_boundaries, hu_signature, novelty

__version__ = "0.1.0"

__all__ = [
    "BarSequence",
    "ConlonImage",
    "EdgeKind",
    "GraphConfig",
    "Key",
    "MusicalPattern",
    "Note",
    "Score",
    "SongStructureGraph",
    "build_graph",
    "checkerboard_kernel",
    "compute_ssm",
    "decode_conlon",
    "default_scheme",
    "detect_boundaries",
    "encode_conlon",
    "hu_signature",
    "load_score",
    "map_instruments",
    "novelty",
    "parse_smf",
    "quantize",
    "split_bars",
    "write_smf",
]
