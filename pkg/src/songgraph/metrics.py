"""Pattern-level evaluation metrics and task reports.

Five metrics per masked musical pattern, drums excluded: note density
(count), unique pitches, key score (fraction of pitches on the labeled
scale, or the best of all 24 scales when unlabeled), velocity average,
and duration average in quarter notes (grid units / 12). Reports carry the
published ground-truth row as a reference annotation only, never as a
pass/fail gate.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from .score import GRID_PER_BAR, GRID_PER_QUARTER, Key, Note, Score

MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
NATURAL_MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)

# Published corpus-level averages, reported alongside results for context.
GROUND_TRUTH_REFERENCE = {"nd": 20.85, "up": 6.23, "ks": 0.74, "va": 94.81, "da": 0.81}

ALL_KEYS = tuple(Key(t, m) for m in (False, True) for t in range(12))


def scale_pitch_classes(key: Key) -> frozenset[int]:
    steps = NATURAL_MINOR_STEPS if key.minor else MAJOR_STEPS
    return frozenset((key.tonic + s) % 12 for s in steps)


def key_score(notes, key: Key | None = None) -> float | None:
    """Fraction of notes whose pitch class is on the scale; None when empty.

    With no key label, the best fraction over all 24 major/natural-minor
    scales is reported.
    """
    pitches = [n.pitch % 12 for n in notes]
    if not pitches:
        return None
    if key is not None:
        on = scale_pitch_classes(key)
        return sum(p in on for p in pitches) / len(pitches)
    return max(
        sum(p in scale_pitch_classes(k) for p in pitches) / len(pitches) for k in ALL_KEYS
    )


def unique_pitch(notes) -> int:
    return len({n.pitch for n in notes})


def note_density(notes) -> int:
    return len(list(notes))


def velocity_avg(notes) -> float | None:
    velocities = [n.velocity for n in notes]
    return sum(velocities) / len(velocities) if velocities else None


def duration_avg(notes) -> float | None:
    """Mean duration in quarter notes (grid units / 12)."""
    durations = [n.duration / GRID_PER_QUARTER for n in notes]
    return sum(durations) / len(durations) if durations else None


@dataclass(frozen=True)
class PatternMetrics:
    nd: int
    up: int
    ks: float | None
    va: float | None
    da: float | None


def pattern_metrics(notes, key: Key | None) -> PatternMetrics:
    notes = list(notes)
    return PatternMetrics(
        nd=note_density(notes),
        up=unique_pitch(notes),
        ks=key_score(notes, key),
        va=velocity_avg(notes),
        da=duration_avg(notes),
    )


def notes_in_segment(score: Score, instrument: int, start_bar: int, length: int) -> list[Note]:
    lo, hi = start_bar * GRID_PER_BAR, (start_bar + length) * GRID_PER_BAR
    return [n for n in score.notes if n.instrument == instrument and lo <= n.onset < hi]


@dataclass
class MetricsReport:
    task: str
    rows: list[dict]
    mean_original: dict[str, float | None]
    mean_generated: dict[str, float | None]
    n_patterns: int
    n_excluded_drums: int
    reference: dict[str, float]
    metadata: dict[str, str]

    @property
    def empty(self) -> bool:
        return self.n_patterns == 0


_FIELDS = ("nd", "up", "ks", "va", "da")


def _mean_column(rows: list[dict], side: str) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for field_name in _FIELDS:
        values = [row[side][field_name] for row in rows if row[side][field_name] is not None]
        out[field_name] = sum(values) / len(values) if values else None
    return out


def evaluate_task(
    original: Score,
    generated: Score,
    patterns,
    drum_instruments=frozenset({0}),
    task: str = "eval",
) -> MetricsReport:
    """Metrics per masked pattern on both scores, drums excluded."""
    rows = []
    n_drums = 0
    for pattern in patterns:
        if pattern.instrument in drum_instruments:
            n_drums += 1
            continue
        seg_orig = notes_in_segment(original, pattern.instrument, pattern.start_bar, pattern.length)
        seg_gen = notes_in_segment(generated, pattern.instrument, pattern.start_bar, pattern.length)
        rows.append(
            {
                "node_id": pattern.id,
                "instrument": pattern.instrument,
                "start_bar": pattern.start_bar,
                "length": pattern.length,
                "original": pattern_metrics(seg_orig, original.key).__dict__,
                "generated": pattern_metrics(seg_gen, generated.key).__dict__,
            }
        )
    return MetricsReport(
        task=task,
        rows=rows,
        mean_original=_mean_column(rows, "original"),
        mean_generated=_mean_column(rows, "generated"),
        n_patterns=len(rows),
        n_excluded_drums=n_drums,
        reference=dict(GROUND_TRUTH_REFERENCE),
        metadata={
            "key_policy": "labeled key when present, else best of 24 scales",
            "duration_units": "quarter notes (grid units / 12)",
            "reference_row": "published corpus averages; annotation only, not a gate",
        },
    )


def report_to_json(report: MetricsReport, config: dict | None = None) -> str:
    doc = {
        "task": report.task,
        "status": "ok" if not report.empty else "no eligible nodes",
        "config": config,
        "n_patterns": report.n_patterns,
        "n_excluded_drums": report.n_excluded_drums,
        "mean_original": report.mean_original,
        "mean_generated": report.mean_generated,
        "reference": report.reference,
        "metadata": report.metadata,
        "rows": report.rows,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def report_to_csv(report: MetricsReport) -> str:
    """Summary table, one row per source, columns ND/UP/KS/VA/DA."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["row", "nd", "up", "ks", "va", "da"])

    def fmt(values: dict[str, float | None]) -> list[str]:
        return ["" if values[f] is None else f"{values[f]:.4f}" for f in _FIELDS]

    writer.writerow(["reference"] + fmt({k: float(v) for k, v in report.reference.items()}))
    writer.writerow(["original"] + fmt(report.mean_original))
    writer.writerow([report.task] + fmt(report.mean_generated))
    return buf.getvalue()
