"""Evaluation battery: MAE/RMSE, interval accuracies, per-bucket hit
tables, over/under overviews, per-player case views, and ingestion of
external prediction files for side-by-side comparison.

Error metrics work on raw continuous predictions. Everything that counts
hits (interval accuracy, bucket tables, the overview) first rounds half
away from zero and clamps at zero, so continuous model outputs and
integer-valued external projections are compared on one footing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import FEATURE_INDEX

BUCKET_LABELS = ("0-9", "10-19", "20-29", "30-39", "40+")
_BUCKET_EDGES = (0, 10, 20, 30, 40)
OVERFLOW_THRESHOLD = 10


@dataclass(frozen=True)
class PredictionRecord:
    player_id: str
    target_year: int
    y_true: int
    y_raw: float
    y_rounded: int


@dataclass(frozen=True)
class PredictionSet:
    """Predictions from one source (a model or an external system)."""

    source: str
    records: tuple

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class BucketTable:
    """Per-bucket hit counts next to each bucket's ground-truth size.

    half_width is the interval half-width the counts were taken at, or
    None for the overflow table (misses larger than 10).
    """

    half_width: int | None
    labels: tuple
    counts: tuple
    gt: tuple


@dataclass(frozen=True)
class Overview:
    """Counts of rounded predictions relative to the truth: over, exact, under."""

    over: int
    exact: int
    under: int


@dataclass(frozen=True)
class CaseView:
    """Per-player comparison block: the truth above every source's rounded
    prediction (None where a source skips the player), followed by the
    trailing five seasons of home runs and at-bats."""

    target_year: int
    sources: tuple
    players: tuple  # dicts: player_id, y_true, predictions, years, hr, ab


@dataclass(frozen=True)
class ExternalPredictions:
    """Rows read from an external projection CSV, before joining truth."""

    source: str
    rows: tuple  # (player_id, target_year, prediction)


def round_half_away_from_zero(value):
    if value >= 0:
        return int(math.floor(value + 0.5))
    return int(math.ceil(value - 0.5))


def round_prediction(value):
    """Round to the nearest whole home-run count, never below zero."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"prediction is not finite: {value!r}")
    return max(0, round_half_away_from_zero(value))


def make_prediction_set(source, rows):
    """Build a PredictionSet from (player_id, target_year, y_true, y_raw)
    rows, deriving the rounded value for counting metrics."""
    records = []
    for player_id, target_year, y_true, y_raw in rows:
        y_true = int(y_true)
        if y_true < 0:
            raise ValueError(f"negative ground truth {y_true} "
                             f"for player {player_id!r}")
        records.append(PredictionRecord(player_id, int(target_year), y_true,
                                        float(y_raw),
                                        round_prediction(y_raw)))
    return PredictionSet(str(source), tuple(records))


def model_predictions(model, samples, normalizer=None, source=None):
    """Run a model over raw window samples and collect a PredictionSet.

    Samples carry raw feature values; pass the training normalizer so the
    matrices are scaled the same way the model was fitted.
    """
    from . import models as M
    rows = []
    for s in samples:
        x = normalizer.transform(s.x) if normalizer is not None else s.x
        rows.append((s.player_id, s.target_year, s.y, M.predict(model, x)))
    return make_prediction_set(source or model.spec.name, rows)


def _require_records(pred_set):
    if not pred_set.records:
        raise ValueError(f"prediction set {pred_set.source!r} is empty")
    return pred_set.records


def mae(pred_set):
    """Mean absolute error of the raw predictions."""
    records = _require_records(pred_set)
    return float(np.mean([abs(r.y_raw - r.y_true) for r in records]))


def rmse(pred_set):
    """Root mean squared error of the raw predictions."""
    records = _require_records(pred_set)
    return float(np.sqrt(np.mean([(r.y_raw - r.y_true) ** 2
                                  for r in records])))


def interval_accuracy(pred_set, half_width):
    """Percent of rounded predictions within half_width of the truth."""
    if half_width < 0:
        raise ValueError(f"half width must be non-negative, "
                         f"got {half_width}")
    records = _require_records(pred_set)
    hits = sum(1 for r in records
               if abs(r.y_rounded - r.y_true) <= half_width)
    return 100.0 * hits / len(records)


def bucket_of(y_true):
    """Index of the true-HR bucket: [0-9], [10-19], [20-29], [30-39], 40+."""
    for i in range(len(_BUCKET_EDGES) - 1, -1, -1):
        if y_true >= _BUCKET_EDGES[i]:
            return i
    raise ValueError(f"negative home-run total {y_true}")


def _gt_counts(records):
    gt = [0] * len(BUCKET_LABELS)
    for r in records:
        gt[bucket_of(r.y_true)] += 1
    return tuple(gt)


def class_bucket_table(pred_set, half_width):
    """Hit counts per true-HR bucket at the given interval half-width."""
    if half_width < 0:
        raise ValueError(f"half width must be non-negative, "
                         f"got {half_width}")
    records = _require_records(pred_set)
    counts = [0] * len(BUCKET_LABELS)
    for r in records:
        if abs(r.y_rounded - r.y_true) <= half_width:
            counts[bucket_of(r.y_true)] += 1
    return BucketTable(int(half_width), BUCKET_LABELS, tuple(counts),
                       _gt_counts(records))


def overflow_table(pred_set):
    """Counts per true-HR bucket of misses larger than 10."""
    records = _require_records(pred_set)
    counts = [0] * len(BUCKET_LABELS)
    for r in records:
        if abs(r.y_rounded - r.y_true) > OVERFLOW_THRESHOLD:
            counts[bucket_of(r.y_true)] += 1
    return BucketTable(None, BUCKET_LABELS, tuple(counts),
                       _gt_counts(records))


def estimation_overview(pred_set):
    """Split rounded predictions into overestimates, exact hits, and
    underestimates; the three always sum to the set size."""
    records = _require_records(pred_set)
    over = sum(1 for r in records if r.y_rounded > r.y_true)
    exact = sum(1 for r in records if r.y_rounded == r.y_true)
    under = sum(1 for r in records if r.y_rounded < r.y_true)
    return Overview(over, exact, under)


def case_view(pred_sets, samples, player_ids):
    """Assemble per-player comparison blocks for the requested players.

    samples must be the raw (un-normalized) window samples for the test
    year; the trailing HR and AB lines are read straight off the feature
    matrices, with AB derived as pa - bb - hbp - sf - sh.
    """
    by_player = {s.player_id: s for s in samples}
    season_idx = FEATURE_INDEX["season"]
    hr_idx = FEATURE_INDEX["hr"]
    ab_parts = [FEATURE_INDEX[name] for name in ("pa", "bb", "hbp", "sf",
                                                 "sh")]
    lookups = [
        (ps.source, {(r.player_id, r.target_year): r.y_rounded
                     for r in ps.records})
        for ps in pred_sets
    ]

    players = []
    target_year = None
    for player_id in player_ids:
        sample = by_player.get(player_id)
        if sample is None:
            raise ValueError(f"unknown player {player_id!r}")
        if np.max(np.abs(sample.x)) < 100:
            raise ValueError("case views need raw feature matrices; "
                             "these look normalized")
        target_year = sample.target_year
        years = [int(v) for v in sample.x[:, season_idx]]
        hr = [int(v) for v in sample.x[:, hr_idx]]
        pa, bb, hbp, sf, sh = (sample.x[:, i] for i in ab_parts)
        ab = [int(v) for v in pa - bb - hbp - sf - sh]
        key = (player_id, sample.target_year)
        predictions = {src: table.get(key) for src, table in lookups}
        players.append({"player_id": player_id, "y_true": int(sample.y),
                        "predictions": predictions, "years": years,
                        "hr": hr, "ab": ab})
    if not players:
        raise ValueError("no players requested")
    return CaseView(target_year, tuple(src for src, _ in lookups),
                    tuple(players))


def ingest_external_predictions(csv_source, source=None):
    """Read an external projection CSV (player_id, target_year,
    prediction). The source label defaults to the file stem."""
    if hasattr(csv_source, "read"):
        if source is None:
            raise ValueError("a source label is required when reading "
                             "from a stream")
        return _read_external(csv_source, source)
    path = Path(csv_source)
    with open(path, newline="", encoding="utf-8") as stream:
        return _read_external(stream, source or path.stem)


def _read_external(stream, source):
    reader = csv.reader(stream)
    header = next(reader, None)
    expected = ["player_id", "target_year", "prediction"]
    if header is None or [c.strip() for c in header] != expected:
        raise ValueError("external predictions must start with the header "
                         + ",".join(expected))
    rows = []
    for row_number, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != 3:
            raise ValueError(f"row {row_number}: expected 3 values, "
                             f"found {len(cells)}")
        player_id = cells[0].strip()
        try:
            target_year = int(cells[1].strip())
            prediction = float(cells[2].strip())
        except ValueError:
            raise ValueError(f"row {row_number}: could not parse "
                             f"{cells[1]!r}, {cells[2]!r}") from None
        if not math.isfinite(prediction):
            raise ValueError(f"row {row_number}: prediction is not finite")
        rows.append((player_id, target_year, prediction))
    if not rows:
        raise ValueError(f"external prediction set {source!r} is empty")
    return ExternalPredictions(str(source), tuple(rows))


def join_external(external, samples):
    """Join external rows against ground truth from window samples.

    Returns the evaluable PredictionSet plus the count of rows that
    matched no sample, so callers can report misses instead of silently
    dropping them.
    """
    truth = {(s.player_id, s.target_year): s.y for s in samples}
    matched = []
    unmatched = 0
    for player_id, target_year, prediction in external.rows:
        y_true = truth.get((player_id, target_year))
        if y_true is None:
            unmatched += 1
        else:
            matched.append((player_id, target_year, y_true, prediction))
    if not matched:
        raise ValueError(f"no rows of {external.source!r} match the "
                         f"evaluation samples")
    return make_prediction_set(external.source, matched), unmatched
