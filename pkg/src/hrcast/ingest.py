"""Panel-data ingestion: CSV parsing, the low-activity exclusion filter,
moving-window sample construction, year-keyed splits, and feature scaling.

A window sample pairs five consecutive player-seasons of 21 features with
the home-run total of the sixth season. Windows never span a missing year:
a gap in a player's career (or a season removed by the filter) breaks the
run, so a player with L consecutive usable seasons yields max(0, L - 5)
samples.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

WINDOW_LENGTH = 5
FEATURE_COUNT = 21
LABEL_CEILING = 74  # highest single-season home-run total on record, plus one

# Canonical CSV header, in order. The 21 columns after player_id are the
# feature vector for one season; the matrix rows handed to models keep
# exactly this ordering.
CSV_COLUMNS = (
    "player_id", "season", "age", "height", "weight", "hr", "hit", "so",
    "r", "2b", "3b", "sb", "cs", "g", "sf", "ibb", "gidp", "hbp", "pa",
    "rbi", "bb", "sh",
)
FEATURE_NAMES = CSV_COLUMNS[1:]
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

_ARTIFACT_FORMAT = "hr-window-dataset"
_ARTIFACT_VERSION = 1


class IngestError(ValueError):
    """Base class for problems found while reading season data."""


class SchemaError(IngestError):
    """Raised when the CSV header does not match the canonical columns."""


class RowError(IngestError):
    """Raised for a malformed data row; the message names the row number."""


class DuplicateSeasonError(IngestError):
    """Raised when one (player_id, season) pair appears twice."""


@dataclass(frozen=True)
class PlayerSeason:
    """One player's stat line for one season.

    Count abbreviations from the CSV header are spelled out where the short
    form would be cryptic as an attribute (so -> strikeout, r -> runs,
    2b -> doubles, 3b -> triples, g -> games).
    """

    player_id: str
    season: int
    age: int
    height: int
    weight: int
    hr: int
    hit: int
    strikeout: int
    runs: int
    doubles: int
    triples: int
    sb: int
    cs: int
    games: int
    sf: int
    ibb: int
    gidp: int
    hbp: int
    pa: int
    rbi: int
    bb: int
    sh: int

    @property
    def features(self):
        """The season's 21 feature values, ordered as in FEATURE_NAMES."""
        return (self.season, self.age, self.height, self.weight, self.hr,
                self.hit, self.strikeout, self.runs, self.doubles,
                self.triples, self.sb, self.cs, self.games, self.sf,
                self.ibb, self.gidp, self.hbp, self.pa, self.rbi, self.bb,
                self.sh)


@dataclass(frozen=True, eq=False)
class WindowSample:
    """Five consecutive seasons of features and the following season's HR.

    x has shape (5, 21), rows ordered oldest to newest; the five source
    years are target_year - 5 through target_year - 1.
    """

    player_id: str
    target_year: int
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class Split:
    """A train/test partition keyed by target year."""

    target_year: int
    retrain_prior: bool
    train: tuple
    test: tuple

    def counts(self):
        return len(self.train), len(self.test)


def parse_seasons(csv_source):
    """Read player-season rows from a CSV path or open text stream.

    Rows keep their input order. Non-numeric cells, negative values, hr
    exceeding pa, and duplicate (player_id, season) keys are errors; a
    height or weight that changes across a player's career only warns.
    """
    if hasattr(csv_source, "read"):
        return _parse_stream(csv_source)
    with open(csv_source, newline="", encoding="utf-8") as stream:
        return _parse_stream(stream)


def _parse_stream(stream):
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise SchemaError("input is empty; expected a header row")
    header = [cell.strip() for cell in header]
    if header != list(CSV_COLUMNS):
        missing = sorted(set(CSV_COLUMNS) - set(header))
        extra = sorted(set(header) - set(CSV_COLUMNS))
        detail = []
        if missing:
            detail.append(f"missing columns: {', '.join(missing)}")
        if extra:
            detail.append(f"unexpected columns: {', '.join(extra)}")
        if not detail:
            detail.append("columns are out of order")
        raise SchemaError("; ".join(detail))

    seasons = []
    seen = set()
    body_measurements = {}
    for row_number, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(CSV_COLUMNS):
            raise RowError(f"row {row_number}: expected "
                           f"{len(CSV_COLUMNS)} values, found {len(cells)}")
        player_id = cells[0].strip()
        if not player_id:
            raise RowError(f"row {row_number}: empty player_id")
        values = []
        for name, cell in zip(FEATURE_NAMES, cells[1:]):
            try:
                value = int(cell.strip())
            except ValueError:
                raise RowError(f"row {row_number}: column {name!r} value "
                               f"{cell.strip()!r} is not an integer") from None
            if value < 0:
                raise RowError(f"row {row_number}: column {name!r} "
                               f"is negative ({value})")
            values.append(value)
        season = PlayerSeason(player_id, *values)
        if season.hr > season.pa:
            raise RowError(f"row {row_number}: hr {season.hr} exceeds "
                           f"pa {season.pa}")
        key = (season.player_id, season.season)
        if key in seen:
            raise DuplicateSeasonError(
                f"row {row_number}: duplicate season {season.season} "
                f"for player {season.player_id!r}")
        seen.add(key)
        first = body_measurements.setdefault(
            player_id, (season.height, season.weight))
        if first != (season.height, season.weight):
            warnings.warn(
                f"player {player_id!r} height/weight changes across seasons "
                f"({first[0]}/{first[1]} vs {season.height}/{season.weight})")
        seasons.append(season)
    return seasons


def filter_seasons(seasons):
    """Drop seasons with fewer than 50 plate appearances and zero home runs."""
    return [s for s in seasons if not (s.pa < 50 and s.hr == 0)]


def _consecutive_runs(rows):
    """Split year-sorted seasons into maximal runs of consecutive years."""
    runs = []
    current = []
    for row in rows:
        if current and row.season != current[-1].season + 1:
            runs.append(current)
            current = []
        current.append(row)
    if current:
        runs.append(current)
    return runs


def build_windows(seasons):
    """Slide a six-year window over each player's consecutive-season runs.

    Output order is deterministic regardless of input row order: players
    ascending by id, then windows ascending by target year.
    """
    by_player = {}
    for season in seasons:
        by_player.setdefault(season.player_id, []).append(season)

    samples = []
    for player_id in sorted(by_player):
        rows = sorted(by_player[player_id], key=lambda s: s.season)
        for run in _consecutive_runs(rows):
            for start in range(len(run) - WINDOW_LENGTH):
                history = run[start:start + WINDOW_LENGTH]
                label_season = run[start + WINDOW_LENGTH]
                x = np.array([row.features for row in history],
                             dtype=np.float64)
                y = label_season.hr
                if y < 0:
                    raise ValueError(
                        f"negative home-run label {y} for player "
                        f"{player_id!r} in {label_season.season}")
                if y > LABEL_CEILING:
                    warnings.warn(
                        f"home-run label {y} for player {player_id!r} in "
                        f"{label_season.season} exceeds {LABEL_CEILING}")
                samples.append(WindowSample(player_id,
                                            label_season.season, x, y))
    return samples


def split_by_target_year(samples, cutoff_year, retrain_prior=False):
    """Partition samples into train (target year before the cutoff) and
    test (target year equal to the cutoff).

    The retrain_prior flag records the protocol used when scoring a later
    year after an earlier one (the prior test year's samples fall before
    the new cutoff, so they re-enter training). Membership is by target
    year either way; the flag is kept on the Split for provenance.
    """
    train = tuple(s for s in samples if s.target_year < cutoff_year)
    test = tuple(s for s in samples if s.target_year == cutoff_year)
    if not test:
        raise ValueError(f"no samples with target year {cutoff_year}")
    return Split(cutoff_year, bool(retrain_prior), train, test)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-scoring fitted on training windows only.

    Statistics pool every timestep row of every training sample. Features
    with zero variance get a standard deviation of 1 so their normalized
    values come out 0 instead of dividing by zero. Labels are never
    transformed; predictions stay on the raw home-run scale.
    """

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload):
        mean = np.asarray(payload["mean"], dtype=np.float64)
        std = np.asarray(payload["std"], dtype=np.float64)
        if mean.shape != (FEATURE_COUNT,) or std.shape != (FEATURE_COUNT,):
            raise ValueError("normalizer payload must carry "
                             f"{FEATURE_COUNT} means and deviations")
        if np.any(std <= 0):
            raise ValueError("normalizer deviations must be positive")
        return cls(mean, std)


def fit_normalizer(train_samples):
    """Fit per-feature mean and population standard deviation."""
    if not train_samples:
        raise ValueError("cannot fit a normalizer on an empty training split")
    rows = np.concatenate([s.x for s in train_samples], axis=0)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return Normalizer(mean, std)


def apply_normalizer(normalizer, samples):
    """Return copies of the samples with transformed feature matrices."""
    return [replace(s, x=normalizer.transform(s.x)) for s in samples]


def save_windows(samples, path):
    """Write window samples as a versioned line-per-record text artifact.

    The first line is a header carrying the format name and version plus
    the record count; each following line is one sample with its source
    years, so re-reading the file reproduces the dataset byte-for-byte.
    """
    lines = [json.dumps(
        {"format": _ARTIFACT_FORMAT, "version": _ARTIFACT_VERSION,
         "count": len(samples)},
        sort_keys=True, separators=(",", ":"))]
    for s in samples:
        record = {
            "player_id": s.player_id,
            "target_year": int(s.target_year),
            "source_years": list(range(s.target_year - WINDOW_LENGTH,
                                       s.target_year)),
            "x": [[float(v) for v in row] for row in s.x],
            "y": int(s.y),
        }
        lines.append(json.dumps(record, sort_keys=True,
                                separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_windows(path):
    """Read a window-sample artifact written by save_windows."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("dataset artifact is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"not a dataset artifact: {exc}") from None
    if header.get("format") != _ARTIFACT_FORMAT:
        raise ValueError("not a dataset artifact (unrecognized format name)")
    if header.get("version") != _ARTIFACT_VERSION:
        raise ValueError(f"unsupported dataset artifact version "
                         f"{header.get('version')!r}")
    if header.get("count") != len(lines) - 1:
        raise ValueError(f"dataset artifact count mismatch: header says "
                         f"{header.get('count')}, found {len(lines) - 1}")
    samples = []
    for line in lines[1:]:
        record = json.loads(line)
        x = np.array(record["x"], dtype=np.float64)
        if x.shape != (WINDOW_LENGTH, FEATURE_COUNT):
            raise ValueError(f"sample for player "
                             f"{record['player_id']!r} has shape "
                             f"{x.shape}, expected "
                             f"({WINDOW_LENGTH}, {FEATURE_COUNT})")
        samples.append(WindowSample(record["player_id"],
                                    int(record["target_year"]), x,
                                    int(record["y"])))
    return samples
