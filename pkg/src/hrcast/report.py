"""Report rendering: per-source evaluation bundles (structured JSON plus
aligned plain text) alongside a combined comparison grid across sources
and the case-view text block for individual players.

Every file name embeds the source label and the split year plus a short
hash of the effective configuration, so repeated runs with different
settings never collide and identical runs reproduce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import metrics as X

INTERVAL_WIDTHS = (0, 1, 3, 5, 10)
BUCKET_WIDTHS = (1, 3)

_BUNDLE_FORMAT = "hr-eval-report"
_BUNDLE_VERSION = 1


def config_hash(config):
    """Short stable digest of an effective-configuration mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:10]


def evaluate_source(pred_set, unmatched=0):
    """Compute the full metric battery for one prediction set."""
    accuracies = {str(k): X.interval_accuracy(pred_set, k)
                  for k in INTERVAL_WIDTHS}
    buckets = {}
    for k in BUCKET_WIDTHS:
        table = X.class_bucket_table(pred_set, k)
        buckets[str(k)] = {"labels": list(table.labels),
                           "correct": list(table.counts),
                           "gt": list(table.gt)}
    overflow = X.overflow_table(pred_set)
    view = X.estimation_overview(pred_set)
    return {
        "source": pred_set.source,
        "n": len(pred_set),
        "unmatched": int(unmatched),
        "mae": X.mae(pred_set),
        "rmse": X.rmse(pred_set),
        "interval_accuracy": accuracies,
        "bucket_tables": buckets,
        "overflow": {"labels": list(overflow.labels),
                     "counts": list(overflow.counts),
                     "gt": list(overflow.gt)},
        "overview": {"over": view.over, "exact": view.exact,
                     "under": view.under},
    }


def build_bundle(result, target_year, config):
    """Wrap one source's results with provenance for the JSON report."""
    return {
        "format": _BUNDLE_FORMAT,
        "version": _BUNDLE_VERSION,
        "target_year": int(target_year),
        "config": config,
        "config_hash": config_hash(config),
        "result": result,
    }


def _aligned(rows):
    """Render rows of cells as a right-aligned table; the first column
    stays left-aligned. Pure string building, same input same output."""
    widths = [max(len(str(row[i])) for row in rows)
              for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [str(row[0]).ljust(widths[0])]
        cells += [str(c).rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def _pct(value):
    return f"{value:.2f}"


def render_source_report(result, target_year, config):
    """Aligned-text rendering of one source's full metric battery."""
    out = []
    out.append(f"evaluation of {result['source']} "
               f"for target year {target_year}")
    out.append(f"config {config_hash(config)}, n = {result['n']}"
               + (f", unmatched rows skipped: {result['unmatched']}"
                  if result["unmatched"] else ""))
    out.append("")

    out.append("errors on raw predictions")
    out.append(_aligned([("metric", "value"),
                         ("MAE", f"{result['mae']:.4f}"),
                         ("RMSE", f"{result['rmse']:.4f}")]))
    out.append("")

    out.append("accuracy within +/-k home runs (rounded predictions)")
    header = ("k",) + tuple(f"k={k}" for k in INTERVAL_WIDTHS)
    row = ("percent",) + tuple(_pct(result["interval_accuracy"][str(k)])
                               for k in INTERVAL_WIDTHS)
    out.append(_aligned([header, row]))
    out.append("")

    labels = tuple(result["overflow"]["labels"])
    for k in BUCKET_WIDTHS:
        table = result["bucket_tables"][str(k)]
        out.append(f"correct predictions by true-HR bucket, k={k}")
        out.append(_aligned([("row",) + labels,
                             ("GT",) + tuple(table["gt"]),
                             ("correct",) + tuple(table["correct"])]))
        out.append("")

    out.append("misses larger than 10 by true-HR bucket")
    out.append(_aligned([("row",) + labels,
                         ("GT",) + tuple(result["overflow"]["gt"]),
                         ("misses",) + tuple(result["overflow"]["counts"])]))
    out.append("")

    view = result["overview"]
    out.append("estimation overview (rounded predictions)")
    out.append(_aligned([("over", "exact", "under"),
                         (view["over"], view["exact"], view["under"])]))
    out.append("")
    return "\n".join(out)


def render_comparison_table(results, target_year):
    """Aligned-text grid: one row per source, error and accuracy columns."""
    rows = [("source", "n", "MAE", "RMSE")
            + tuple(f"k={k}" for k in INTERVAL_WIDTHS)]
    for r in results:
        rows.append((r["source"], r["n"], f"{r['mae']:.4f}",
                     f"{r['rmse']:.4f}")
                    + tuple(_pct(r["interval_accuracy"][str(k)])
                            for k in INTERVAL_WIDTHS))
    return (f"source comparison for target year {target_year}\n"
            + _aligned(rows) + "\n")


def render_comparison_csv(results):
    """Machine-readable comparison grid with full-precision numbers."""
    header = (["source", "n", "unmatched", "mae", "rmse"]
              + [f"acc_k{k}" for k in INTERVAL_WIDTHS]
              + ["over", "exact", "under"])
    lines = [",".join(header)]
    for r in results:
        view = r["overview"]
        cells = [r["source"], str(r["n"]), str(r["unmatched"]),
                 repr(r["mae"]), repr(r["rmse"])]
        cells += [repr(r["interval_accuracy"][str(k)])
                  for k in INTERVAL_WIDTHS]
        cells += [str(view["over"]), str(view["exact"]),
                  str(view["under"])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def render_case_view(view):
    """Text block for cmd_predict: truth and every source's rounded
    prediction per player, then trailing home-run and at-bat lines."""
    ids = tuple(p["player_id"] for p in view.players)
    rows = [("source",) + ids, ("GT",) + tuple(p["y_true"]
                                               for p in view.players)]
    for source in view.sources:
        cells = []
        for p in view.players:
            value = p["predictions"].get(source)
            cells.append("×" if value is None else value)
        rows.append((source,) + tuple(cells))

    out = [f"case view for target year {view.target_year}", "",
           _aligned(rows), ""]
    years = view.players[0]["years"]
    hr_rows = [("year",) + ids]
    ab_rows = [("year",) + ids]
    for i, year in enumerate(years):
        hr_rows.append((year,) + tuple(p["hr"][i] for p in view.players))
        ab_rows.append((year,) + tuple(p["ab"][i] for p in view.players))
    out += ["past seasons, home runs", _aligned(hr_rows), ""]
    out += ["past seasons, at bats", _aligned(ab_rows), ""]
    return "\n".join(out)


def write_report_files(out_dir, results, target_year, config):
    """Write one JSON + text bundle per source plus the combined
    comparison grid (text + CSV). Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(config)
    written = []

    for result in results:
        stem = f"report_{result['source']}_{target_year}_{digest}"
        bundle = build_bundle(result, target_year, config)
        json_path = out_dir / f"{stem}.json"
        json_path.write_text(json.dumps(bundle, indent=2, sort_keys=True)
                             + "\n", encoding="utf-8")
        text_path = out_dir / f"{stem}.txt"
        text_path.write_text(render_source_report(result, target_year,
                                                  config),
                             encoding="utf-8")
        written += [json_path, text_path]

    stem = f"comparison_{target_year}_{digest}"
    table_path = out_dir / f"{stem}.txt"
    table_path.write_text(render_comparison_table(results, target_year),
                          encoding="utf-8")
    csv_path = out_dir / f"{stem}.csv"
    csv_path.write_text(render_comparison_csv(results), encoding="utf-8")
    written += [table_path, csv_path]
    return written
