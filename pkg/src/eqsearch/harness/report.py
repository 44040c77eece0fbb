"""Report files for a finished sweep.

``report.csv`` has one row per noise level and one column group per
ground-truth term (detection P, coefficient mean, 1.98-sigma spread), followed
by the level's success frequency, one-positive flag and MAPE. It is fully
deterministic for a fixed config and seed. ``report.json`` adds every run's
selected equations, match details and Pareto archive and can be loaded back
with :func:`load_result`. ``plot.csv`` is a long-format table for plotting
detection frequency against noise level. Wall-clock times go to
``timings.csv`` only, so the other files stay byte-identical across repeated
invocations.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..errors import ConfigError
from .config import ExperimentConfig
from .experiment import ExperimentResult, LevelStats, MatchReport, RunRecord, TermStats

LEVEL_FIELDS = ["noise_level"]
SUMMARY_FIELDS = ["success_percent", "one_positive", "mape_percent", "runs", "failed_runs"]
PLOT_FIELDS = ["noise_level", "series", "value"]
FORMATS = ("csv", "json", "plot")


def _num(value, digits=6):
    """Stable text for a number; '-' marks statistics without data."""
    if value is None:
        return "-"
    return f"{value:.{digits}g}"


def term_columns(labels) -> list:
    """Column names for the term groups, e.g. ``eq0:u * d^1u/dx^1 P%``."""
    cols = []
    for e, eq_labels in enumerate(labels):
        for term in eq_labels:
            name = f"eq{e}:{term}"
            cols += [f"{name} P%", f"{name} mean", f"{name} spread"]
    return cols


def csv_text(result) -> str:
    fields = LEVEL_FIELDS + term_columns(result.truth_labels) + SUMMARY_FIELDS
    rows = []
    for lvl in result.stats:
        row = {"noise_level": _num(lvl.noise_level),
               "success_percent": _num(lvl.success_percent),
               "one_positive": "yes" if lvl.one_positive else "no",
               "mape_percent": _num(lvl.mape), "runs": lvl.runs,
               "failed_runs": lvl.failed_runs}
        for t in lvl.terms:
            name = f"eq{t.equation}:{t.term}"
            row[f"{name} P%"] = _num(t.detection_percent)
            row[f"{name} mean"] = _num(t.mean)
            row[f"{name} spread"] = _num(t.spread)
        rows.append(row)
    return _csv(rows, fields)


def plot_text(result) -> str:
    rows = []
    for lvl in result.stats:
        rows.append({"noise_level": _num(lvl.noise_level), "series": "success",
                     "value": _num(lvl.success_percent)})
        for t in lvl.terms:
            rows.append({"noise_level": _num(lvl.noise_level),
                         "series": f"eq{t.equation}:{t.term}",
                         "value": _num(t.detection_percent)})
    return _csv(rows, PLOT_FIELDS)


def _csv(rows, fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def result_document(result) -> dict:
    return {
        "config": result.config.to_dict(),
        "ground_truth": [{"terms": labels, "coefficients": coeffs}
                         for labels, coeffs in zip(result.truth_labels, result.truth_coefficients)],
        "levels": [{"noise_level": lvl.noise_level, "runs": lvl.runs,
                    "success_percent": lvl.success_percent, "one_positive": lvl.one_positive,
                    "mape_percent": lvl.mape, "failed_runs": lvl.failed_runs,
                    "terms": [{"equation": t.equation, "term": t.term,
                               "true_coefficient": t.true_coefficient,
                               "detection_percent": t.detection_percent,
                               "coefficient_mean": t.mean, "coefficient_spread": t.spread}
                              for t in lvl.terms]}
                   for lvl in result.stats],
        "runs": [r.to_dict() for r in result.records],
    }


def emit_report(result, out_dir) -> dict:
    """Write all report files; returns a map of kind -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv", "json": out / "report.json",
             "plot": out / "plot.csv", "timings": out / "timings.csv"}
    paths["csv"].write_text(csv_text(result), encoding="utf-8")
    paths["plot"].write_text(plot_text(result), encoding="utf-8")
    paths["json"].write_text(json.dumps(result_document(result), indent=2) + "\n",
                             encoding="utf-8")
    timing = [{"noise_level": _num(r.level), "run": r.run, "seconds": f"{r.seconds:.3f}"}
              for r in result.records]
    paths["timings"].write_text(_csv(timing, ["noise_level", "run", "seconds"]),
                                encoding="utf-8")
    return paths


def load_result(in_dir) -> ExperimentResult:
    """Rebuild an :class:`ExperimentResult` from ``report.json`` (timings are not kept)."""
    doc = json.loads((Path(in_dir) / "report.json").read_text(encoding="utf-8"))
    records = []
    for r in doc["runs"]:
        matches = [MatchReport(m["detected"], m["coefficients"], m["success"], m["normalized"],
                               [tuple(e) for e in m["extra_terms"]]) for m in r["matches"]]
        records.append(RunRecord(r["noise_level"], r["run"], r["noise_seed"],
                                 r["evolution_seed"], r["success"], r["equations"],
                                 r["objectives"], matches, r["archive"], r["error"]))
    stats = [LevelStats(lvl["noise_level"], lvl["runs"], lvl["success_percent"],
                        lvl["one_positive"], lvl["mape_percent"], lvl["failed_runs"],
                        [TermStats(t["equation"], t["term"], t["true_coefficient"],
                                   t["detection_percent"], t["coefficient_mean"],
                                   t["coefficient_spread"]) for t in lvl["terms"]])
             for lvl in doc["levels"]]
    return ExperimentResult(ExperimentConfig.from_dict(doc["config"]),
                            [g["terms"] for g in doc["ground_truth"]],
                            [g["coefficients"] for g in doc["ground_truth"]], records, stats)


def render_report(in_dir, fmt: str) -> str:
    """Text of a previously written report in the requested format."""
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    name = {"csv": "report.csv", "json": "report.json", "plot": "plot.csv"}[fmt]
    return (Path(in_dir) / name).read_text(encoding="utf-8")
