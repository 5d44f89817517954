"""Report generation: Markdown, long-format CSV and SVG histogram panels."""
import csv
import io
import os
from typing import Any, Dict, Iterable, List, Sequence

from ..utils.config import logger
from ..utils.errors import InvalidArgumentError
from ..visualization.plots import plot_satisfaction_histograms
from .csv_reports import (
    DESCRIPTIVE_COLUMNS, INDIRECT_COLUMNS, PAIRWISE_COLUMNS, PATH_COLUMNS, TOST_COLUMNS,
    VARIABLE_LABELS, descriptive_rows, indirect_rows, pairwise_rows, path_rows, provenance_lines, tost_rows,
    write_report_tables
)
from .validation import HISTOGRAM_EDGES, PATTERN_LENGTH, PATTERN_NAMES, ValidationReport, pattern_label

REPORT_FORMATS = ("md", "csv", "svg")
LONG_COLUMNS = ["section", "group_id", "variable", "key", "value"]


def _md_table(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> List[str]:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return lines + [""]


def _fmt(value, digits=4) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def render_markdown(report: ValidationReport) -> str:
    """Human-readable report with the published table layouts."""
    provenance = report.config.get("provenance", {})
    lines = ["# Dyadic validation report", ""]
    lines += [f"- config_hash: `{provenance.get('config_hash', '')}`",
              f"- master_seed: {provenance.get('master_seed', '')}",
              f"- code_version: {provenance.get('code_version', '')}",
              f"- baseline: {report.baseline_id}",
              f"- groups: {', '.join(report.groups)}", ""]

    if report.descriptives:
        lines += ["## Descriptive Statistics", ""]
        lines += _md_table(DESCRIPTIVE_COLUMNS, descriptive_rows(report.descriptives, report.groups))

    lines += ["## Homogeneity of Variance (Levene)", ""]
    if report.levene:
        lines += _md_table(["DV", "W", "df1", "df2", "p-value", "Center"],
                           [[VARIABLE_LABELS[v], _fmt(r.w_stat, 3), r.df1, r.df2, _fmt(r.p_value), r.center]
                            for v, r in report.levene.items()])
    else:
        lines += ["Skipped: Levene's test needs raw values and the analysis ran on group summaries.", ""]

    if report.welch:
        lines += ["## Welch ANOVA", ""]
        lines += _md_table(["DV", "F", "df1", "df2", "p-value", "Partial eta squared"],
                           [[VARIABLE_LABELS[v], _fmt(r.f_stat, 3), r.df1, _fmt(r.df2, 2), _fmt(r.p_value),
                             _fmt(r.partial_eta_sq)] for v, r in report.welch.items()])

    if report.games_howell:
        lines += ["## Games-Howell Comparisons", ""]
        for v, results in report.games_howell.items():
            lines += [f"### {VARIABLE_LABELS[v]}", ""]
            lines += _md_table(PAIRWISE_COLUMNS, pairwise_rows(results))

    if report.tost:
        margin = report.config.get("margin_factor", 0.2)
        lines += [f"## Equivalence Tests (TOST, margin +/-{margin} SD)", ""]
        lines += _md_table(TOST_COLUMNS, tost_rows(report.tost))

    if report.models:
        lines += ["## Path Models", ""]
        for g, model in report.models.items():
            lines += [f"### {g} (n = {model.n})", ""]
            lines += _md_table(PATH_COLUMNS, path_rows(model))

    if report.indirect:
        lines += ["## Indirect Effects", ""]
        lines += _md_table(INDIRECT_COLUMNS, indirect_rows(report.indirect, report.groups))

    if report.fidelity:
        lines += ["## Process Fidelity", ""]
        columns = ["Pathway", report.baseline_id] + list(report.fidelity)
        rows = []
        for i, name in enumerate(PATTERN_NAMES):
            row = [pattern_label(name)]
            for g in [report.baseline_id] + list(report.fidelity):
                row.append("sig" if report.patterns[g].entries[i].significant else "ns")
            rows.append(row)
        rows.append(["Matches", "-"] + [f"{f.matches}/{PATTERN_LENGTH}" for f in report.fidelity.values()])
        lines += _md_table(columns, rows)

    lines += ["## Rankings", ""]
    rows = [[rank, g, f"{score}/3"] for rank, g, score in report.surface_ranking]
    if rows:
        lines += ["### Surface equivalence (measures achieved)", ""]
        lines += _md_table(["Rank", "AI Model", "Measures"], rows)
    rows = [[rank, g, f"{score}/{PATTERN_LENGTH}"] for rank, g, score in report.process_ranking]
    if rows:
        lines += ["### Process fidelity (pathway matches)", ""]
        lines += _md_table(["Rank", "AI Model", "Matches"], rows)
    if not report.surface_ranking and not report.process_ranking:
        lines += ["No rankings: neither equivalence tests nor path models were available.", ""]

    lines += ["## Sign Disagreements", ""]
    lines += [f"- {w}" for w in report.sign_warnings] or ["None."]
    lines += ["", "## Configuration", ""]
    for key in ("alpha", "margin_factor", "tost_se", "bootstrap_B", "se_convention", "master_seed",
                "centering_scope"):
        if key in report.config:
            lines.append(f"- {key}: {report.config[key]}")
    return "\n".join(lines) + "\n"


def long_rows(report: ValidationReport) -> List[List[Any]]:
    """Every reported number as (section, group_id, variable, key, value)."""
    rows: List[List[Any]] = []
    for v, summaries in report.descriptives.items():
        for s in summaries:
            rows += [["descriptives", s.group_id, v, key, _fmt(getattr(s, key))] for key in ("n", "mean", "sd")]
    for v, r in report.levene.items():
        rows += [["levene", "", v, key, _fmt(getattr(r, key))] for key in ("w_stat", "df1", "df2", "p_value")]
    for v, r in report.welch.items():
        rows += [["welch", "", v, key, _fmt(getattr(r, key))]
                 for key in ("f_stat", "df1", "df2", "p_value", "partial_eta_sq")]
    for v, results in report.games_howell.items():
        for r in results:
            pair = f"{r.group_a}|{r.group_b}"
            rows += [["games_howell", pair, v, key, _fmt(getattr(r, key))]
                     for key in ("mean_diff", "se", "q_stat", "df", "p_value")]
    for r in report.tost:
        rows += [["tost", r.group_id, r.variable, key, _fmt(getattr(r, key))]
                 for key in ("mean_diff", "lower_bound", "upper_bound", "p_value", "is_equivalent")]
    for g, count in report.measures.items():
        rows.append(["measures", g, "", "equivalent", count])
    for g, model in report.models.items():
        for p in model.rows():
            rows += [["paths", g, f"{p.lhs}{p.op}{p.rhs}", key, _fmt(getattr(p, key))]
                     for key in ("estimate", "se", "p_value")]
    for g, effects in report.indirect.items():
        for effect, e in effects.items():
            rows += [["indirect", g, effect, key, _fmt(getattr(e, key))]
                     for key in ("point", "bootstrap_se", "ci_low", "ci_high", "p_value", "significant")]
    for g, pattern in report.patterns.items():
        rows += [["pattern", g, e.name, "significant", _fmt(e.significant)] for e in pattern.entries]
    for g, f in report.fidelity.items():
        rows.append(["fidelity", g, "", "matches", f.matches])
    rows += [["ranking_surface", g, "", "rank", rank] for rank, g, _ in report.surface_ranking]
    rows += [["ranking_process", g, "", "rank", rank] for rank, g, _ in report.process_ranking]
    for g, counts in report.histograms.items():
        for v, bins in counts.items():
            edges = HISTOGRAM_EDGES[v]
            rows += [["histogram", g, v, f"[{edges[i]:g},{edges[i + 1]:g})", c] for i, c in enumerate(bins)]
    return rows


def render_long_csv(report: ValidationReport) -> str:
    buffer = io.StringIO()
    for line in provenance_lines(report.config.get("provenance", {}), "Validation report (long format)"):
        buffer.write(line + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LONG_COLUMNS)
    writer.writerows(long_rows(report))
    return buffer.getvalue()


def _write_text(path: str, text: str) -> str:
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            f.write(text)
    except OSError as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        raise
    return path


def emit_report(report: ValidationReport, output_dir, formats: Sequence[str] = REPORT_FORMATS) -> Dict[str, str]:
    """Write the report files; identical reports give identical bytes.

    Args:
        report: Complete validation report
        output_dir: Target directory (created when missing)
        formats: Any of 'md', 'csv', 'svg'

    Returns:
        dict: format -> written path

    Raises:
        OSError: Output path not writable
    """
    unknown = sorted(set(formats) - set(REPORT_FORMATS))
    if unknown:
        raise InvalidArgumentError(f"unknown report formats {unknown}")
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create report directory {output_dir}: {str(e)}")
        raise
    written = {}
    if "md" in formats:
        written["md"] = _write_text(os.path.join(output_dir, "report.md"), render_markdown(report))
    if "csv" in formats:
        written["csv"] = _write_text(os.path.join(output_dir, "report.csv"), render_long_csv(report))
        write_report_tables(report, os.path.join(output_dir, "tables"))
    if "svg" in formats:
        provenance = report.config.get("provenance", {})
        description = " ".join(f"{k}={provenance[k]}" for k in sorted(provenance))
        written["svg"] = plot_satisfaction_histograms(report.histograms, HISTOGRAM_EDGES,
                                                      os.path.join(output_dir, "histograms.svg"),
                                                      groups=report.groups, description=description)
    logger.info(f"Report written to {output_dir}: {', '.join(sorted(written))}")
    return written
