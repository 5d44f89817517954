"""CSV tables in the published layouts, each prefixed by '#' provenance lines."""
import csv
import os
from typing import Any, Dict, Iterable, List, Sequence

from ..dataset.records import VARIABLES
from ..paths.path_model import LABELS
from ..utils.config import logger
from ..utils.data import safe_filename

VARIABLE_LABELS = {"tip_change": "Tip change", "joint": "Joint satisfaction", "diff": "Differential satisfaction"}
SHORT_LABELS = {"tip_change": "Tip Change", "joint": "Joint Satisfaction", "diff": "Differential Satisfaction"}

DESCRIPTIVE_COLUMNS = ["Model"] + [f"{SHORT_LABELS[v]} {s}" for v in VARIABLES for s in ("M", "SD")] + ["N"]
TOST_COLUMNS = ["Comparison", "DV", "Lower Bound", "Upper Bound", "p-value", "Is Equivalent"]
PAIRWISE_COLUMNS = ["Model A", "Model B", "Difference", "p-value"]
PATH_COLUMNS = ["LHS", "Op", "RHS", "Estimate", "Std. Error", "p-value"]
INDIRECT_COLUMNS = ["Group", "Effect", "Estimate", "Bootstrap SE", "CI 2.5%", "CI 97.5%", "p-value", "Significant"]
LEVENE_COLUMNS = ["DV", "W", "df1", "df2", "p-value", "Center"]
WELCH_COLUMNS = ["DV", "F", "df1", "df2", "p-value", "Partial Eta Squared"]
RANKING_COLUMNS = ["Criterion", "Rank", "AI Model", "Score"]
EFFECT_LABELS = {"indirect_joint": "Indirect_joint", "indirect_diff": "Indirect_diff"}


def provenance_lines(provenance: Dict[str, Any], title: str) -> List[str]:
    return [
        f"# {title}",
        f"# config_hash: {provenance.get('config_hash', '')}",
        f"# master_seed: {provenance.get('master_seed', '')}",
        f"# code_version: {provenance.get('code_version', '')}",
    ]


def write_table(path, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                provenance: Dict[str, Any]) -> str:
    """Write ``rows`` under a '#'-prefixed provenance header and a column line."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            for line in provenance_lines(provenance, title):
                f.write(line + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow(row)
    except OSError as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        raise
    logger.debug(f"{title} written to {path}")
    return path


def _num(value, digits=4) -> str:
    return f"{value:.{digits}f}"


def descriptive_rows(descriptives: Dict[str, list], groups: Sequence[str]) -> List[List[str]]:
    by_group = {v: {s.group_id: s for s in rows} for v, rows in descriptives.items()}
    rows = []
    for g in groups:
        if not all(g in by_group.get(v, {}) for v in VARIABLES):
            continue
        row = [g]
        for v in VARIABLES:
            row += [_num(by_group[v][g].mean, 2), _num(by_group[v][g].sd, 2)]
        rows.append(row + [str(by_group[VARIABLES[0]][g].n)])
    return rows


def tost_rows(tost: Iterable) -> List[List[str]]:
    return [[f"{r.group_id} vs. {r.reference_id}", VARIABLE_LABELS[r.variable], _num(r.lower_bound),
             _num(r.upper_bound), _num(r.p_value), str(r.is_equivalent)] for r in tost]


def pairwise_rows(results: Iterable) -> List[List[str]]:
    return [[r.group_a, r.group_b, _num(r.mean_diff, 3), _num(r.p_value, 3)] for r in results]


def path_rows(model) -> List[List[str]]:
    return [[LABELS[p.lhs], p.op, LABELS[p.rhs], _num(p.estimate, 3), _num(p.se, 3), _num(p.p_value, 3)]
            for p in model.rows()]


def indirect_rows(indirect: Dict[str, Dict[str, Any]], groups: Sequence[str]) -> List[List[str]]:
    rows = []
    for g in groups:
        for effect, label in EFFECT_LABELS.items():
            e = indirect.get(g, {}).get(effect)
            if e is None:
                continue
            rows.append([g, label, _num(e.point), _num(e.bootstrap_se), _num(e.ci_low), _num(e.ci_high),
                         _num(e.p_value), "Yes" if e.significant else "No"])
    return rows


def write_report_tables(report, output_dir) -> Dict[str, str]:
    """Write every table of ``report`` that has content.

    Returns:
        dict: table name -> path
    """
    provenance = report.config.get("provenance", {})
    paths = {}

    def emit(name, title, columns, rows):
        if rows:
            paths[name] = write_table(os.path.join(output_dir, f"{name}.csv"), title, columns, rows, provenance)

    emit("descriptives", "Descriptive statistics (mean-centered)", DESCRIPTIVE_COLUMNS,
         descriptive_rows(report.descriptives, report.groups))
    emit("levene", "Levene tests of equal variances", LEVENE_COLUMNS,
         [[VARIABLE_LABELS[v], _num(r.w_stat, 3), r.df1, r.df2, _num(r.p_value), r.center]
          for v, r in report.levene.items()])
    emit("welch_anova", "Welch ANOVA", WELCH_COLUMNS,
         [[VARIABLE_LABELS[v], _num(r.f_stat, 3), r.df1, _num(r.df2, 2), _num(r.p_value), _num(r.partial_eta_sq)]
          for v, r in report.welch.items()])
    for v, results in report.games_howell.items():
        emit(f"games_howell_{v}", f"Games-Howell comparisons: {VARIABLE_LABELS[v]}", PAIRWISE_COLUMNS,
             pairwise_rows(results))
    emit("tost", f"TOST equivalence vs. {report.baseline_id} "
         f"(+/-{report.config.get('margin_factor', 0.2)} SD)", TOST_COLUMNS, tost_rows(report.tost))
    for g, model in report.models.items():
        emit(f"paths_{safe_filename(g)}", f"Path estimates: {g}", PATH_COLUMNS, path_rows(model))
    emit("indirect_effects", f"Bootstrapped indirect effects (B={report.config.get('bootstrap_B')}, "
         f"bias-corrected percentile, sign-proportion p)", INDIRECT_COLUMNS, indirect_rows(report.indirect, report.groups))
    rankings = [["surface", rank, g, score] for rank, g, score in report.surface_ranking]
    rankings += [["process", rank, g, score] for rank, g, score in report.process_ranking]
    emit("rankings", "Model rankings", RANKING_COLUMNS, rankings)
    logger.info(f"Wrote {len(paths)} tables to {output_dir}")
    return paths
