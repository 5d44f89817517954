"""Test suite for dual validation scoring and report emission."""
import filecmp
import json
import logging
import os
import re
import tempfile
import unittest

from src.paths.bootstrap import load_published_paths
from src.reporting.report_generator import emit_report, long_rows, render_markdown
from src.reporting.validation import (
    HISTOGRAM_EDGES, PATTERN_LENGTH, PATTERN_NAMES, PatternEntry, PatternVector, ValidationReport,
    competition_ranks, equivalence_summary, fidelity_score, histogram_counts, score_processes, shortfalls
)
from src.stats.surface import games_howell, load_summaries, tost_equivalence, welch_anova
from src.utils.config import logger
from src.utils.data import load_json
from src.utils.errors import InvalidArgumentError
from src.visualization.plots import panel_id

logger.setLevel(logging.DEBUG)

HERE = os.path.dirname(os.path.abspath(__file__))
SUMMARY_FIXTURE = os.path.join(HERE, "fixtures", "published_summaries.json")
PATH_FIXTURE = os.path.join(HERE, "fixtures", "published_paths.json")


class RawRecord:
    """Minimal outcome record exposing raw satisfaction values."""

    def __init__(self, group_id, joint, diff):
        self.group_id = group_id
        self._values = {"joint": joint, "diff": diff}

    def raw(self, variable):
        return self._values[variable]


def published_tost(summaries, baseline="human"):
    results = []
    for variable, rows in summaries.items():
        by_group = {s.group_id: s for s in rows}
        for group_id, summary in by_group.items():
            if group_id != baseline:
                results.append(tost_equivalence(summary, by_group[baseline]))
    return results


def published_report():
    """A full report assembled from the published summaries and path tables."""
    summaries = load_summaries(SUMMARY_FIXTURE)
    groups = [s.group_id for s in summaries["joint"]]
    ai_groups = groups[1:]
    tost = published_tost(summaries)
    equivalence = equivalence_summary(tost, ai_groups)
    models, indirect = load_published_paths(PATH_FIXTURE)
    patterns, fidelity, ranking, warnings = score_processes(models, indirect, "human", groups=groups)
    histograms = {g: {"joint": [i % 4 for i in range(13)], "diff": [1] * 13} for g in groups}
    config = {"alpha": 0.05, "margin_factor": 0.2, "bootstrap_B": 5000,
              "provenance": {"config_hash": "0123456789abcdef", "master_seed": 42, "code_version": "test"}}
    return ValidationReport(
        baseline_id="human", groups=groups, config=config, descriptives=summaries,
        welch={v: welch_anova(rows) for v, rows in summaries.items()},
        games_howell={v: games_howell(rows) for v, rows in summaries.items()},
        tost=tost, measures=equivalence.measures, surface_ranking=equivalence.ranking,
        models=models, indirect=indirect, patterns=patterns, fidelity=fidelity,
        process_ranking=ranking, sign_warnings=warnings, histograms=histograms,
    )


def pattern(group_id, significant, signs=None):
    signs = signs or [1] * PATTERN_LENGTH
    return PatternVector(group_id, tuple(PatternEntry(name, s, sign)
                                         for name, s, sign in zip(PATTERN_NAMES, significant, signs)))


class TestRanking(unittest.TestCase):
    """Competition ranking."""

    def test_ties_share_rank_and_next_rank_skips(self):
        ranks = competition_ranks([("a", 2), ("b", 3), ("c", 2), ("d", 1)])
        self.assertEqual(ranks, [(1, "b", 3), (2, "a", 2), (2, "c", 2), (4, "d", 1)])

    def test_all_tied(self):
        self.assertEqual([r[0] for r in competition_ranks([("x", 5), ("y", 5), ("z", 5)])], [1, 1, 1])

    def test_empty(self):
        self.assertEqual(competition_ranks([]), [])


class TestSurfaceEquivalence(unittest.TestCase):
    """Equivalence counts from the published summaries."""

    def setUp(self):
        self.summaries = load_summaries(SUMMARY_FIXTURE)
        self.expected = load_json(SUMMARY_FIXTURE)["expected"]
        self.ai_groups = [s.group_id for s in self.summaries["joint"]][1:]

    def test_measures_and_ranking(self):
        summary = equivalence_summary(published_tost(self.summaries), self.ai_groups)
        self.assertEqual(summary.measures, self.expected["measures"])
        self.assertEqual(summary.ranking[0], (1, "GPT-4o", 3))
        self.assertEqual([r[0] for r in summary.ranking], [1, 2, 2, 4, 4, 4])
        self.assertEqual([r[1] for r in summary.ranking[1:3]], ["Sonnet 3.5", "Mistral Large 2"])
        self.assertEqual(list(summary.table), self.ai_groups)

    def test_incomplete_grid_is_rejected(self):
        results = [r for r in published_tost(self.summaries)
                   if not (r.group_id == "Sonnet 4" and r.variable == "diff")]
        with self.assertRaises(InvalidArgumentError):
            equivalence_summary(results, self.ai_groups)

    def test_duplicate_cell_is_rejected(self):
        results = published_tost(self.summaries)
        with self.assertRaises(InvalidArgumentError):
            equivalence_summary(results + results[:1], self.ai_groups)

    def test_no_results(self):
        with self.assertRaises(InvalidArgumentError):
            equivalence_summary([])


class TestProcessFidelity(unittest.TestCase):
    """Pathway patterns and fidelity from the published path tables."""

    def setUp(self):
        self.models, self.indirect = load_published_paths(PATH_FIXTURE)
        self.expected = load_json(PATH_FIXTURE)["expected"]
        self.groups = ["human", "GPT-4o", "GPT-4.1", "Sonnet 3.5", "Sonnet 4", "Mistral Large 2",
                       "Mistral Medium 3"]

    def test_published_fidelity(self):
        patterns, fidelity, ranking, _ = score_processes(self.models, self.indirect, "human", groups=self.groups)
        self.assertEqual({g: f.matches for g, f in fidelity.items()}, self.expected["fidelity"])
        self.assertEqual([list(r) for r in ranking], self.expected["process_ranking"])
        self.assertEqual(len(patterns), 7)
        for p in patterns.values():
            self.assertEqual(len(p.entries), PATTERN_LENGTH)

    def test_sign_disagreements_are_reported_not_scored(self):
        _, fidelity, _, warnings = score_processes(self.models, self.indirect, "human", groups=self.groups)
        self.assertEqual(fidelity["GPT-4.1"].sign_disagreements, ("joint~tip_change",))
        self.assertEqual(fidelity["Sonnet 3.5"].sign_disagreements, ("diff~tip_change",))
        self.assertEqual(fidelity["GPT-4o"].sign_disagreements, ())
        self.assertEqual(len(warnings), 2)
        self.assertTrue(warnings[0].startswith("GPT-4.1: Joint satisfaction"))

    def test_missing_baseline_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            score_processes(self.models, self.indirect, "nobody")

    def test_missing_indirect_effect_is_rejected(self):
        indirect = dict(self.indirect)
        indirect["GPT-4o"] = {"indirect_joint": self.indirect["GPT-4o"]["indirect_joint"]}
        with self.assertRaises(InvalidArgumentError):
            score_processes(self.models, indirect, "human")

    def test_fidelity_counts_agreement_on_significance(self):
        human = pattern("human", [True] * 5 + [False] * 5)
        ai = pattern("ai", [True] * 3 + [False] * 7)
        score = fidelity_score(ai, human)
        self.assertEqual(score.matches, 8)
        self.assertEqual(score.flags, (True,) * 3 + (False,) * 2 + (True,) * 5)

    def test_identical_patterns_score_full(self):
        human = pattern("human", [True, False] * 5)
        self.assertEqual(fidelity_score(pattern("ai", [True, False] * 5), human).matches, PATTERN_LENGTH)

    def test_pattern_requires_canonical_entries(self):
        with self.assertRaises(InvalidArgumentError):
            PatternVector("g", tuple(PatternEntry(n, True, 1) for n in PATTERN_NAMES[:-1]))


class TestReportHelpers(unittest.TestCase):
    """Histogram counts and threshold checks."""

    def test_histogram_counts_use_raw_edges(self):
        records = [RawRecord("a", 1.0, -6.0), RawRecord("a", 7.0, 6.0), RawRecord("a", 4.0, 0.0),
                   RawRecord("other", 4.0, 0.0)]
        counts = histogram_counts(records, ["a", "empty"])
        self.assertEqual(list(counts), ["a"])
        joint, diff = counts["a"]["joint"], counts["a"]["diff"]
        self.assertEqual(len(joint), len(HISTOGRAM_EDGES["joint"]) - 1)
        self.assertEqual((joint[0], joint[6], joint[-1], sum(joint)), (1, 1, 1, 3))
        self.assertEqual((diff[0], diff[6], diff[-1], sum(diff)), (1, 1, 1, 3))

    def test_shortfalls(self):
        report = published_report()
        self.assertEqual(shortfalls(report), [])
        messages = shortfalls(report, min_measures=2, min_fidelity=8)
        self.assertIn("GPT-4o: fidelity 5/10 < 8", messages)
        self.assertIn("Sonnet 4: 1 equivalent measures < 2", messages)
        self.assertFalse(any(m.startswith("human") for m in messages))


class TestReportEmission(unittest.TestCase):
    """Markdown, long CSV, tables and SVG."""

    @classmethod
    def setUpClass(cls):
        cls.report = published_report()

    def test_dict_round_trip(self):
        data = json.loads(json.dumps(self.report.to_dict()))
        restored = ValidationReport.from_dict(data)
        self.assertEqual(json.loads(json.dumps(restored.to_dict())), data)
        self.assertEqual(restored.ai_groups, self.report.ai_groups)
        self.assertEqual(render_markdown(restored), render_markdown(self.report))

    def test_markdown_sections(self):
        text = render_markdown(self.report)
        for heading in ("## Welch ANOVA", "## Equivalence Tests", "## Path Models", "## Process Fidelity",
                        "## Rankings", "### Surface equivalence", "### Process fidelity"):
            self.assertIn(heading, text)
        self.assertIn("Skipped: Levene", text)
        self.assertIn("| 1 | GPT-4o | 3/3 |", text)
        self.assertIn("| 6 | GPT-4o | 5/10 |", text)
        self.assertIn("config_hash: `0123456789abcdef`", text)

    def test_long_rows_cover_rankings(self):
        rows = long_rows(self.report)
        sections = {r[0] for r in rows}
        for section in ("descriptives", "welch", "games_howell", "tost", "paths", "indirect", "pattern",
                        "fidelity", "ranking_surface", "ranking_process", "histogram"):
            self.assertIn(section, sections)
        self.assertIn(["fidelity", "GPT-4.1", "", "matches", 8], rows)

    def test_emission_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            written = emit_report(self.report, first)
            emit_report(self.report, second)
            self.assertEqual(sorted(written), ["csv", "md", "svg"])
            for name in ("report.md", "report.csv", "histograms.svg"):
                self.assertTrue(filecmp.cmp(os.path.join(first, name), os.path.join(second, name), shallow=False),
                                msg=name)
            tables = sorted(os.listdir(os.path.join(first, "tables")))
            self.assertEqual(tables, sorted(os.listdir(os.path.join(second, "tables"))))
            for name in ("tost.csv", "rankings.csv", "indirect_effects.csv", "welch_anova.csv",
                         "games_howell_joint.csv", "paths_GPT-4.1.csv", "paths_Sonnet_3.5.csv"):
                self.assertIn(name, tables)
            self.assertNotIn("levene.csv", tables)
            with open(os.path.join(first, "tables", "tost.csv"), encoding='utf-8') as f:
                lines = f.read().splitlines()
            self.assertEqual(lines[1], "# config_hash: 0123456789abcdef")
            self.assertEqual(len([l for l in lines if not l.startswith("#")]), 1 + 18)

    def test_svg_panels_are_addressable(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = emit_report(self.report, tmp, formats=("svg",))["svg"]
            with open(path, encoding='utf-8') as f:
                svg = f.read()
        ids = set(re.findall(r'id="(panel-[^"]+)"', svg))
        self.assertEqual(len(ids), 14)
        self.assertIn(panel_id("Sonnet 3.5", "diff"), ids)
        self.assertNotIn("<dc:date>", svg)

    def test_unknown_format(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(InvalidArgumentError):
                emit_report(self.report, tmp, formats=("md", "pdf"))


if __name__ == '__main__':
    unittest.main()
