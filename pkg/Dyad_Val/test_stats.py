"""Test suite for the surface-level statistics and their distribution kernels."""
import logging
import math
import os
import unittest

import numpy as np
from scipy import stats as sps

from src.stats.distributions import f_cdf, f_sf, studentized_range_cdf, studentized_range_sf, t_cdf, t_sf
from src.stats.surface import (
    GroupSummary, describe, games_howell, levene, load_summaries, summarize, tost_equivalence,
    welch_anova, welch_t
)
from src.utils.config import logger
from src.utils.data import load_json
from src.utils.errors import DegenerateMarginError, DegenerateVarianceError, InvalidArgumentError

logger.setLevel(logging.DEBUG)

HERE = os.path.dirname(os.path.abspath(__file__))
SUMMARY_FIXTURE = os.path.join(HERE, "fixtures", "published_summaries.json")


def _published_p(text):
    return 0.001 if text.startswith("<") else float(text)


def range_cdf_by_simulation(qs, k, df, draws=10_000_000, seed=1486, chunk=1_000_000):
    """Fraction of simulated studentized ranges of ``k`` normal means at or below each q."""
    rng = np.random.default_rng(seed)
    qs = np.asarray(qs, dtype=float)
    counts = np.zeros(qs.size)
    for _ in range(draws // chunk):
        means = rng.standard_normal((chunk, k))
        scale = np.sqrt(rng.chisquare(df, chunk) / df)
        ranges = np.ptp(means, axis=1) / scale
        counts += np.count_nonzero(ranges[:, None] <= qs, axis=0)
    return counts / draws


class TestDistributions(unittest.TestCase):
    """Student t, F and studentized range kernels against scipy and simulation."""

    def test_t_cdf_matches_scipy(self):
        for df in (1, 2.5, 10, 97.3, 950):
            for x in (-6.0, -2.1, -0.3, 0.0, 0.7, 1.96, 4.5):
                self.assertAlmostEqual(t_cdf(x, df), sps.t.cdf(x, df), delta=1e-8)
                self.assertAlmostEqual(t_sf(x, df), sps.t.sf(x, df), delta=1e-8)

    def test_t_cdf_infinite_df_is_normal(self):
        self.assertAlmostEqual(t_cdf(1.96, math.inf), sps.norm.cdf(1.96), delta=1e-12)

    def test_f_cdf_matches_scipy(self):
        for d1, d2 in ((1, 5), (3, 20.5), (6, 1486.36), (2, 1000)):
            for x in (0.01, 0.5, 1.0, 3.548, 33.3):
                self.assertAlmostEqual(f_cdf(x, d1, d2), sps.f.cdf(x, d1, d2), delta=1e-8)
                self.assertAlmostEqual(f_sf(x, d1, d2), sps.f.sf(x, d1, d2), delta=1e-8)

    def test_f_boundaries(self):
        self.assertEqual(f_cdf(0, 3, 10), 0.0)
        self.assertEqual(f_sf(0, 3, 10), 1.0)
        with self.assertRaises(InvalidArgumentError):
            f_cdf(-1, 3, 10)
        with self.assertRaises(InvalidArgumentError):
            t_cdf(1.0, 0)

    def test_studentized_range_matches_scipy(self):
        for k, df in ((2, 10), (3, 30), (7, 950), (7, 1486.36), (7, 1e6)):
            for q in (0.5, 2.0, 3.3, 4.17, 5.5):
                expected = sps.studentized_range.cdf(q, k, min(df, 1e5))
                self.assertAlmostEqual(studentized_range_cdf(q, k, df), expected, delta=2e-3,
                                       msg=f"q={q} k={k} df={df}")

    def test_studentized_range_matches_simulation(self):
        for k, df, qs in ((7, 1486.36, (2.5, 3.5, 4.17, 5.0)), (7, 1000, (3.5,)), (3, 30, (1.0, 3.486))):
            simulated = range_cdf_by_simulation(qs, k, df)
            for q, expected in zip(qs, simulated):
                self.assertAlmostEqual(studentized_range_cdf(q, k, df), expected, delta=2e-3,
                                       msg=f"q={q} k={k} df={df}")

    def test_studentized_range_known_quantile(self):
        # Upper 5% point of the range of 3 means with 30 error df is 3.486
        self.assertAlmostEqual(studentized_range_sf(3.486, 3, 30), 0.05, delta=2e-3)

    def test_studentized_range_rejects_bad_arguments(self):
        with self.assertRaises(InvalidArgumentError):
            studentized_range_cdf(1.0, 1, 10)
        with self.assertRaises(InvalidArgumentError):
            studentized_range_cdf(-1.0, 3, 10)
        self.assertEqual(studentized_range_cdf(0.0, 3, 10), 0.0)


class TestDescriptives(unittest.TestCase):
    """Descriptive statistics."""

    def test_describe_uses_sample_sd(self):
        values = [1.0, 2.0, 4.0, 7.0]
        n, mean, sd = describe(values)
        self.assertEqual(n, 4)
        self.assertAlmostEqual(mean, 3.5)
        self.assertAlmostEqual(sd, float(np.std(values, ddof=1)))

    def test_constant_sample_has_zero_sd(self):
        self.assertEqual(describe([2.5, 2.5, 2.5]), (3, 2.5, 0.0))

    def test_describe_rejects_short_or_bad_samples(self):
        with self.assertRaises(InvalidArgumentError):
            describe([1.0])
        with self.assertRaises(InvalidArgumentError):
            describe([1.0, float("nan")])

    def test_summary_validation(self):
        with self.assertRaises(InvalidArgumentError):
            GroupSummary("g", "tip_change", 1, 0.0, 1.0)
        with self.assertRaises(InvalidArgumentError):
            GroupSummary("g", "nonsense", 10, 0.0, 1.0)
        with self.assertRaises(InvalidArgumentError):
            GroupSummary("g", "diff", 10, 0.0, -1.0)


class TestRawSampleTests(unittest.TestCase):
    """Tests computed from raw samples, checked against scipy."""

    def setUp(self):
        rng = np.random.default_rng(7)
        self.samples = [rng.normal(0.0, 1.0, 40), rng.normal(0.3, 1.8, 55), rng.normal(-0.2, 1.2, 35)]

    def test_levene_mean_matches_scipy(self):
        result = levene(self.samples, center="mean", variable="joint")
        w, p = sps.levene(*self.samples, center="mean")
        self.assertAlmostEqual(result.w_stat, w, places=8)
        self.assertAlmostEqual(result.p_value, p, places=8)
        self.assertEqual((result.df1, result.df2), (2, 127))

    def test_levene_median_matches_scipy(self):
        result = levene(self.samples, center="median")
        w, p = sps.levene(*self.samples, center="median")
        self.assertAlmostEqual(result.w_stat, w, places=8)
        self.assertAlmostEqual(result.p_value, p, places=8)

    def test_levene_rejects_unknown_center(self):
        with self.assertRaises(InvalidArgumentError):
            levene(self.samples, center="trimmed")

    def test_levene_null_distribution(self):
        rng = np.random.default_rng(2024)
        p_values = [levene([rng.normal(0, 1, 30) for _ in range(3)]).p_value for _ in range(200)]
        self.assertGreater(sps.kstest(p_values, "uniform").pvalue, 0.001)

    def test_welch_t_matches_scipy(self):
        a, b = self.samples[0], self.samples[1]
        t, df, p = welch_t(summarize("a", "diff", a), summarize("b", "diff", b))
        expected = sps.ttest_ind(a, b, equal_var=False)
        self.assertAlmostEqual(t, expected.statistic, places=8)
        self.assertAlmostEqual(p, expected.pvalue, places=8)
        self.assertGreater(df, 0)

    def test_welch_anova_two_groups_is_squared_welch_t(self):
        a = summarize("a", "diff", self.samples[0])
        b = summarize("b", "diff", self.samples[1])
        t, df, p = welch_t(a, b)
        result = welch_anova([a, b])
        self.assertAlmostEqual(result.f_stat, t * t, places=8)
        self.assertAlmostEqual(result.df2, df, places=6)
        self.assertAlmostEqual(result.p_value, p, places=6)


class TestPublishedSurfaceTables(unittest.TestCase):
    """Reproduction of the published surface tables from group summaries."""

    def setUp(self):
        self.summaries = load_summaries(SUMMARY_FIXTURE)
        self.expected = load_json(SUMMARY_FIXTURE)["expected"]

    def _by_group(self, variable):
        return {s.group_id: s for s in self.summaries[variable]}

    def test_fixture_loads_every_variable(self):
        self.assertEqual(sorted(self.summaries), ["diff", "joint", "tip_change"])
        self.assertEqual([s.n for s in self.summaries["joint"]], [477] + [480] * 6)

    def test_tost_table(self):
        # Summary inputs are rounded to two decimals; bounds drift up to 0.0033 from the published ones
        for row in self.expected["tost"]:
            groups = self._by_group(row["variable"])
            result = tost_equivalence(groups[row["group_id"]], groups["human"], margin_factor=0.2, alpha=0.05)
            label = f"{row['group_id']}/{row['variable']}"
            self.assertAlmostEqual(result.upper_bound, row["bound"], delta=0.004, msg=label)
            self.assertAlmostEqual(result.lower_bound, -row["bound"], delta=0.004, msg=label)
            tolerance = 0.02 if abs(row["p_value"] - 0.05) < 0.03 else 0.01
            self.assertAlmostEqual(result.p_value, row["p_value"], delta=tolerance, msg=label)
            self.assertEqual(result.is_equivalent, row["is_equivalent"], msg=label)
            self.assertEqual(result.reference_id, "human")

    def test_welch_anova_table(self):
        for variable, expected in self.expected["welch"].items():
            result = welch_anova(self.summaries[variable])
            self.assertEqual(result.df1, 6)
            self.assertAlmostEqual(result.f_stat / expected["f_stat"], 1.0, delta=0.05, msg=variable)
            self.assertAlmostEqual(result.df2 / expected["df2"], 1.0, delta=0.05, msg=variable)
            self.assertAlmostEqual(result.partial_eta_sq, expected["partial_eta_sq"], delta=0.002, msg=variable)
        self.assertLess(welch_anova(self.summaries["diff"]).p_value, 0.001)
        self.assertGreater(welch_anova(self.summaries["joint"]).p_value, 0.05)

    def test_games_howell_table(self):
        order = self.expected["pair_order"]
        for variable, expected in self.expected["games_howell"].items():
            groups = self._by_group(variable)
            results = games_howell([groups[g] for g in order])
            self.assertEqual(len(results), 21)
            for result, (diff, p_text) in zip(results, expected):
                label = f"{variable}: {result.group_a} vs {result.group_b}"
                self.assertAlmostEqual(result.mean_diff, diff, delta=0.011, msg=label)
                self.assertEqual(result.significant(0.05), _published_p(p_text) < 0.05, msg=label)

    def test_games_howell_named_p_value(self):
        tip_change = self._by_group("tip_change")
        first = games_howell([tip_change[g] for g in self.expected["pair_order"]])[0]
        self.assertEqual((first.group_a, first.group_b), ("GPT-4.1", "GPT-4o"))
        self.assertAlmostEqual(first.mean_diff, -1.02, delta=1e-9)
        self.assertAlmostEqual(first.p_value, 0.008, delta=0.004)

    def test_games_howell_pair_order(self):
        results = games_howell(self.summaries["joint"][:3])
        self.assertEqual([(r.group_a, r.group_b) for r in results],
                         [("human", "GPT-4o"), ("human", "GPT-4.1"), ("GPT-4o", "GPT-4.1")])


class TestDegenerateInputs(unittest.TestCase):
    """Degenerate variances and margins."""

    def test_zero_variance_group_is_rejected(self):
        flat = GroupSummary("flat", "diff", 30, 0.0, 0.0)
        other = GroupSummary("other", "diff", 30, 0.5, 1.0)
        with self.assertRaises(DegenerateVarianceError):
            welch_anova([flat, other])
        with self.assertRaises(DegenerateVarianceError):
            games_howell([flat, other])

    def test_zero_pooled_sd_has_no_margin(self):
        a = GroupSummary("a", "joint", 30, 1.0, 0.0)
        b = GroupSummary("b", "joint", 30, 1.0, 0.0)
        with self.assertRaises(DegenerateMarginError):
            tost_equivalence(a, b)

    def test_tost_argument_checks(self):
        a = GroupSummary("a", "joint", 30, 0.0, 1.0)
        b = GroupSummary("b", "joint", 30, 0.1, 1.0)
        with self.assertRaises(InvalidArgumentError):
            tost_equivalence(a, b, margin_factor=0.0)
        with self.assertRaises(InvalidArgumentError):
            tost_equivalence(a, b, se_mode="exact")
        with self.assertRaises(InvalidArgumentError):
            tost_equivalence(a, GroupSummary("b", "diff", 30, 0.1, 1.0))

    def test_pooled_tost_uses_pooled_df(self):
        a = GroupSummary("a", "joint", 30, 0.0, 1.0)
        b = GroupSummary("b", "joint", 40, 0.05, 2.0)
        result = tost_equivalence(a, b, se_mode="pooled")
        self.assertEqual(result.df, 68.0)
        self.assertEqual(result.se_mode, "pooled")

    def test_too_few_groups(self):
        with self.assertRaises(InvalidArgumentError):
            welch_anova([GroupSummary("a", "joint", 30, 0.0, 1.0)])


if __name__ == '__main__':
    unittest.main()
