"""Test suite for the path model and the bootstrap of its indirect effects."""
import logging
import os
import unittest

import numpy as np

from src.dataset.records import CenteringSpec, DyadRecord, center_dataset, derive_outcomes
from src.agents.parsing import CustomerResult, TipDecision, WorkerResult
from src.design.experiment_design import enumerate_conditions
from src.paths.bootstrap import MIN_RESAMPLES, bootstrap_indirect, load_published_paths
from src.paths.path_model import (
    EQUATIONS, INDIRECT_EFFECTS, PATHS, SO_X_ADJ, TC_X_VIS, VARIANCE_ORDER, GroupPathModel, PathData, PathEstimate,
    PredictorCoding, build_path_data, fit_group_paths, fit_ols, indirect_effects, model_from_dict,
    predictor_means, published_p, simulate_path_data
)
from src.utils.config import DEFAULT_CONFIG, logger
from src.utils.errors import (
    BootstrapAbortError, CodingError, CollinearityError, DegenerateVarianceError, InvalidArgumentError
)

logger.setLevel(logging.DEBUG)

HERE = os.path.dirname(os.path.abspath(__file__))
PATHS_FIXTURE = os.path.join(HERE, "fixtures", "published_paths.json")
CODING = PredictorCoding.from_dict(DEFAULT_CONFIG["coding"])


def make_model(first=0.6, joint_moderation=0.0, diff_moderation=-0.2, group_id="sim"):
    """Path model with the given moderated paths and fixed remaining paths."""
    values = {
        ("tip_change", "service_outcome"): 1.0,
        ("tip_change", SO_X_ADJ): first,
        ("joint", "tip_change"): 0.05,
        ("joint", TC_X_VIS): joint_moderation,
        ("joint", "service_outcome"): 1.5,
        ("diff", "tip_change"): 0.06,
        ("diff", TC_X_VIS): diff_moderation,
        ("diff", "service_outcome"): 0.9,
    }
    paths = tuple(PathEstimate(lhs, "~", rhs, values[(lhs, rhs)], 0.1, 0.5) for lhs, rhs in PATHS)
    residual = {"tip_change": 10.0, "diff": 2.0, "joint": 1.0}
    variances = tuple(PathEstimate(v, "~~", v, residual[v], 0.5, 0.001) for v in VARIANCE_ORDER)
    return GroupPathModel(group_id, 480, paths, variances)


class TestOls(unittest.TestCase):
    """Least squares and its standard errors."""

    def setUp(self):
        rng = np.random.default_rng(3)
        self.X = rng.normal(size=(200, 3))
        self.y = self.X @ np.array([0.5, -1.0, 2.0]) + rng.normal(scale=0.7, size=200)

    def test_coefficients_match_lstsq(self):
        fit = fit_ols(self.y, self.X)
        expected, *_ = np.linalg.lstsq(self.X, self.y, rcond=None)
        np.testing.assert_allclose(fit.coefficients, expected, atol=1e-8)

    def test_standard_error_conventions(self):
        residuals = self.y - self.X @ np.linalg.lstsq(self.X, self.y, rcond=None)[0]
        rss = float(residuals @ residuals)
        diag = np.diag(np.linalg.inv(self.X.T @ self.X))
        ml = fit_ols(self.y, self.X, se_convention="ml")
        ols = fit_ols(self.y, self.X, se_convention="ols")
        np.testing.assert_allclose(ml.ses, np.sqrt(rss / 200 * diag), rtol=1e-8)
        np.testing.assert_allclose(ols.ses, np.sqrt(rss / 197 * diag), rtol=1e-8)
        self.assertAlmostEqual(ml.residual_variance, rss / 200)
        self.assertTrue(np.all(ml.p_values < 0.001))

    def test_collinear_design_names_columns(self):
        X = np.column_stack([self.X[:, 0], self.X[:, 1], 2.0 * self.X[:, 0]])
        with self.assertRaises(CollinearityError) as ctx:
            fit_ols(self.y, X, columns=("a", "b", "c"))
        self.assertEqual(ctx.exception.columns, ["c"])

    def test_argument_checks(self):
        with self.assertRaises(InvalidArgumentError):
            fit_ols(self.y[:3], self.X[:3])
        with self.assertRaises(InvalidArgumentError):
            fit_ols(self.y, self.X, se_convention="robust")
        with self.assertRaises(InvalidArgumentError):
            fit_ols(self.y[:-1], self.X)


class TestPredictorCoding(unittest.TestCase):
    """Factor codes and centering."""

    def _records(self, replicates=4):
        rows = []
        for condition in enumerate_conditions():
            for i in range(1, replicates + 1):
                final = 900 - 100 * i if condition.tip_adjustable else 900
                customer = CustomerResult(1 + (i % 7), "c", TipDecision.ADJUST if condition.tip_adjustable else None,
                                          final)
                record = DyadRecord("r", "g", f"{condition.key}#{i}", condition, i, 3000, 900, customer,
                                    WorkerResult(1 + (2 * i) % 7, "w"))
                rows.append(derive_outcomes(record))
        return center_dataset(rows, CenteringSpec())

    def test_balanced_means(self):
        means = predictor_means(self._records(), CODING)
        self.assertEqual(means, {"service_outcome": 2.5, "adjustability": 0.5, "visibility": 0.5})

    def test_only_service_outcome_is_centered(self):
        data = build_path_data(self._records(), CODING)
        self.assertEqual(len(data), 64)
        self.assertAlmostEqual(float(data.service_outcome.sum()), 0.0)
        self.assertEqual(set(data.adjustability.tolist()), {0.0, 1.0})
        self.assertEqual(set(data.visibility.tolist()), {0.0, 1.0})
        np.testing.assert_allclose(data.column(TC_X_VIS), data.tip_change * data.visibility)
        self.assertEqual(list(data.dyad_ids), sorted(data.dyad_ids))

    def test_codes_must_increase(self):
        with self.assertRaises(CodingError):
            PredictorCoding(service_outcome_codes={"fails": 1, "below": 3, "meets": 2, "exceeds": 4})
        with self.assertRaises(CodingError):
            PredictorCoding(visibility_codes={"after": 0, "before": 2})
        with self.assertRaises(CodingError):
            PredictorCoding.from_dict({"scale": 1})


class TestPathModel(unittest.TestCase):
    """Equation-wise fits and indirect products."""

    def setUp(self):
        self.models, self.indirect = load_published_paths(PATHS_FIXTURE)

    def test_equations_and_path_order(self):
        self.assertEqual(len(PATHS), 8)
        self.assertEqual([lhs for lhs, _ in EQUATIONS], ["tip_change", "joint", "diff"])
        for model in self.models.values():
            self.assertEqual(tuple((p.lhs, p.rhs) for p in model.paths), PATHS)

    def test_published_indirect_products(self):
        self.assertEqual(sum(len(v) for v in self.indirect.values()), 14)
        for group_id, effects in self.indirect.items():
            products = indirect_effects(self.models[group_id])
            for effect_id, estimate in effects.items():
                self.assertAlmostEqual(products[effect_id], estimate.point, delta=0.0015,
                                       msg=f"{group_id} {effect_id}")

    def test_published_p_values(self):
        self.assertEqual(published_p("<0.001"), 0.001)
        self.assertEqual(published_p("0.526"), 0.526)
        self.assertEqual(self.models["human"].path("tip_change", "service_outcome").p_value, 0.001)

    def test_recovers_published_human_paths(self):
        truth = self.models["human"]
        runs, recovered = 200, 0
        for run in range(runs):
            rng = np.random.default_rng(2000 + run)
            data = simulate_path_data(truth, CODING, 30, rng)
            data = data.take(np.sort(rng.choice(len(data), truth.n, replace=False)))
            fitted = fit_group_paths(data)
            self.assertEqual(fitted.n, 477)
            recovered += all(abs(estimate.estimate - expected.estimate) < 3 * estimate.se
                             for expected, estimate in zip(truth.paths, fitted.paths))
        self.assertGreaterEqual(recovered / runs, 0.95)

    def test_variance_standard_error(self):
        data = simulate_path_data(make_model(), CODING, 30, np.random.default_rng(5))
        fitted = fit_group_paths(data)
        for row in fitted.variances:
            self.assertAlmostEqual(row.se, row.estimate * np.sqrt(2.0 / 480))

    def test_intercepts_are_optional(self):
        data = simulate_path_data(make_model(), CODING, 30, np.random.default_rng(5))
        self.assertEqual(fit_group_paths(data).intercepts, {})
        with_intercept = fit_group_paths(data, intercept=True)
        self.assertEqual(sorted(with_intercept.intercepts), ["diff", "joint", "tip_change"])
        self.assertEqual(len(with_intercept.paths), 8)

    def test_small_group_is_rejected(self):
        data = simulate_path_data(make_model(), CODING, 2, np.random.default_rng(5))
        with self.assertRaises(InvalidArgumentError):
            fit_group_paths(data)

    def test_model_invariants(self):
        model = make_model()
        with self.assertRaises(InvalidArgumentError):
            GroupPathModel("g", 480, tuple(reversed(model.paths)), model.variances)
        bad = tuple(PathEstimate(v.lhs, "~~", v.lhs, 0.0, 0.0, 1.0) for v in model.variances)
        with self.assertRaises(DegenerateVarianceError):
            GroupPathModel("g", 480, model.paths, bad)

    def test_dict_round_trip(self):
        model = make_model()
        self.assertEqual(model_from_dict(model.to_dict()), model)


class TestPooledCentering(unittest.TestCase):
    """Group offsets left in the outcomes by pooled centering."""

    @staticmethod
    def _shifted(data, tip_change=3.0, joint=1.0, diff=0.5):
        return PathData(data.group_id, data.dyad_ids, data.service_outcome, data.adjustability, data.visibility,
                        data.tip_change + tip_change, data.joint + joint, data.diff + diff)

    def test_offsets_do_not_move_the_fit(self):
        data = simulate_path_data(make_model(), CODING, 30, np.random.default_rng(31))
        plain, shifted = fit_group_paths(data), fit_group_paths(self._shifted(data))
        for a, b in zip(plain.rows(), shifted.rows()):
            self.assertAlmostEqual(a.estimate, b.estimate, delta=1e-9, msg=f"{a.lhs} {a.op} {a.rhs}")
            self.assertAlmostEqual(a.se, b.se, delta=1e-9, msg=f"{a.lhs} {a.op} {a.rhs}")

    def test_slopes_are_recovered_in_offset_groups(self):
        truth = make_model(first=0.8, joint_moderation=0.1)
        runs = 50
        estimates, ses = [], []
        for run in range(runs):
            data = simulate_path_data(truth, CODING, 30, np.random.default_rng(700 + run))
            offsets = (3.0, 1.0, 0.5) if run % 2 else (-0.87, 0.2, -0.42)
            fitted = fit_group_paths(self._shifted(data, *offsets))
            estimates.append([p.estimate for p in fitted.paths])
            ses.append([p.se for p in fitted.paths])
        means, spread = np.mean(estimates, axis=0), 4 * np.mean(ses, axis=0) / np.sqrt(runs)
        for expected, mean, delta in zip(truth.paths, means, spread):
            self.assertAlmostEqual(mean, expected.estimate, delta=delta, msg=f"{expected.lhs} ~ {expected.rhs}")

    def test_bootstrap_ignores_offsets(self):
        data = simulate_path_data(make_model(first=0.8), CODING, 30, np.random.default_rng(41), group_id="sim")
        plain = bootstrap_indirect(data, B=1000, master_seed=5)
        shifted = bootstrap_indirect(self._shifted(data), B=1000, master_seed=5)
        for effect in INDIRECT_EFFECTS:
            for name in ("point", "ci_low", "ci_high", "bootstrap_se"):
                self.assertAlmostEqual(getattr(plain[effect], name), getattr(shifted[effect], name), delta=1e-9,
                                       msg=f"{effect} {name}")


class TestBootstrap(unittest.TestCase):
    """Bootstrap of the indirect effects."""

    def setUp(self):
        self.data = simulate_path_data(make_model(), CODING, 30, np.random.default_rng(21), group_id="sim")

    def test_minimum_resamples(self):
        with self.assertRaises(InvalidArgumentError):
            bootstrap_indirect(self.data, B=MIN_RESAMPLES - 1)

    def test_estimates_are_consistent(self):
        result = bootstrap_indirect(self.data, B=1000, master_seed=42)
        self.assertEqual(sorted(result), ["indirect_diff", "indirect_joint"])
        points = indirect_effects(fit_group_paths(self.data))
        for effect_id, estimate in result.items():
            self.assertEqual(estimate.point, points[effect_id])
            self.assertLessEqual(estimate.ci_low, estimate.ci_high)
            self.assertGreater(estimate.bootstrap_se, 0)
            self.assertEqual(estimate.n_resamples, 1000)
            self.assertEqual(estimate.failed_resamples, 0)
            self.assertEqual(estimate.significant, not estimate.ci_low <= 0 <= estimate.ci_high)

    def test_deterministic_for_a_seed(self):
        a = bootstrap_indirect(self.data, B=1000, master_seed=7)
        b = bootstrap_indirect(self.data, B=1000, master_seed=7)
        c = bootstrap_indirect(self.data, B=1000, master_seed=8)
        self.assertEqual(a, b)
        self.assertNotEqual(a["indirect_diff"].ci_low, c["indirect_diff"].ci_low)

    def test_row_order_does_not_matter(self):
        shuffled = self.data.take(np.random.default_rng(0).permutation(len(self.data)))
        self.assertEqual(bootstrap_indirect(shuffled, B=1000), bootstrap_indirect(self.data, B=1000))

    def test_parallel_matches_serial(self):
        serial = bootstrap_indirect(self.data, B=1000, master_seed=3, jobs=1)
        parallel = bootstrap_indirect(self.data, B=1000, master_seed=3, jobs=2)
        self.assertEqual(serial, parallel)

    @staticmethod
    def _rejection_rate(model, runs, seed_base):
        rejections = 0
        for run in range(runs):
            data = simulate_path_data(model, CODING, 30, np.random.default_rng(seed_base + run))
            result = bootstrap_indirect(data, B=1000, master_seed=run)
            rejections += sum(result[effect].significant for effect in INDIRECT_EFFECTS)
        return rejections / (runs * len(INDIRECT_EFFECTS))

    def test_type_one_error_rate(self):
        # Both second-stage interactions null, first stage far from zero
        model = make_model(first=3.0, joint_moderation=0.0, diff_moderation=0.0)
        rate = self._rejection_rate(model, 500, 1000)
        self.assertGreaterEqual(rate, 0.03)
        self.assertLessEqual(rate, 0.07)

    def test_product_of_two_null_paths_is_conservative(self):
        model = make_model(first=0.0, joint_moderation=0.0, diff_moderation=0.0)
        self.assertLessEqual(self._rejection_rate(model, 200, 3000), 0.07)

    def test_power_for_a_real_effect(self):
        model = make_model(first=1.0, diff_moderation=-0.2)
        runs = 20
        hits = sum(
            bootstrap_indirect(simulate_path_data(model, CODING, 30, np.random.default_rng(500 + run)),
                               B=1000, master_seed=run)["indirect_diff"].significant
            for run in range(runs))
        self.assertGreaterEqual(hits / runs, 0.9)

    def _sparse_visibility_data(self):
        rng = np.random.default_rng(9)
        n = 64
        visibility = np.zeros(n)
        visibility[0] = 1.0
        tip_change = rng.normal(size=n)
        tip_change[0] = 2.0
        return PathData("sparse", tuple(f"d{i:03d}" for i in range(n)), rng.normal(size=n),
                        rng.integers(0, 2, n).astype(float), visibility, tip_change,
                        rng.normal(size=n), rng.normal(size=n))

    def test_rank_deficient_resamples_abort(self):
        with self.assertRaises(BootstrapAbortError):
            bootstrap_indirect(self._sparse_visibility_data(), B=1000)

    def test_rank_deficient_resamples_are_counted(self):
        result = bootstrap_indirect(self._sparse_visibility_data(), B=1000, failure_limit=0.9)
        failed = result["indirect_joint"].failed_resamples
        self.assertGreater(failed, 250)
        self.assertEqual(result["indirect_joint"].n_resamples, 1000 - failed)


if __name__ == '__main__':
    unittest.main()
