"""Test suite for dyad records, centering, dataset files and the run journal."""
import json
import logging
import math
import os
import tempfile
import unittest

from src.agents.dyad_runner import run_dyad
from src.agents.gateway import SyntheticAgent
from src.agents.parsing import CustomerResult, TipDecision, WorkerResult
from src.agents.synthetic import SyntheticProfile
from src.agents.vignettes import load_library
from src.dataset.quality import validate_quality
from src.dataset.records import (
    CenteringSpec, DyadRecord, build_outcomes, center_dataset, compute_centering, derive_outcomes, recover_raw,
    satisfactions_from
)
from src.dataset.storage import (
    COLUMNS, JournalWriter, build_manifest, centering_from_manifest, check_journal_config, export_dataset,
    load_dataset, load_manifest, read_journal, records_from_journal, write_manifest
)
from src.design.experiment_design import ExperimentCondition, build_plan
from src.utils.config import logger
from src.utils.errors import ConfigMismatchError, DataError, DatasetSchemaError, InvalidArgumentError

logger.setLevel(logging.DEBUG)

HERE = os.path.dirname(os.path.abspath(__file__))


def make_record(key="meets/true/after", customer_sat=5, worker_sat=3, final_cents=900, group_id="g",
                replicate=1, decision=TipDecision.KEEP, worker=True):
    condition = ExperimentCondition.from_key(key)
    customer = CustomerResult(customer_sat, "customer says", decision if condition.tip_adjustable else None,
                              final_cents)
    return DyadRecord("run-test", group_id, f"{key}#{replicate}", condition, replicate, 3000, 900, customer,
                      WorkerResult(worker_sat, "worker says") if worker else None, seed=replicate,
                      status="complete" if worker else "failed", failure=None if worker else "worker: down")


class TestOutcomes(unittest.TestCase):
    """Derived outcome variables."""

    def test_adjustable_tip_change(self):
        row = derive_outcomes(make_record(final_cents=1250, decision=TipDecision.ADJUST))
        self.assertEqual(row.tip_change_raw_cents, 350)
        self.assertAlmostEqual(row.tip_change_raw, 3.5)
        self.assertEqual(row.joint_raw, 4.0)
        self.assertEqual(row.diff_raw, 2.0)

    def test_removed_tip(self):
        row = derive_outcomes(make_record(final_cents=0, decision=TipDecision.REMOVE))
        self.assertEqual(row.tip_change_raw_cents, -900)

    def test_non_adjustable_is_structural_zero(self):
        row = derive_outcomes(make_record(key="fails/false/before", final_cents=0))
        self.assertEqual(row.tip_change_raw_cents, 0)
        self.assertEqual(row.final_tip_cents, 900)

    def test_incomplete_dyad_is_rejected(self):
        with self.assertRaises(DataError) as ctx:
            derive_outcomes(make_record(worker=False))
        self.assertEqual(ctx.exception.field, "worker")

    def test_satisfactions_are_recoverable(self):
        row = derive_outcomes(make_record(customer_sat=2, worker_sat=7))
        self.assertEqual(satisfactions_from(row.joint_raw, row.diff_raw), (2, 7))

    def test_build_outcomes_skips_failed_and_sorts(self):
        records = [make_record(key="exceeds/true/after"), make_record(key="fails/true/after", replicate=2),
                   make_record(key="fails/true/after", replicate=1), make_record(worker=False)]
        rows = build_outcomes(records)
        self.assertEqual([r.dyad_id for r in rows],
                         ["fails/true/after#1", "fails/true/after#2", "exceeds/true/after#1"])


class TestCentering(unittest.TestCase):
    """Mean-centering by scope."""

    def setUp(self):
        self.rows = [derive_outcomes(make_record(customer_sat=c, worker_sat=w, final_cents=f, group_id=g,
                                                 replicate=i, decision=TipDecision.ADJUST))
                     for i, (c, w, f, g) in enumerate([(5, 3, 1200, "a"), (2, 6, 0, "a"), (7, 7, 900, "b"),
                                                       (4, 1, 500, "b"), (3, 3, 1000, "b")], start=1)]

    def test_pooled_centering_has_zero_mean(self):
        centered = center_dataset(self.rows, CenteringSpec("pooled_all_groups"))
        for variable in ("tip_change", "joint", "diff"):
            self.assertAlmostEqual(math.fsum(r.centered(variable) for r in centered), 0.0, places=9)
        self.assertTrue(all(r.is_centered for r in centered))

    def test_per_group_centering(self):
        spec = CenteringSpec("per_group")
        centered = center_dataset(self.rows, spec)
        self.assertEqual(sorted(spec.means), ["a", "b"])
        for group in ("a", "b"):
            values = [r.centered("joint") for r in centered if r.group_id == group]
            self.assertAlmostEqual(math.fsum(values), 0.0, places=9)

    def test_raw_values_are_recoverable(self):
        spec = CenteringSpec("pooled_all_groups")
        for row in center_dataset(self.rows, spec):
            for variable in ("tip_change", "joint", "diff"):
                self.assertAlmostEqual(recover_raw(row, spec, variable), row.raw(variable), places=12)

    def test_stored_means_are_reused(self):
        spec = compute_centering(self.rows[:2])
        centered = center_dataset(self.rows, spec)
        self.assertAlmostEqual(centered[0].joint_c, self.rows[0].joint_raw - spec.means["pooled"]["joint"])

    def test_empty_dataset_and_unknown_scope(self):
        with self.assertRaises(InvalidArgumentError):
            center_dataset([], CenteringSpec())
        with self.assertRaises(InvalidArgumentError):
            CenteringSpec("per_cell")

    def test_uncentered_value_access_fails(self):
        with self.assertRaises(InvalidArgumentError):
            self.rows[0].centered("joint")


class TestDatasetFiles(unittest.TestCase):
    """Dataset CSV and manifest."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "dataset.csv")
        rows = [derive_outcomes(make_record(key=k, customer_sat=c, worker_sat=w, final_cents=f, replicate=i,
                                            decision=TipDecision.ADJUST))
                for i, (k, c, w, f) in enumerate([("meets/true/after", 5, 3, 1337), ("fails/false/before", 1, 2, 900),
                                                  ("below/true/before", 3, 3, 0)], start=1)]
        self.spec = CenteringSpec("pooled_all_groups")
        self.records = center_dataset(rows, self.spec)

    def tearDown(self):
        self.tmp.cleanup()

    def test_export_and_load_restore_records(self):
        export_dataset(self.records, self.path)
        self.assertEqual(load_dataset(self.path), self.records)
        with open(self.path, encoding='utf-8') as f:
            self.assertEqual(f.readline().strip().split(","), COLUMNS)

    def test_wrong_header_is_a_schema_error(self):
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write("run_id,group_id\nr,g\n")
        with self.assertRaises(DatasetSchemaError):
            load_dataset(self.path)

    def test_bad_row_names_row_and_field(self):
        export_dataset(self.records, self.path)
        with open(self.path, encoding='utf-8') as f:
            lines = f.read().splitlines()
        cells = lines[2].split(",")
        cells[COLUMNS.index("worker_sat")] = "9"
        lines[2] = ",".join(cells)
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write("\n".join(lines) + "\n")
        with self.assertRaises(DataError) as ctx:
            load_dataset(self.path)
        self.assertEqual(ctx.exception.row, 2)
        self.assertEqual(ctx.exception.field, "worker_sat")

    def test_manifest_round_trip(self):
        path = os.path.join(self.tmp.name, "manifest.json")
        manifest = build_manifest(self.records, self.spec, {"config_hash": "abc", "master_seed": 1})
        write_manifest(manifest, path)
        loaded = load_manifest(path)
        self.assertEqual(loaded["n_records"], 3)
        self.assertEqual(loaded["counts"]["g"]["meets/true/after"], 1)
        self.assertEqual(centering_from_manifest(loaded).means, self.spec.means)

    def test_manifest_schema_version_is_checked(self):
        path = os.path.join(self.tmp.name, "manifest.json")
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({"schema_version": 99}, f)
        with self.assertRaises(DatasetSchemaError):
            load_manifest(path)


class TestJournal(unittest.TestCase):
    """Append-only journal, config checks and record reconstruction."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "journal.jsonl")
        self.config = {"master_seed": 1, "analysis": {"alpha": 0.05}}

    def tearDown(self):
        self.tmp.cleanup()

    def _run_dyads(self, journal, keys):
        library = load_library(os.path.join(HERE, "vignettes.json"))
        agent = SyntheticAgent(SyntheticProfile.load(os.path.join(HERE, "synthetic_profile.json")))
        return [run_dyad(ExperimentCondition.from_key(k), 100 + i, agent, agent, library, 30, 9, run_id="run-j",
                         group_id="g", replicate=1, journal=journal) for i, k in enumerate(keys)]

    def test_records_are_rebuilt_from_events(self):
        with JournalWriter(self.path, "run-j", "hash-1", self.config) as journal:
            executed = self._run_dyads(journal, ["meets/true/before", "fails/false/after"])
        header, events = read_journal(self.path)
        self.assertEqual(header["config_hash"], "hash-1")
        self.assertEqual(len(events), 8)
        rebuilt = {r.dyad_id: r for r in records_from_journal(events)}
        for record in executed:
            self.assertEqual(rebuilt[record.dyad_id].customer, record.customer)
            self.assertEqual(rebuilt[record.dyad_id].worker, record.worker)
            self.assertEqual(rebuilt[record.dyad_id].seed, record.seed)

    def test_outstanding_worker_call_is_not_a_record(self):
        with JournalWriter(self.path, "run-j", "hash-1", self.config) as journal:
            self._run_dyads(journal, ["meets/true/before"])
        header, events = read_journal(self.path)
        customer_only = [e for e in events if e["role"] == "customer"]
        self.assertEqual(records_from_journal(customer_only), [])

    def test_torn_final_line_is_ignored(self):
        with JournalWriter(self.path, "run-j", "hash-1", self.config) as journal:
            self._run_dyads(journal, ["meets/false/after"])
        with open(self.path, 'a', encoding='utf-8') as f:
            f.write('{"type": "start", "dyad')
        _, events = read_journal(self.path)
        self.assertEqual(len(events), 4)

    def test_corrupt_middle_line_is_an_error(self):
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write('{"type": "header", "config_hash": "h"}\nnot json\n{"type": "start"}\n')
        with self.assertRaises(DatasetSchemaError):
            read_journal(self.path)

    def test_reopening_checks_the_config(self):
        JournalWriter(self.path, "run-j", "hash-1", self.config).close()
        JournalWriter(self.path, "run-j", "hash-1", self.config).close()
        changed = {"master_seed": 2, "analysis": {"alpha": 0.05}}
        with self.assertRaises(ConfigMismatchError) as ctx:
            JournalWriter(self.path, "run-j", "hash-2", changed)
        self.assertEqual(ctx.exception.diff, ["master_seed: 1 -> 2"])

    def test_check_journal_config_accepts_matching_hash(self):
        check_journal_config({"config_hash": "h", "config": {}}, "h", {"anything": 1})


class TestQuality(unittest.TestCase):
    """Quality screening and completeness."""

    def test_failed_and_invalid_dyads_are_flagged(self):
        good = make_record(key="meets/true/after", replicate=1)
        failed = make_record(key="meets/true/after", replicate=2, worker=False)
        invalid = make_record(key="fails/true/after", customer_sat=9)
        report = validate_quality([good, failed, invalid], build_plan(2, 1))
        self.assertEqual(report.n_usable, 1)
        self.assertEqual(report.n_excluded, 2)
        self.assertEqual(report.cell_label("g", "meets/true/after"), "1/2")
        self.assertEqual(report.cell_label("g", "exceeds/true/before"), "0/2")
        self.assertEqual(report.expected_total("g"), 32)
        self.assertEqual(report.usable_total("g"), 1)
        flagged = {f.dyad_id for f in report.flags}
        self.assertEqual(flagged, {"meets/true/after#2", "fails/true/after#1"})

    def test_changed_tip_under_fixed_condition_is_usable(self):
        record = make_record(key="fails/false/after", final_cents=0)
        report = validate_quality([record])
        self.assertEqual(report.n_usable, 1)
        self.assertEqual(report.flags, [])
        row = derive_outcomes(report.usable[0])
        self.assertEqual(row.tip_change_raw_cents, 0)
        self.assertEqual(row.final_tip_cents, 900)

    def test_without_plan_expected_is_observed(self):
        report = validate_quality([make_record(), make_record(replicate=2)])
        self.assertEqual(report.cell_label("g", "meets/true/after"), "2/2")
        self.assertEqual(report.to_dict()["completeness"]["g"]["meets/true/after"], "2/2")


if __name__ == '__main__':
    unittest.main()
