"""Dataset CSV, dataset manifest and JSONL journal persistence."""
import csv
import json
import os
import threading
from collections import defaultdict
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, List, Optional, Tuple

import pandas as pd

from ..agents.parsing import CustomerResult, WorkerResult
from ..design.experiment_design import ExperimentCondition
from ..utils.config import logger
from ..utils.data import cents_to_str, dict_diff, load_json, to_cents, write_json
from ..utils.errors import ConfigMismatchError, DataError, DatasetSchemaError, InvalidArgumentError
from .records import (
    STATUS_COMPLETE, STATUS_FAILED, VARIABLES, CenteringSpec, DyadRecord, OutcomeRecord,
    outcome_from_row, validate_outcome
)

SCHEMA_VERSION = 1
COLUMNS = [
    "run_id", "group_id", "dyad_id", "service_outcome", "tip_adjustable", "tip_visibility",
    "price", "initial_tip", "final_tip", "customer_sat", "worker_sat",
    "customer_reasoning", "worker_reasoning", "tip_change_raw", "joint_raw", "diff_raw",
    "tip_change_c", "joint_c", "diff_c",
]

EVENT_START = "start"
EVENT_END = "end"
CALL_OK = "ok"
CALL_FAILED = "failed"
CALL_PARSE_ERROR = "parse_error"


def _float_text(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _row(record: OutcomeRecord) -> List[str]:
    c = record.condition
    return [
        record.run_id, record.group_id, record.dyad_id,
        c.service_outcome.value, str(c.tip_adjustable).lower(), c.tip_visibility.value,
        cents_to_str(record.price_cents), cents_to_str(record.initial_tip_cents),
        cents_to_str(record.final_tip_cents),
        str(record.customer_sat), str(record.worker_sat),
        record.customer_reasoning, record.worker_reasoning,
        cents_to_str(record.tip_change_raw_cents), _float_text(record.joint_raw), _float_text(record.diff_raw),
        _float_text(record.tip_change_c), _float_text(record.joint_c), _float_text(record.diff_c),
    ]


def export_dataset(records: Iterable[OutcomeRecord], path) -> str:
    """Write the analysis dataset: one header line and one row per record.

    Floats are written with ``repr`` so loading restores them exactly.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(COLUMNS)
        for record in records:
            writer.writerow(_row(record))
            count += 1
    logger.info(f"Dataset with {count} rows written to {path}")
    return path


def load_dataset(path) -> List[OutcomeRecord]:
    """Load and validate an analysis dataset.

    Raises:
        DatasetSchemaError: Header does not match schema version ``SCHEMA_VERSION``
        DataError: A row violates an invariant (carries the 1-based data row number)
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding='utf-8')
    except pd.errors.EmptyDataError as e:
        raise DatasetSchemaError(f"{path}: empty dataset file", schema_version=SCHEMA_VERSION) from e
    columns = list(frame.columns)
    if columns != COLUMNS:
        missing = [c for c in COLUMNS if c not in columns]
        extra = [c for c in columns if c not in COLUMNS]
        logger.error(f"Dataset {path} does not match schema v{SCHEMA_VERSION}")
        raise DatasetSchemaError(
            f"{path}: columns do not match dataset schema v{SCHEMA_VERSION} "
            f"(missing {missing}, unexpected {extra})", schema_version=SCHEMA_VERSION)
    records = []
    for index, row in enumerate(frame.to_dict('records'), start=1):
        try:
            records.append(validate_outcome(outcome_from_row(row)))
        except (DataError, InvalidArgumentError, ValueError) as e:
            field = getattr(e, 'field', None)
            logger.error(f"Dataset {path} row {index} rejected: {e}")
            raise DataError(f"{path}: row {index}: {e}", field=field, row=index) from e
    logger.debug(f"Loaded {len(records)} rows from {path}")
    return records


def cell_counts(records: Iterable[OutcomeRecord]) -> Dict[str, Dict[str, int]]:
    counts = defaultdict(lambda: defaultdict(int))
    for r in records:
        counts[r.group_id][r.condition.key] += 1
    return {g: dict(sorted(cells.items())) for g, cells in sorted(counts.items())}


def cell_descriptives(records: Iterable[OutcomeRecord]) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Per group and condition: count and raw means of the three outcomes."""
    rows = [
        {"group_id": r.group_id, "cell": r.condition.key, "tip_change": r.tip_change_raw,
         "joint": r.joint_raw, "diff": r.diff_raw}
        for r in records
    ]
    if not rows:
        return {}
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(["group_id", "cell"], sort=True)
    means = grouped[list(VARIABLES)].mean()
    sizes = grouped.size()
    out: Dict[str, Dict[str, Dict[str, float]]] = {}
    for (group_id, cell), values in means.iterrows():
        entry = {"n": int(sizes[(group_id, cell)])}
        entry.update({f"{v}_mean": round(float(values[v]), 10) for v in VARIABLES})
        out.setdefault(group_id, {})[cell] = entry
    return out


def build_manifest(records: List[OutcomeRecord], spec: CenteringSpec, provenance: Dict[str, Any],
                   quality: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "provenance": provenance,
        "centering_scope": spec.scope,
        "means": spec.means,
        "n_records": len(records),
        "counts": cell_counts(records),
        "cell_descriptives": cell_descriptives(records),
    }
    if quality is not None:
        manifest["quality"] = quality
    return manifest


def write_manifest(manifest: Dict[str, Any], path) -> str:
    return write_json(manifest, path)


def load_manifest(path) -> Dict[str, Any]:
    manifest = load_json(path)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetSchemaError(f"{path}: manifest schema {manifest.get('schema_version')} "
                                 f"!= {SCHEMA_VERSION}", schema_version=manifest.get("schema_version"))
    return manifest


def centering_from_manifest(manifest: Dict[str, Any]) -> CenteringSpec:
    return CenteringSpec.from_dict({"scope": manifest["centering_scope"], "means": manifest["means"]})


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='milliseconds')


class JournalWriter:
    """Append-only JSONL journal with a single serialized writer.

    The first line is a header holding the run id, config hash and config;
    each agent call adds a ``start`` event before and an ``end`` event after.
    """

    def __init__(self, path, run_id: str, config_hash: str, config: Dict[str, Any]):
        self.path = path
        self.run_id = run_id
        self.config_hash = config_hash
        self._lock = threading.Lock()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if os.path.exists(path) and os.path.getsize(path) > 0:
            header, _ = read_journal(path)
            check_journal_config(header, config_hash, config)
            self._file = open(path, 'a', encoding='utf-8')
            logger.info(f"Appending to journal {path}")
        else:
            self._file = open(path, 'a', encoding='utf-8')
            self._write({"type": "header", "run_id": run_id, "config_hash": config_hash,
                         "config": config, "created_at": utc_now()})

    def _write(self, obj: Dict[str, Any]):
        line = json.dumps(obj, sort_keys=True, ensure_ascii=False)
        with self._lock:
            self._file.write(line + "\n")
            self._file.flush()

    def event(self, kind: str, **fields):
        payload = {"type": kind, "run_id": self.run_id, "timestamp": utc_now()}
        payload.update(fields)
        self._write(payload)

    def close(self):
        with self._lock:
            if not self._file.closed:
                self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_journal(path) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Header and events of a journal; a torn final line is skipped."""
    header, events = None, []
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().split("\n")
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            if number >= len(lines) - 1:
                logger.warning(f"Journal {path}: ignoring incomplete final line {number}")
                continue
            raise DatasetSchemaError(f"{path}: corrupt journal line {number}", row=number)
        if obj.get("type") == "header":
            header = obj
        else:
            events.append(obj)
    if header is None:
        raise DatasetSchemaError(f"{path}: journal has no header line")
    return header, events


def check_journal_config(header: Dict[str, Any], config_hash: str, config: Dict[str, Any]):
    """Refuse a journal written under another configuration, with a diff summary."""
    if header.get("config_hash") == config_hash:
        return
    diff = dict_diff(header.get("config", {}), config)
    logger.error(f"Journal config hash {header.get('config_hash', '')[:12]} != {config_hash[:12]}: {diff}")
    raise ConfigMismatchError(
        "journal was written under a different configuration:\n  " + "\n  ".join(diff or ["(hash only)"]),
        diff=diff)


def final_calls(events: Iterable[Dict[str, Any]]) -> Dict[Tuple[str, str, str], Dict[str, Any]]:
    """Final ``end`` event per (group_id, dyad_id, role): status ok or failed."""
    finals = {}
    for e in events:
        if e.get("type") == EVENT_END and e.get("status") in (CALL_OK, CALL_FAILED):
            finals[(e["group_id"], e["dyad_id"], e["role"])] = e
    return finals


def records_from_journal(events: Iterable[Dict[str, Any]]) -> List[DyadRecord]:
    """Rebuild DyadRecords from journal events (complete and failed dyads)."""
    finals = final_calls(events)
    dyads = {}
    for (group_id, dyad_id, role), e in finals.items():
        dyads.setdefault((group_id, dyad_id), {})[role] = e
    records = []
    for (group_id, dyad_id), calls in sorted(dyads.items()):
        customer_event, worker_event = calls.get("customer"), calls.get("worker")
        if customer_event is None:
            continue
        base = customer_event
        customer = worker = None
        failure = None
        if customer_event["status"] == CALL_OK:
            customer = CustomerResult.from_dict(customer_event["parsed"])
        else:
            failure = f"customer: {customer_event.get('error')}"
        if worker_event is not None:
            if worker_event["status"] == CALL_OK:
                worker = WorkerResult.from_dict(worker_event["parsed"])
            else:
                failure = f"worker: {worker_event.get('error')}"
        elif failure is None:
            continue  # worker call still outstanding
        records.append(DyadRecord(
            run_id=base["run_id"],
            group_id=group_id,
            dyad_id=dyad_id,
            condition=ExperimentCondition.from_dict(base["condition"]),
            replicate=int(base["replicate"]),
            price_cents=to_cents(base["price"]),
            initial_tip_cents=to_cents(base["initial_tip"]),
            customer=customer,
            worker=worker if customer is not None else None,
            seed=base.get("seed"),
            status=STATUS_FAILED if failure else STATUS_COMPLETE,
            failure=failure,
            started_at=base.get("timestamp"),
            finished_at=(worker_event or customer_event).get("timestamp"),
        ))
    return records
