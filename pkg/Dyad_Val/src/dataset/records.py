"""Dyad records, derived outcome variables and mean-centering."""
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional

from ..agents.parsing import RATING_MAX, RATING_MIN, CustomerResult, WorkerResult
from ..design.experiment_design import ExperimentCondition
from ..utils.config import logger
from ..utils.data import cents_to_str, to_cents
from ..utils.errors import DataError, InvalidArgumentError

VARIABLES = ("tip_change", "joint", "diff")
POOLED = "pooled"
SCOPES = ("pooled_all_groups", "per_group")

STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class DyadRecord:
    """One customer-worker encounter as executed."""

    run_id: str
    group_id: str
    dyad_id: str
    condition: ExperimentCondition
    replicate: int
    price_cents: int
    initial_tip_cents: int
    customer: Optional[CustomerResult] = None
    worker: Optional[WorkerResult] = None
    seed: Optional[int] = None
    status: str = STATUS_COMPLETE
    failure: Optional[str] = None
    started_at: Optional[str] = None
    finished_at: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.status == STATUS_COMPLETE and self.customer is not None and self.worker is not None

    @property
    def final_tip_cents(self) -> Optional[int]:
        return self.customer.final_tip_cents if self.customer else None

    def validate(self):
        """Check record invariants, raising DataError naming the field.

        A changed final tip under a non-adjustable condition is allowed here;
        ``derive_outcomes`` maps it to the structural zero.
        """
        if self.worker is not None and self.customer is None:
            raise DataError(f"{self.dyad_id}: worker result without customer result", field="customer")
        if self.price_cents <= 0:
            raise DataError(f"{self.dyad_id}: price must be > 0", field="price")
        if self.initial_tip_cents < 0:
            raise DataError(f"{self.dyad_id}: initial tip must be >= 0", field="initial_tip")
        if self.customer is not None:
            _check_rating(self.dyad_id, "customer_sat", self.customer.satisfaction)
            if self.customer.final_tip_cents < 0:
                raise DataError(f"{self.dyad_id}: final tip must be >= 0", field="final_tip")
        if self.worker is not None:
            _check_rating(self.dyad_id, "worker_sat", self.worker.satisfaction)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "group_id": self.group_id,
            "dyad_id": self.dyad_id,
            "condition": self.condition.to_dict(),
            "replicate": self.replicate,
            "price": cents_to_str(self.price_cents),
            "initial_tip": cents_to_str(self.initial_tip_cents),
            "customer": self.customer.to_dict() if self.customer else None,
            "worker": self.worker.to_dict() if self.worker else None,
            "seed": self.seed,
            "status": self.status,
            "failure": self.failure,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def _check_rating(dyad_id, name, value):
    if not isinstance(value, int) or isinstance(value, bool) or not RATING_MIN <= value <= RATING_MAX:
        raise DataError(f"{dyad_id}: {name}={value!r} outside {RATING_MIN}-{RATING_MAX}", field=name)


def dyad_id_for(condition: ExperimentCondition, replicate: int) -> str:
    return f"{condition.key}#{replicate}"


@dataclass(frozen=True)
class OutcomeRecord:
    """Analysis row: identifiers, responses, raw and centered outcomes."""

    run_id: str
    group_id: str
    dyad_id: str
    condition: ExperimentCondition
    price_cents: int
    initial_tip_cents: int
    final_tip_cents: int
    customer_sat: int
    worker_sat: int
    customer_reasoning: str
    worker_reasoning: str
    tip_change_raw_cents: int
    joint_raw: float
    diff_raw: float
    tip_change_c: Optional[float] = None
    joint_c: Optional[float] = None
    diff_c: Optional[float] = None

    @property
    def tip_change_raw(self) -> float:
        return self.tip_change_raw_cents / 100.0

    def raw(self, variable: str) -> float:
        if variable == "tip_change":
            return self.tip_change_raw
        if variable == "joint":
            return self.joint_raw
        if variable == "diff":
            return self.diff_raw
        raise InvalidArgumentError(f"unknown outcome variable {variable!r}")

    def centered(self, variable: str) -> float:
        value = getattr(self, f"{variable}_c")
        if value is None:
            raise InvalidArgumentError(f"{self.dyad_id}: {variable} has not been centered")
        return value

    @property
    def is_centered(self) -> bool:
        return None not in (self.tip_change_c, self.joint_c, self.diff_c)

    @property
    def sort_key(self):
        replicate = self.dyad_id.rsplit("#", 1)[-1]
        return (self.group_id, self.condition.sort_index, int(replicate) if replicate.isdigit() else 0, self.dyad_id)


def derive_outcomes(record: DyadRecord) -> OutcomeRecord:
    """Raw outcome variables for a complete dyad.

    Non-adjustable conditions get a structural zero tip change whatever the
    parsed final tip.

    Raises:
        DataError: Incomplete record or invariant violation (names the field)
    """
    if not record.complete:
        raise DataError(f"{record.dyad_id}: dyad is {record.status}, not complete",
                        field="worker" if record.customer else "customer")
    customer, worker = record.customer, record.worker
    _check_rating(record.dyad_id, "customer_sat", customer.satisfaction)
    _check_rating(record.dyad_id, "worker_sat", worker.satisfaction)
    final = customer.final_tip_cents
    if final < 0:
        raise DataError(f"{record.dyad_id}: final tip must be >= 0", field="final_tip")
    if record.condition.tip_adjustable:
        tip_change = final - record.initial_tip_cents
    else:
        if final != record.initial_tip_cents:
            logger.warning(f"{record.dyad_id}: non-adjustable dyad reported final tip "
                           f"{cents_to_str(final)}; forcing structural zero")
            final = record.initial_tip_cents
        tip_change = 0
    return OutcomeRecord(
        run_id=record.run_id,
        group_id=record.group_id,
        dyad_id=record.dyad_id,
        condition=record.condition,
        price_cents=record.price_cents,
        initial_tip_cents=record.initial_tip_cents,
        final_tip_cents=final,
        customer_sat=customer.satisfaction,
        worker_sat=worker.satisfaction,
        customer_reasoning=customer.reasoning,
        worker_reasoning=worker.reasoning,
        tip_change_raw_cents=tip_change,
        joint_raw=(customer.satisfaction + worker.satisfaction) / 2.0,
        diff_raw=float(customer.satisfaction - worker.satisfaction),
    )


def satisfactions_from(joint_raw: float, diff_raw: float):
    """Recover (customer_sat, worker_sat) from the joint and differential values."""
    return int(round(joint_raw + diff_raw / 2.0)), int(round(joint_raw - diff_raw / 2.0))


@dataclass
class CenteringSpec:
    """Centering scope and the means it uses, per group or pooled."""

    scope: str = "pooled_all_groups"
    means: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise InvalidArgumentError(f"unknown centering scope {self.scope!r}")

    def mean_for(self, group_id: str, variable: str) -> float:
        key = POOLED if self.scope == "pooled_all_groups" else group_id
        try:
            return self.means[key][variable]
        except KeyError:
            raise InvalidArgumentError(f"no stored {variable} mean for {key!r}") from None

    def to_dict(self) -> Dict[str, Any]:
        return {"scope": self.scope, "means": self.means}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CenteringSpec":
        return cls(data["scope"], {k: dict(v) for k, v in data.get("means", {}).items()})


def _mean(values: List[float]) -> float:
    return math.fsum(values) / len(values)


def compute_centering(records: Iterable[OutcomeRecord], scope: str = "pooled_all_groups") -> CenteringSpec:
    """Raw-variable means for ``scope``."""
    records = list(records)
    if not records:
        raise InvalidArgumentError("cannot center an empty dataset")
    buckets = defaultdict(list)
    for r in records:
        buckets[POOLED if scope == "pooled_all_groups" else r.group_id].append(r)
    means = {
        key: {v: _mean([r.raw(v) for r in rows]) for v in VARIABLES}
        for key, rows in sorted(buckets.items())
    }
    return CenteringSpec(scope, means)


def center_dataset(records: List[OutcomeRecord], spec: CenteringSpec) -> List[OutcomeRecord]:
    """Subtract the scope mean from each raw variable.

    Stored means in ``spec`` are reused; missing means are computed from
    ``records`` and written back into ``spec``.

    Raises:
        InvalidArgumentError: Empty input
    """
    if not records:
        raise InvalidArgumentError("cannot center an empty dataset")
    if not spec.means:
        spec.means = compute_centering(records, spec.scope).means
    return [
        replace(r, **{f"{v}_c": r.raw(v) - spec.mean_for(r.group_id, v) for v in VARIABLES})
        for r in records
    ]


def build_outcomes(records: Iterable[DyadRecord]) -> List[OutcomeRecord]:
    """Outcome rows for complete dyads, in canonical order."""
    rows = [derive_outcomes(r) for r in records if r.complete]
    return sorted(rows, key=lambda r: r.sort_key)


def recover_raw(record: OutcomeRecord, spec: CenteringSpec, variable: str) -> float:
    return record.centered(variable) + spec.mean_for(record.group_id, variable)


def outcome_from_row(row: Dict[str, Any]) -> OutcomeRecord:
    """OutcomeRecord from a mapping of CSV-style string values."""
    condition = ExperimentCondition(row["service_outcome"], row["tip_adjustable"], row["tip_visibility"])

    def optional_float(name):
        value = row.get(name, "")
        return None if value in ("", None) else float(value)

    return OutcomeRecord(
        run_id=row["run_id"],
        group_id=row["group_id"],
        dyad_id=row["dyad_id"],
        condition=condition,
        price_cents=to_cents(row["price"]),
        initial_tip_cents=to_cents(row["initial_tip"]),
        final_tip_cents=to_cents(row["final_tip"]),
        customer_sat=_parse_int(row["customer_sat"], "customer_sat"),
        worker_sat=_parse_int(row["worker_sat"], "worker_sat"),
        customer_reasoning=row["customer_reasoning"],
        worker_reasoning=row["worker_reasoning"],
        tip_change_raw_cents=to_cents(row["tip_change_raw"]),
        joint_raw=float(row["joint_raw"]),
        diff_raw=float(row["diff_raw"]),
        tip_change_c=optional_float("tip_change_c"),
        joint_c=optional_float("joint_c"),
        diff_c=optional_float("diff_c"),
    )


def _parse_int(value, name):
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise DataError(f"{name}={value!r} is not a number", field=name) from None
    if number != int(number):
        raise DataError(f"{name}={value!r} is not an integer", field=name)
    return int(number)


def validate_outcome(record: OutcomeRecord) -> OutcomeRecord:
    """Check every analysis-row invariant, raising DataError naming the field."""
    _check_rating(record.dyad_id, "customer_sat", record.customer_sat)
    _check_rating(record.dyad_id, "worker_sat", record.worker_sat)
    if record.price_cents <= 0:
        raise DataError(f"{record.dyad_id}: price must be > 0", field="price")
    if record.initial_tip_cents < 0:
        raise DataError(f"{record.dyad_id}: initial_tip must be >= 0", field="initial_tip")
    if record.final_tip_cents < 0:
        raise DataError(f"{record.dyad_id}: final_tip must be >= 0", field="final_tip")
    if not record.condition.tip_adjustable:
        if record.final_tip_cents != record.initial_tip_cents:
            raise DataError(f"{record.dyad_id}: non-adjustable row changed the tip", field="final_tip")
        if record.tip_change_raw_cents != 0:
            raise DataError(f"{record.dyad_id}: non-adjustable row needs tip_change_raw = 0",
                            field="tip_change_raw")
    if record.tip_change_raw_cents != record.final_tip_cents - record.initial_tip_cents:
        raise DataError(f"{record.dyad_id}: tip_change_raw != final_tip - initial_tip", field="tip_change_raw")
    if record.joint_raw != (record.customer_sat + record.worker_sat) / 2.0:
        raise DataError(f"{record.dyad_id}: joint_raw inconsistent with satisfactions", field="joint_raw")
    if record.diff_raw != float(record.customer_sat - record.worker_sat):
        raise DataError(f"{record.dyad_id}: diff_raw inconsistent with satisfactions", field="diff_raw")
    return record
