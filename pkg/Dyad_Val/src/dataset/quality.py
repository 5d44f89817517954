"""Quality screening: failed-member flags, whole-dyad exclusion and cell completeness."""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

from ..design.experiment_design import ReplicationPlan, enumerate_conditions
from ..utils.config import logger
from ..utils.errors import DataError
from .records import DyadRecord


@dataclass(frozen=True)
class QualityFlag:
    group_id: str
    dyad_id: str
    reason: str


@dataclass
class QualityReport:
    flags: List[QualityFlag] = field(default_factory=list)
    usable: List[DyadRecord] = field(default_factory=list)
    # group -> condition key -> (usable, expected)
    completeness: Dict[str, Dict[str, tuple]] = field(default_factory=dict)

    @property
    def n_usable(self) -> int:
        return len(self.usable)

    @property
    def n_excluded(self) -> int:
        return len(self.flags)

    def expected_total(self, group_id: str) -> int:
        return sum(expected for _, expected in self.completeness.get(group_id, {}).values())

    def usable_total(self, group_id: str) -> int:
        return sum(usable for usable, _ in self.completeness.get(group_id, {}).values())

    def cell_label(self, group_id: str, condition_key: str) -> str:
        usable, expected = self.completeness[group_id][condition_key]
        return f"{usable}/{expected}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_usable": self.n_usable,
            "n_excluded": self.n_excluded,
            "flags": [{"group_id": f.group_id, "dyad_id": f.dyad_id, "reason": f.reason} for f in self.flags],
            "completeness": {
                g: {k: f"{u}/{e}" for k, (u, e) in cells.items()} for g, cells in self.completeness.items()
            },
        }


def validate_quality(records: Iterable[DyadRecord], plan: Optional[ReplicationPlan] = None) -> QualityReport:
    """Flag dyads with a failed or invalid member and count usable dyads per cell.

    Args:
        records: Executed dyads, complete or failed
        plan: Replication plan giving the expected count per cell; without it
            the expected count is the number of records seen per cell

    Returns:
        QualityReport
    """
    report = QualityReport()
    seen = defaultdict(lambda: defaultdict(int))
    usable = defaultdict(lambda: defaultdict(int))
    for record in records:
        seen[record.group_id][record.condition.key] += 1
        reason = None
        if not record.complete:
            reason = record.failure or f"dyad {record.status}"
        else:
            try:
                record.validate()
            except DataError as e:
                reason = str(e)
        if reason is not None:
            report.flags.append(QualityFlag(record.group_id, record.dyad_id, reason))
            logger.warning(f"Quality flag {record.group_id}/{record.dyad_id}: {reason}")
            continue
        report.usable.append(record)
        usable[record.group_id][record.condition.key] += 1

    for group_id in sorted(seen):
        cells = {}
        for condition in enumerate_conditions():
            expected = plan.replications_per_cell if plan is not None else seen[group_id].get(condition.key, 0)
            cells[condition.key] = (usable[group_id].get(condition.key, 0), expected)
        report.completeness[group_id] = cells
    logger.info(f"Quality screening: {report.n_usable} usable, {report.n_excluded} excluded")
    return report
