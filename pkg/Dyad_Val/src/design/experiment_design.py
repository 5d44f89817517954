"""Factorial design, replication sizing and seeded replication plans."""
import hashlib
import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Tuple

from ..utils.config import logger
from ..utils.errors import InvalidArgumentError


class ServiceOutcome(str, Enum):
    """Service outcome levels, ordered from worst to best."""
    FAILS = "fails"
    BELOW = "below"
    MEETS = "meets"
    EXCEEDS = "exceeds"


class TipVisibility(str, Enum):
    AFTER = "after"
    BEFORE = "before"


OUTCOME_ORDER = (ServiceOutcome.FAILS, ServiceOutcome.BELOW, ServiceOutcome.MEETS, ServiceOutcome.EXCEEDS)
ADJUSTABILITY_ORDER = (False, True)
VISIBILITY_ORDER = (TipVisibility.AFTER, TipVisibility.BEFORE)


def _parse_bool(value, name):
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise InvalidArgumentError(f"{name} must be a boolean, got {value!r}")


@dataclass(frozen=True)
class ExperimentCondition:
    """One cell of the outcome x adjustability x visibility design."""

    service_outcome: ServiceOutcome
    tip_adjustable: bool
    tip_visibility: TipVisibility

    def __post_init__(self):
        try:
            object.__setattr__(self, 'service_outcome', ServiceOutcome(self.service_outcome))
            object.__setattr__(self, 'tip_visibility', TipVisibility(self.tip_visibility))
        except ValueError as e:
            raise InvalidArgumentError(str(e)) from e
        object.__setattr__(self, 'tip_adjustable', _parse_bool(self.tip_adjustable, 'tip_adjustable'))

    @property
    def key(self) -> str:
        """Stable string key ``outcome/adjustable/visibility``."""
        return f"{self.service_outcome.value}/{str(self.tip_adjustable).lower()}/{self.tip_visibility.value}"

    @property
    def sort_index(self) -> Tuple[int, int, int]:
        return (OUTCOME_ORDER.index(self.service_outcome),
                ADJUSTABILITY_ORDER.index(self.tip_adjustable),
                VISIBILITY_ORDER.index(self.tip_visibility))

    @classmethod
    def from_key(cls, key: str) -> "ExperimentCondition":
        parts = key.split('/')
        if len(parts) != 3:
            raise InvalidArgumentError(f"malformed condition key {key!r}")
        return cls(parts[0], parts[1], parts[2])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "service_outcome": self.service_outcome.value,
            "tip_adjustable": self.tip_adjustable,
            "tip_visibility": self.tip_visibility.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentCondition":
        try:
            return cls(data["service_outcome"], data["tip_adjustable"], data["tip_visibility"])
        except KeyError as e:
            raise InvalidArgumentError(f"condition is missing field {e.args[0]!r}") from e

    def __str__(self):
        return self.key


def enumerate_conditions() -> List[ExperimentCondition]:
    """All 16 conditions, outcome major, adjustability, visibility minor."""
    return [
        ExperimentCondition(outcome, adjustable, visibility)
        for outcome, adjustable, visibility in itertools.product(
            OUTCOME_ORDER, ADJUSTABILITY_ORDER, VISIBILITY_ORDER)
    ]


@dataclass(frozen=True)
class SampleSizeInputs:
    """Inputs to the fixed-width replication formula."""

    pilot_sd: float
    half_width: float = 1.0
    z_quantile: float = 1.96

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvalidArgumentError(f"half_width must be > 0, got {self.half_width}")
        if not self.z_quantile > 0:
            raise InvalidArgumentError(f"z_quantile must be > 0, got {self.z_quantile}")
        if not self.pilot_sd >= 0:
            raise InvalidArgumentError(f"pilot_sd must be >= 0, got {self.pilot_sd}")


def required_replications(inputs: SampleSizeInputs) -> int:
    """Replications per cell from ``n = ceil((z * s / h)^2)``, floored at 2.

    Args:
        inputs: Pilot SD, target half-width and normal quantile

    Returns:
        int: Replications per condition
    """
    if not inputs.half_width > 0:
        raise InvalidArgumentError(f"half_width must be > 0, got {inputs.half_width}")
    value = (inputs.z_quantile * inputs.pilot_sd / inputs.half_width) ** 2
    # round away float noise such as 30.000000000000004 before the ceiling
    n = math.ceil(round(value, 9))
    return max(2, n)


def derive_seed(master_seed: int, *parts) -> int:
    """64-bit seed from SHA-256 over ``master_seed`` and ``parts`` joined by ``|``."""
    material = "|".join(str(p) for p in (int(master_seed),) + parts)
    digest = hashlib.sha256(material.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big')


@dataclass(frozen=True)
class PlanEntry:
    condition: ExperimentCondition
    replicate_index: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.condition.key}#{self.replicate_index}"

    def to_dict(self) -> Dict[str, Any]:
        return {"condition": self.condition.to_dict(), "replicate": self.replicate_index, "seed": self.seed}


@dataclass(frozen=True)
class ReplicationPlan:
    """Ordered, seeded schedule of replicates for every condition."""

    master_seed: int
    replications_per_cell: int
    entries: Tuple[PlanEntry, ...]

    def for_condition(self, condition: ExperimentCondition) -> List[PlanEntry]:
        return [e for e in self.entries if e.condition == condition]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "master_seed": self.master_seed,
            "replications_per_cell": self.replications_per_cell,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReplicationPlan":
        entries = tuple(
            PlanEntry(ExperimentCondition.from_dict(e["condition"]), int(e["replicate"]), int(e["seed"]))
            for e in data["entries"]
        )
        return cls(int(data["master_seed"]), int(data["replications_per_cell"]), entries)

    def __len__(self):
        return len(self.entries)


def build_plan(replications: int, master_seed: int) -> ReplicationPlan:
    """Build the replication plan.

    Args:
        replications: Replicates per condition (>= 1)
        master_seed: Master seed; every entry seed is a pure function of
            (master_seed, condition key, replicate index)

    Returns:
        ReplicationPlan: 16 x replications entries in canonical condition order
    """
    if isinstance(replications, bool) or int(replications) != replications or replications < 1:
        raise InvalidArgumentError(f"replications must be an integer >= 1, got {replications!r}")
    replications = int(replications)
    entries = tuple(
        PlanEntry(condition, i, derive_seed(master_seed, condition.key, i))
        for condition in enumerate_conditions()
        for i in range(1, replications + 1)
    )
    logger.debug(f"Built plan: {len(entries)} entries, {replications} per cell, master seed {master_seed}")
    return ReplicationPlan(int(master_seed), replications, entries)


def plan_from_config(config) -> ReplicationPlan:
    """Replication plan for a RunConfig, sizing cells by formula when unset."""
    design = config.design
    replications = design.get("replications")
    if replications is None:
        replications = required_replications(SampleSizeInputs(
            pilot_sd=float(design["pilot_sd"]),
            half_width=float(design["half_width"]),
            z_quantile=float(design["z_quantile"]),
        ))
        logger.info(f"Replications per cell from fixed-width formula: {replications}")
    return build_plan(int(replications), int(config.master_seed))
