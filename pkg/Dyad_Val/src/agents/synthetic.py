"""Seeded synthetic agent backend used offline and in tests."""
import math
import time
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from scipy.special import ndtr

from ..design.experiment_design import ExperimentCondition, enumerate_conditions
from ..utils.config import logger
from ..utils.data import cents_to_str, load_json, to_cents
from ..utils.errors import InvalidArgumentError, VignetteLookupError
from .parsing import RATING_MAX, RATING_MIN, RawResponse, TipDecision
from .vignettes import PromptBundle, Role

PROBABILITY_TOLERANCE = 1e-9


def rating_distribution(mean: float, sd: float) -> np.ndarray:
    """Probabilities of ratings 1..7 for ``clip(floor(X + 0.5), 1, 7)``, X ~ N(mean, sd)."""
    ratings = np.arange(RATING_MIN, RATING_MAX + 1)
    if sd == 0:
        probs = np.zeros(len(ratings))
        point = min(max(math.floor(mean + 0.5), RATING_MIN), RATING_MAX)
        probs[point - RATING_MIN] = 1.0
        return probs
    upper = ndtr((ratings + 0.5 - mean) / sd)
    upper[-1] = 1.0
    lower = np.concatenate(([0.0], upper[:-1]))
    return upper - lower


def expected_rating_moments(mean: float, sd: float) -> Tuple[float, float]:
    """Exact mean and variance of the discretised, clipped rating."""
    probs = rating_distribution(mean, sd)
    ratings = np.arange(RATING_MIN, RATING_MAX + 1)
    m = float(np.dot(probs, ratings))
    return m, float(np.dot(probs, (ratings - m) ** 2))


def sample_rating(rng: np.random.Generator, mean: float, sd: float) -> int:
    x = mean + sd * rng.standard_normal() if sd > 0 else mean
    return int(min(max(math.floor(x + 0.5), RATING_MIN), RATING_MAX))


@dataclass(frozen=True)
class ConditionProfile:
    """Response distributions for one condition."""

    customer_mean: float
    customer_sd: float
    worker_mean: float
    worker_sd: float
    tip_probs: Tuple[float, float, float]  # keep, remove, adjust
    adjust_mean: float
    adjust_sd: float
    worker_tip_slope: float = 0.0

    def __post_init__(self):
        if min(self.customer_sd, self.worker_sd, self.adjust_sd) < 0:
            raise InvalidArgumentError("profile SDs must be >= 0")
        if min(self.tip_probs) < 0 or abs(sum(self.tip_probs) - 1.0) > PROBABILITY_TOLERANCE:
            raise InvalidArgumentError(f"tip-decision probabilities must sum to 1, got {self.tip_probs}")

    def worker_mean_given(self, tip_change_cents: int) -> float:
        return self.worker_mean + self.worker_tip_slope * tip_change_cents / 100.0


class SyntheticProfile:
    """Per-condition response distributions keyed by condition key."""

    def __init__(self, profile_id: str, conditions: Dict[str, ConditionProfile]):
        self.profile_id = profile_id
        self.conditions = dict(conditions)

    def covers(self, condition: ExperimentCondition) -> bool:
        return condition.key in self.conditions

    def get(self, condition: ExperimentCondition) -> ConditionProfile:
        try:
            return self.conditions[condition.key]
        except KeyError:
            raise VignetteLookupError(
                f"synthetic profile {self.profile_id} does not cover condition {condition.key}") from None

    def expected_moments(self, condition: ExperimentCondition, role: Role) -> Tuple[float, float]:
        """Exact rating moments for ``role`` (worker moments at zero tip change)."""
        p = self.get(condition)
        if Role(role) is Role.CUSTOMER:
            return expected_rating_moments(p.customer_mean, p.customer_sd)
        return expected_rating_moments(p.worker_mean, p.worker_sd)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticProfile":
        """Expand the compact per-outcome format into all covered conditions.

        ``outcomes`` gives parameters per service outcome; ``conditions`` may
        override any of them for a single condition key.
        """
        slopes = data.get("worker_tip_slope", 0.0)
        outcomes = data.get("outcomes", {})
        overrides = data.get("conditions", {})
        conditions = {}
        for condition in enumerate_conditions():
            base = outcomes.get(condition.service_outcome.value)
            if base is None and condition.key not in overrides:
                continue
            spec = _merge(base or {}, overrides.get(condition.key, {}))
            slope = spec.get("worker_tip_slope", slopes)
            if isinstance(slope, dict):
                slope = slope.get(condition.tip_visibility.value, 0.0)
            try:
                decision = spec["tip_decision"]
                conditions[condition.key] = ConditionProfile(
                    customer_mean=float(spec["customer"]["mean"]),
                    customer_sd=float(spec["customer"]["sd"]),
                    worker_mean=float(spec["worker"]["mean"]),
                    worker_sd=float(spec["worker"]["sd"]),
                    tip_probs=(float(decision.get("keep", 0.0)), float(decision.get("remove", 0.0)),
                               float(decision.get("adjust", 0.0))),
                    adjust_mean=float(spec.get("adjust_amount", {}).get("mean", 0.0)),
                    adjust_sd=float(spec.get("adjust_amount", {}).get("sd", 0.0)),
                    worker_tip_slope=float(slope),
                )
            except KeyError as e:
                raise InvalidArgumentError(f"profile entry {condition.key} is missing {e.args[0]!r}") from e
        return cls(data.get("profile_id", "synthetic"), conditions)

    @classmethod
    def load(cls, path) -> "SyntheticProfile":
        profile = cls.from_dict(load_json(path))
        logger.debug(f"Loaded synthetic profile {profile.profile_id} covering {len(profile.conditions)} conditions")
        return profile


def _merge(base, override):
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def _reasoning(role: Role, condition: ExperimentCondition, rating: int) -> str:
    return (f"Simulated {role.value} rating of {rating} after a delivery that "
            f"{condition.service_outcome.value} expectations.")


def synthetic_respond(profile: SyntheticProfile, bundle: PromptBundle, seed: int) -> RawResponse:
    """Sample a labeled response for ``bundle`` using only ``seed``.

    Args:
        profile: Response distributions
        bundle: Prompt being answered (condition, role and tip context)
        seed: Seed for ``numpy.random.default_rng``

    Returns:
        RawResponse in the exact labeled-line format
    """
    started = time.perf_counter()
    p = profile.get(bundle.condition)
    rng = np.random.default_rng(int(seed))
    lines = []
    if bundle.role is Role.CUSTOMER:
        if bundle.condition.tip_adjustable:
            decision = list(TipDecision)[int(rng.choice(3, p=np.asarray(p.tip_probs)))]
            lines.append(f"TIP DECISION: {decision.value}")
            if decision is TipDecision.ADJUST:
                amount = max(0.0, p.adjust_mean + p.adjust_sd * rng.standard_normal())
                lines.append(f"NEW TIP AMOUNT: {cents_to_str(to_cents(round(amount, 2)))}")
        rating = sample_rating(rng, p.customer_mean, p.customer_sd)
    else:
        final = bundle.final_tip_cents if bundle.final_tip_cents is not None else bundle.initial_tip_cents
        mean = p.worker_mean_given(final - bundle.initial_tip_cents)
        rating = sample_rating(rng, mean, p.worker_sd)
    lines.append(f"SATISFACTION: {rating}")
    lines.append(f"REASONING: {_reasoning(bundle.role, bundle.condition, rating)}")
    return RawResponse(
        text="\n".join(lines),
        attempts=1,
        latency=time.perf_counter() - started,
        provider_metadata={"provider": "synthetic", "profile_id": profile.profile_id, "seed": int(seed)},
    )
