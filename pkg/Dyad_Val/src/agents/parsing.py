"""Structured response types and the labeled-line response parser."""
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Any, Dict, List, Optional

from ..design.experiment_design import ExperimentCondition
from ..utils.data import cents_to_str, to_cents
from ..utils.errors import InvalidArgumentError, RatingRangeError, ResponseParseError

RATING_MIN = 1
RATING_MAX = 7


class TipDecision(str, Enum):
    KEEP = "keep"
    REMOVE = "remove"
    ADJUST = "adjust"


@dataclass(frozen=True)
class RawResponse:
    """Provider (or synthetic) output for one prompt."""

    text: str
    attempts: int = 1
    latency: float = 0.0
    provider_metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CustomerResult:
    satisfaction: int
    reasoning: str
    tip_decision: Optional[TipDecision]
    final_tip_cents: int

    @property
    def final_tip(self) -> str:
        return cents_to_str(self.final_tip_cents)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "satisfaction": self.satisfaction,
            "reasoning": self.reasoning,
            "tip_decision": self.tip_decision.value if self.tip_decision else None,
            "final_tip": cents_to_str(self.final_tip_cents),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CustomerResult":
        decision = data.get("tip_decision")
        return cls(int(data["satisfaction"]), data["reasoning"],
                   TipDecision(decision) if decision else None, to_cents(data["final_tip"]))


@dataclass(frozen=True)
class WorkerResult:
    satisfaction: int
    reasoning: str

    def to_dict(self) -> Dict[str, Any]:
        return {"satisfaction": self.satisfaction, "reasoning": self.reasoning}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WorkerResult":
        return cls(int(data["satisfaction"]), data["reasoning"])


# A label is a known keyword followed by ':' or '=', optionally wrapped in markdown bold.
LABEL_PATTERN = re.compile(
    r"(?<![A-Za-z])\**[ \t]*"
    r"(?P<label>satisfaction(?:[ \t]+rating)?|reasoning|tip[ \t]+decision|new[ \t]+tip[ \t]+amount)"
    r"[ \t]*\**[ \t]*[:=]",
    re.IGNORECASE,
)
RATING_PATTERN = re.compile(r"^\[?\s*(?P<value>[+-]?\d+(?:\.\d+)?)(?!\d)\s*\]?(?P<tail>.*)$", re.DOTALL)
AMBIGUOUS_TAIL = re.compile(r"^\s*(?:-|–|to|or|and)\s*\d", re.IGNORECASE)
DECISION_PATTERN = re.compile(r"^\[?\s*(?P<word>keep|kept|removed?|adjust(?:ed)?)\b", re.IGNORECASE)
TEMPLATE_ECHO = re.compile(r"keep\s*/\s*remove", re.IGNORECASE)
AMOUNT_PATTERN = re.compile(
    r"^\[?\s*(?P<neg1>-)?\s*\$?\s*(?P<neg2>-)?\s*(?P<amount>\d+(?:,\d{3})*(?:\.\d{1,2})?|\.\d{1,2})(?!\d)(?!\.\d)"
)


def _canonical_label(label: str) -> str:
    words = label.lower().split()
    if words[0] == "satisfaction":
        return "satisfaction"
    return " ".join(words)


def split_labeled_fields(text: str) -> Dict[str, List[str]]:
    """Split ``text`` into the values that follow each recognised label.

    A value runs from its label to the next label (or the end of the text),
    so labels may share a line or be surrounded by prose.
    """
    matches = list(LABEL_PATTERN.finditer(text or ""))
    fields_found: Dict[str, List[str]] = {}
    for i, match in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        value = text[match.end():end]
        fields_found.setdefault(_canonical_label(match.group("label")), []).append(value)
    return fields_found


def _clean(value: str) -> str:
    return value.strip().strip("*").strip()


def parse_rating(values: List[str]) -> int:
    """Satisfaction rating from the SATISFACTION values of a response."""
    if not values:
        raise ResponseParseError("missing SATISFACTION field")
    ratings = []
    for value in values:
        match = RATING_PATTERN.match(_clean(value))
        if not match:
            raise ResponseParseError(f"SATISFACTION is not a number: {value.strip()[:40]!r}")
        if AMBIGUOUS_TAIL.match(match.group("tail")):
            raise ResponseParseError(f"ambiguous SATISFACTION value: {value.strip()[:40]!r}")
        number = Decimal(match.group("value"))
        if number != number.to_integral_value():
            raise ResponseParseError(f"SATISFACTION must be an integer, got {match.group('value')}")
        rating = int(number)
        if not RATING_MIN <= rating <= RATING_MAX:
            raise RatingRangeError(f"SATISFACTION {rating} outside {RATING_MIN}-{RATING_MAX}")
        ratings.append(rating)
    if len(set(ratings)) > 1:
        raise ResponseParseError(f"conflicting SATISFACTION values {ratings}")
    return ratings[0]


def parse_reasoning(values: List[str]) -> str:
    for value in values:
        text = _clean(value).lstrip("-–—:").strip()
        if text:
            return text
    raise ResponseParseError("missing REASONING field")


def parse_tip_decision(values: List[str]) -> TipDecision:
    if not values:
        raise ResponseParseError("missing TIP DECISION field")
    value = _clean(values[0])
    if TEMPLATE_ECHO.search(value):
        raise ResponseParseError("TIP DECISION repeats the option list instead of choosing")
    match = DECISION_PATTERN.match(value)
    if not match:
        raise ResponseParseError(f"TIP DECISION must be keep/remove/adjust, got {values[0].strip()[:40]!r}")
    word = match.group("word").lower()
    if word.startswith("ke"):
        return TipDecision.KEEP
    if word.startswith("remove"):
        return TipDecision.REMOVE
    return TipDecision.ADJUST


def parse_tip_amount(values: List[str]) -> int:
    """NEW TIP AMOUNT in cents; negative or non-numeric amounts fail."""
    if not values:
        raise ResponseParseError("adjust decision without NEW TIP AMOUNT")
    match = AMOUNT_PATTERN.match(_clean(values[0]))
    if not match:
        raise ResponseParseError(f"NEW TIP AMOUNT is not an amount: {values[0].strip()[:40]!r}")
    if match.group("neg1") or match.group("neg2"):
        raise ResponseParseError("NEW TIP AMOUNT must not be negative")
    return to_cents(match.group("amount"))


def parse_customer_response(raw: RawResponse, condition: ExperimentCondition, initial_cents: int) -> CustomerResult:
    """Parse a customer response and apply the tip-decision mapping.

    Args:
        raw: Agent response
        condition: Condition the prompt was built for
        initial_cents: Initial tip in integer cents

    Returns:
        CustomerResult

    Raises:
        ResponseParseError: Missing/malformed field or adjust without amount
        RatingRangeError: Rating outside 1-7
        InvalidArgumentError: initial_cents is not a non-negative integer
    """
    if isinstance(initial_cents, bool) or not isinstance(initial_cents, int) or initial_cents < 0:
        raise InvalidArgumentError(f"initial_cents must be a non-negative integer, got {initial_cents!r}")
    found = split_labeled_fields(raw.text)
    satisfaction = parse_rating(found.get("satisfaction", []))
    reasoning = parse_reasoning(found.get("reasoning", []))

    if not condition.tip_adjustable:
        return CustomerResult(satisfaction, reasoning, None, initial_cents)

    decision = parse_tip_decision(found.get("tip decision", []))
    if decision is TipDecision.KEEP:
        final_cents = initial_cents
    elif decision is TipDecision.REMOVE:
        final_cents = 0
    else:
        final_cents = parse_tip_amount(found.get("new tip amount", []))
    return CustomerResult(satisfaction, reasoning, decision, final_cents)


def parse_worker_response(raw: RawResponse) -> WorkerResult:
    """Parse a worker response (SATISFACTION and REASONING)."""
    found = split_labeled_fields(raw.text)
    return WorkerResult(parse_rating(found.get("satisfaction", [])),
                        parse_reasoning(found.get("reasoning", [])))
