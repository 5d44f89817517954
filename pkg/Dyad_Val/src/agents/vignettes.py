"""Vignette library loading and role-specific prompt assembly."""
import string
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

from ..design.experiment_design import ExperimentCondition, TipVisibility, enumerate_conditions
from ..utils.config import logger
from ..utils.data import format_currency, load_json, to_cents
from ..utils.errors import (
    InvalidArgumentError, TemplateRenderError, VignetteLookupError, VignetteSchemaError
)
from .parsing import CustomerResult, TipDecision


class Role(str, Enum):
    CUSTOMER = "customer"
    WORKER = "worker"


REQUIRED_FIELDS = {"condition", "role", "scenario_text", "outcome_text"}
OPTIONAL_FIELDS = {"editable"}
CONDITION_FIELDS = {"service_outcome", "tip_adjustable", "tip_visibility"}
ROLE_PLACEHOLDERS = {
    Role.CUSTOMER: ("price", "initial_tip"),
    Role.WORKER: ("tip_visibility_note",),
}

SATISFACTION_QUESTION = (
    "On a scale from 1 (extremely dissatisfied) to 7 (extremely satisfied), "
    "how satisfied are you with this delivery experience?"
)
TIP_DECISION_QUESTION = (
    "Your tip can still be changed. You may keep your tip of {initial_tip}, "
    "remove it entirely, or adjust it to a new amount."
)
CUSTOMER_FORMAT_ADJUSTABLE = (
    "Respond using exactly these labeled lines:\n"
    "TIP DECISION: [keep/remove/adjust]\n"
    "NEW TIP AMOUNT: [amount, only if you chose adjust]\n"
    "SATISFACTION: [rating from 1 to 7]\n"
    "REASONING: [explanation]"
)
BASIC_FORMAT = (
    "Respond using exactly these labeled lines:\n"
    "SATISFACTION: [rating from 1 to 7]\n"
    "REASONING: [explanation]"
)
VISIBILITY_NOTE_BEFORE = (
    "Before accepting the order, the app showed you that the customer had placed a tip of {initial_tip}."
)
VISIBILITY_NOTE_AFTER = (
    "The app does not show you the customer's tip until after the delivery is completed."
)


@dataclass(frozen=True)
class Vignette:
    condition: ExperimentCondition
    role: Role
    scenario_text: str
    outcome_text: str
    editable: bool = False

    @property
    def key(self) -> Tuple[str, str]:
        return (self.condition.key, self.role.value)

    def to_dict(self) -> Dict:
        data = {
            "condition": self.condition.to_dict(),
            "role": self.role.value,
            "scenario_text": self.scenario_text,
            "outcome_text": self.outcome_text,
        }
        if self.editable:
            data["editable"] = True
        return data


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt: body followed by its response format instructions."""

    role: Role
    body_text: str
    response_format_spec: str
    condition: ExperimentCondition
    initial_tip_cents: int = 0
    final_tip_cents: Optional[int] = None

    @property
    def text(self) -> str:
        return f"{self.body_text}\n\n{self.response_format_spec}"


class VignetteLibrary:
    """Immutable set of 16 conditions x 2 roles vignettes."""

    def __init__(self, vignettes: List[Vignette]):
        self._entries: Dict[Tuple[str, str], Vignette] = {}
        for v in vignettes:
            if v.key in self._entries:
                raise VignetteSchemaError(f"duplicate vignette for {v.key[0]} ({v.key[1]})")
            self._entries[v.key] = v

    def get(self, condition: ExperimentCondition, role: Role) -> Vignette:
        try:
            return self._entries[(condition.key, Role(role).value)]
        except KeyError:
            raise VignetteLookupError(f"no {Role(role).value} vignette for condition {condition.key}") from None

    def missing_keys(self) -> List[str]:
        return [
            f"{c.key} ({role.value})"
            for c in enumerate_conditions() for role in Role
            if (c.key, role.value) not in self._entries
        ]

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[Vignette]:
        return iter(self._entries.values())

    def __eq__(self, other):
        return isinstance(other, VignetteLibrary) and self._entries == other._entries


def _placeholders(template: str) -> List[str]:
    return [name for _, name, _, _ in string.Formatter().parse(template) if name is not None]


def render_template(template: str, values: Mapping[str, str]) -> str:
    """Fill brace placeholders; any placeholder without a value is an error."""
    names = _placeholders(template)
    missing = sorted({n for n in names if n not in values})
    if missing or any(n == "" or n.isdigit() for n in names):
        raise TemplateRenderError(f"unresolved placeholders {missing or names} in template")
    return template.format_map(dict(values))


def _parse_entry(entry, index) -> Vignette:
    if not isinstance(entry, dict):
        raise VignetteSchemaError(f"entry {index}: expected an object")
    keys = set(entry)
    missing = REQUIRED_FIELDS - keys
    unknown = keys - REQUIRED_FIELDS - OPTIONAL_FIELDS
    if missing:
        raise VignetteSchemaError(f"entry {index}: missing fields {sorted(missing)}")
    if unknown:
        raise VignetteSchemaError(f"entry {index}: unknown fields {sorted(unknown)}")
    cond = entry["condition"]
    if not isinstance(cond, dict) or set(cond) != CONDITION_FIELDS:
        raise VignetteSchemaError(f"entry {index}: condition must have exactly {sorted(CONDITION_FIELDS)}")
    try:
        condition = ExperimentCondition.from_dict(cond)
        role = Role(entry["role"])
    except (InvalidArgumentError, ValueError) as e:
        raise VignetteSchemaError(f"entry {index}: {e}") from e
    for name in ("scenario_text", "outcome_text"):
        if not isinstance(entry[name], str) or not entry[name].strip():
            raise VignetteSchemaError(f"entry {index}: {name} must be a nonempty string")
    try:
        present = set(_placeholders(entry["scenario_text"]))
    except ValueError as e:
        raise VignetteSchemaError(f"entry {index}: malformed placeholder in scenario_text: {e}") from e
    absent = [p for p in ROLE_PLACEHOLDERS[role] if p not in present]
    if absent:
        raise VignetteSchemaError(f"entry {index}: {role.value} scenario_text lacks placeholders {absent}")
    return Vignette(condition, role, entry["scenario_text"], entry["outcome_text"],
                    bool(entry.get("editable", False)))


def load_library(path) -> VignetteLibrary:
    """Load and validate a vignette library file.

    Args:
        path: JSON file holding a list of vignette objects

    Returns:
        VignetteLibrary covering all 16 conditions for both roles

    Raises:
        InvalidArgumentError: Malformed JSON (message carries line and column)
        VignetteSchemaError: Bad entry, duplicate or incomplete coverage
    """
    data = load_json(path)
    if not isinstance(data, list):
        raise VignetteSchemaError(f"{path}: expected a list of vignettes")
    library = VignetteLibrary([_parse_entry(e, i) for i, e in enumerate(data)])
    missing = library.missing_keys()
    if missing:
        logger.error(f"Vignette library {path} is incomplete: {missing}")
        raise VignetteSchemaError(f"{path}: missing vignettes for {', '.join(missing)}")
    logger.debug(f"Loaded {len(library)} vignettes from {path}")
    return library


def build_customer_prompt(library: VignetteLibrary, condition: ExperimentCondition,
                          price, initial_tip) -> PromptBundle:
    """Customer prompt: scenario, outcome, satisfaction and (if adjustable) tip question."""
    price_cents, tip_cents = to_cents(price), to_cents(initial_tip)
    if price_cents <= 0:
        raise InvalidArgumentError(f"price must be > 0, got {price}")
    if tip_cents < 0:
        raise InvalidArgumentError(f"initial_tip must be >= 0, got {initial_tip}")
    vignette = library.get(condition, Role.CUSTOMER)
    values = {"price": format_currency(price_cents), "initial_tip": format_currency(tip_cents)}
    parts = [render_template(vignette.scenario_text, values), vignette.outcome_text]
    if condition.tip_adjustable:
        parts.append(render_template(TIP_DECISION_QUESTION, values))
    parts.append(SATISFACTION_QUESTION)
    spec = CUSTOMER_FORMAT_ADJUSTABLE if condition.tip_adjustable else BASIC_FORMAT
    return PromptBundle(Role.CUSTOMER, "\n\n".join(parts), spec, condition, tip_cents)


def _final_tip_note(condition: ExperimentCondition, customer_result: CustomerResult, tip_cents: int) -> str:
    final = format_currency(customer_result.final_tip_cents)
    if condition.tip_visibility is TipVisibility.BEFORE and customer_result.tip_decision in (
            TipDecision.REMOVE, TipDecision.ADJUST) and customer_result.final_tip_cents != tip_cents:
        return (f"After the delivery, the customer changed the tip from {format_currency(tip_cents)} "
                f"to {final}. Your final tip earnings for this delivery are {final}.")
    return f"After the delivery, the app shows your final tip earnings for this delivery: {final}."


def build_worker_prompt(library: VignetteLibrary, condition: ExperimentCondition,
                        customer_result: CustomerResult, initial_tip) -> PromptBundle:
    """Worker prompt embedding the customer's final tip before the satisfaction question."""
    tip_cents = to_cents(initial_tip)
    if customer_result is None:
        raise InvalidArgumentError("worker prompt requires a parsed customer result")
    vignette = library.get(condition, Role.WORKER)
    note = VISIBILITY_NOTE_BEFORE if condition.tip_visibility is TipVisibility.BEFORE else VISIBILITY_NOTE_AFTER
    values = {"initial_tip": format_currency(tip_cents)}
    values["tip_visibility_note"] = render_template(note, values)
    parts = [
        render_template(vignette.scenario_text, values),
        vignette.outcome_text,
        _final_tip_note(condition, customer_result, tip_cents),
        SATISFACTION_QUESTION,
    ]
    return PromptBundle(Role.WORKER, "\n\n".join(parts), BASIC_FORMAT, condition,
                        tip_cents, customer_result.final_tip_cents)
