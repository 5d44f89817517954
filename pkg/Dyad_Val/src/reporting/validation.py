"""Dual validation: equivalence summary, pathway fidelity and model rankings."""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..dataset.records import VARIABLES
from ..paths.bootstrap import IndirectEstimate
from ..paths.path_model import INDIRECT_EFFECTS, LABELS, PATHS, GroupPathModel, model_from_dict
from ..stats.surface import GroupSummary, LeveneResult, PairwiseResult, TostResult, WelchResult
from ..utils.config import logger
from ..utils.errors import InvalidArgumentError

PATTERN_NAMES = tuple(f"{lhs}~{rhs}" for lhs, rhs in PATHS) + INDIRECT_EFFECTS
PATTERN_LENGTH = len(PATTERN_NAMES)

# Raw-scale histogram edges: joint moves in half points, diff in whole points
HISTOGRAM_EDGES = {
    "joint": [0.75 + 0.5 * i for i in range(14)],
    "diff": [-6.5 + i for i in range(14)],
}
HISTOGRAM_VARIABLES = ("joint", "diff")


def pattern_label(name: str) -> str:
    if "~" not in name:
        return name
    lhs, rhs = name.split("~", 1)
    return f"{LABELS[lhs]} ~ {LABELS[rhs]}"


@dataclass(frozen=True)
class PatternEntry:
    name: str
    significant: bool
    sign: int


@dataclass(frozen=True)
class PatternVector:
    """Significance and sign of the 8 direct paths and 2 indirect effects."""

    group_id: str
    entries: Tuple[PatternEntry, ...]

    def __post_init__(self):
        if tuple(e.name for e in self.entries) != PATTERN_NAMES:
            raise InvalidArgumentError(f"{self.group_id}: pattern must hold {PATTERN_LENGTH} entries "
                                       f"in canonical order")

    @property
    def significance(self) -> Tuple[bool, ...]:
        return tuple(e.significant for e in self.entries)

    @property
    def signs(self) -> Tuple[int, ...]:
        return tuple(e.sign for e in self.entries)

    def to_dict(self) -> Dict[str, Any]:
        return {"group_id": self.group_id, "entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PatternVector":
        return cls(data["group_id"], tuple(PatternEntry(**e) for e in data["entries"]))


@dataclass(frozen=True)
class FidelityScore:
    group_id: str
    reference_id: str
    matches: int
    flags: Tuple[bool, ...]
    sign_disagreements: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FidelityScore":
        return cls(data["group_id"], data["reference_id"], int(data["matches"]), tuple(data["flags"]),
                   tuple(data.get("sign_disagreements", ())))


def _sign(value: float) -> int:
    return int(np.sign(value))


def _indirect_fields(entry) -> Tuple[float, bool]:
    if isinstance(entry, IndirectEstimate):
        return entry.point, entry.significant
    if isinstance(entry, Mapping):
        point = entry["point"] if "point" in entry else entry["estimate"]
        significant = entry["significant"]
        if isinstance(significant, str):
            significant = significant.strip().lower() in ("yes", "true")
        return float(point), bool(significant)
    raise InvalidArgumentError(f"cannot read an indirect effect from {type(entry).__name__}")


def significance_pattern(model: GroupPathModel, indirect: Mapping[str, Any], alpha: float = 0.05) -> PatternVector:
    """Pattern of a fitted (or published) model and its two indirect effects.

    Direct paths are significant when p < alpha; indirect effects carry
    their own significance flag.
    """
    entries = [PatternEntry(f"{p.lhs}~{p.rhs}", p.p_value < alpha, _sign(p.estimate)) for p in model.paths]
    for effect in INDIRECT_EFFECTS:
        if effect not in indirect:
            raise InvalidArgumentError(f"{model.group_id}: missing indirect effect {effect}")
        point, significant = _indirect_fields(indirect[effect])
        entries.append(PatternEntry(effect, significant, _sign(point)))
    return PatternVector(model.group_id, tuple(entries))


def fidelity_score(ai: PatternVector, human: PatternVector) -> FidelityScore:
    """Count positions where the two patterns agree on significance.

    Signs are not scored; positions where both are significant with
    opposite signs are listed as sign disagreements.
    """
    if len(ai.entries) != len(human.entries):
        raise InvalidArgumentError(f"pattern lengths differ: {len(ai.entries)} vs {len(human.entries)}")
    flags = tuple(a.significant == h.significant for a, h in zip(ai.entries, human.entries))
    disagreements = tuple(a.name for a, h in zip(ai.entries, human.entries)
                          if a.significant and h.significant and a.sign != h.sign)
    return FidelityScore(ai.group_id, human.group_id, sum(flags), flags, disagreements)


def competition_ranks(scores: Sequence[Tuple[str, int]]) -> List[Tuple[int, str, int]]:
    """Rank descending by score; ties share the rank and the next rank skips (1, 2, 2, 4).

    Tied groups keep their input order.
    """
    ordered = sorted(enumerate(scores), key=lambda item: (-item[1][1], item[0]))
    ranks = []
    for position, (_, (group_id, score)) in enumerate(ordered):
        if position and score == ranks[-1][2]:
            rank = ranks[-1][0]
        else:
            rank = position + 1
        ranks.append((rank, group_id, score))
    return ranks


@dataclass
class EquivalenceSummary:
    table: Dict[str, Dict[str, TostResult]]
    measures: Dict[str, int]
    ranking: List[Tuple[int, str, int]]


def equivalence_summary(results: Iterable[TostResult], groups: Optional[Sequence[str]] = None,
                        variables: Sequence[str] = VARIABLES) -> EquivalenceSummary:
    """Per-model count of equivalent measures and the surface ranking.

    Raises:
        InvalidArgumentError: A (model, variable) cell is missing or duplicated
    """
    table: Dict[str, Dict[str, TostResult]] = {}
    for r in results:
        cells = table.setdefault(r.group_id, {})
        if r.variable in cells:
            raise InvalidArgumentError(f"duplicate TOST result for {r.group_id}/{r.variable}")
        cells[r.variable] = r
    order = list(groups) if groups is not None else list(table)
    if not order:
        raise InvalidArgumentError("no TOST results")
    missing = [f"{g}/{v}" for g in order for v in variables if v not in table.get(g, {})]
    if missing:
        raise InvalidArgumentError(f"incomplete equivalence grid, missing {missing}")
    measures = {g: sum(1 for v in variables if table[g][v].is_equivalent) for g in order}
    return EquivalenceSummary({g: table[g] for g in order}, measures,
                              competition_ranks([(g, measures[g]) for g in order]))


@dataclass
class ValidationReport:
    """Everything the report files show, plus the configuration echo."""

    baseline_id: str
    groups: List[str]
    config: Dict[str, Any]
    descriptives: Dict[str, List[GroupSummary]] = field(default_factory=dict)
    levene: Dict[str, LeveneResult] = field(default_factory=dict)
    welch: Dict[str, WelchResult] = field(default_factory=dict)
    games_howell: Dict[str, List[PairwiseResult]] = field(default_factory=dict)
    tost: List[TostResult] = field(default_factory=list)
    measures: Dict[str, int] = field(default_factory=dict)
    surface_ranking: List[Tuple[int, str, int]] = field(default_factory=list)
    models: Dict[str, GroupPathModel] = field(default_factory=dict)
    indirect: Dict[str, Dict[str, IndirectEstimate]] = field(default_factory=dict)
    patterns: Dict[str, PatternVector] = field(default_factory=dict)
    fidelity: Dict[str, FidelityScore] = field(default_factory=dict)
    process_ranking: List[Tuple[int, str, int]] = field(default_factory=list)
    sign_warnings: List[str] = field(default_factory=list)
    histograms: Dict[str, Dict[str, List[int]]] = field(default_factory=dict)

    @property
    def ai_groups(self) -> List[str]:
        return [g for g in self.groups if g != self.baseline_id]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline_id": self.baseline_id,
            "groups": list(self.groups),
            "config": self.config,
            "descriptives": {v: [s.to_dict() for s in rows] for v, rows in self.descriptives.items()},
            "levene": {v: r.to_dict() for v, r in self.levene.items()},
            "welch": {v: r.to_dict() for v, r in self.welch.items()},
            "games_howell": {v: [r.to_dict() for r in rows] for v, rows in self.games_howell.items()},
            "tost": [r.to_dict() for r in self.tost],
            "measures": dict(self.measures),
            "surface_ranking": [list(r) for r in self.surface_ranking],
            "models": {g: m.to_dict() for g, m in self.models.items()},
            "indirect": {g: {e: v.to_dict() for e, v in effects.items()} for g, effects in self.indirect.items()},
            "patterns": {g: p.to_dict() for g, p in self.patterns.items()},
            "fidelity": {g: f.to_dict() for g, f in self.fidelity.items()},
            "process_ranking": [list(r) for r in self.process_ranking],
            "sign_warnings": list(self.sign_warnings),
            "histograms": self.histograms,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ValidationReport":
        return cls(
            baseline_id=data["baseline_id"],
            groups=list(data["groups"]),
            config=dict(data["config"]),
            descriptives={v: [GroupSummary(**s) for s in rows] for v, rows in data.get("descriptives", {}).items()},
            levene={v: LeveneResult(**r) for v, r in data.get("levene", {}).items()},
            welch={v: WelchResult(**r) for v, r in data.get("welch", {}).items()},
            games_howell={v: [PairwiseResult(**r) for r in rows] for v, rows in data.get("games_howell", {}).items()},
            tost=[TostResult(**r) for r in data.get("tost", [])],
            measures={g: int(c) for g, c in data.get("measures", {}).items()},
            surface_ranking=[tuple(r) for r in data.get("surface_ranking", [])],
            models={g: model_from_dict(m) for g, m in data.get("models", {}).items()},
            indirect={g: {e: IndirectEstimate(**v) for e, v in effects.items()}
                      for g, effects in data.get("indirect", {}).items()},
            patterns={g: PatternVector.from_dict(p) for g, p in data.get("patterns", {}).items()},
            fidelity={g: FidelityScore.from_dict(f) for g, f in data.get("fidelity", {}).items()},
            process_ranking=[tuple(r) for r in data.get("process_ranking", [])],
            sign_warnings=list(data.get("sign_warnings", [])),
            histograms=data.get("histograms", {}),
        )


def score_processes(models: Mapping[str, GroupPathModel], indirect: Mapping[str, Mapping[str, Any]],
                    baseline_id: str, alpha: float = 0.05, groups: Optional[Sequence[str]] = None):
    """Patterns, fidelity scores, process ranking and sign warnings of every AI group.

    Returns:
        tuple: (patterns, fidelity, ranking, sign warnings)
    """
    if baseline_id not in models:
        raise InvalidArgumentError(f"baseline group {baseline_id!r} has no path model")
    order = [g for g in (groups or list(models)) if g in models]
    patterns = {g: significance_pattern(models[g], indirect.get(g, {}), alpha) for g in order}
    human = patterns[baseline_id]
    fidelity, warnings = {}, []
    for g in order:
        if g == baseline_id:
            continue
        score = fidelity_score(patterns[g], human)
        fidelity[g] = score
        for name in score.sign_disagreements:
            warnings.append(f"{g}: {pattern_label(name)} is significant in both groups with opposite signs")
    for message in warnings:
        logger.warning(message)
    ranking = competition_ranks([(g, fidelity[g].matches) for g in fidelity])
    return patterns, fidelity, ranking, warnings


def histogram_counts(records: Iterable, groups: Sequence[str]) -> Dict[str, Dict[str, List[int]]]:
    """Raw joint/differential satisfaction counts per group on fixed edges."""
    values: Dict[str, Dict[str, List[float]]] = {g: {v: [] for v in HISTOGRAM_VARIABLES} for g in groups}
    for r in records:
        if r.group_id in values:
            for v in HISTOGRAM_VARIABLES:
                values[r.group_id][v].append(r.raw(v))
    return {
        g: {v: [int(c) for c in np.histogram(values[g][v], bins=HISTOGRAM_EDGES[v])[0]] for v in HISTOGRAM_VARIABLES}
        for g in groups if any(values[g].values())
    }


def shortfalls(report: ValidationReport, min_measures: int = 0, min_fidelity: int = 0) -> List[str]:
    """Models below the configured equivalence or fidelity thresholds."""
    messages = []
    for g in report.ai_groups:
        if g in report.measures and report.measures[g] < min_measures:
            messages.append(f"{g}: {report.measures[g]} equivalent measures < {min_measures}")
        if g in report.fidelity and report.fidelity[g].matches < min_fidelity:
            messages.append(f"{g}: fidelity {report.fidelity[g].matches}/{PATTERN_LENGTH} < {min_fidelity}")
    return messages
