"""Surface-level test battery: descriptives, Levene, Welch ANOVA, Games-Howell and TOST."""
import itertools
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..dataset.records import VARIABLES
from ..utils.config import logger
from ..utils.data import load_json
from ..utils.errors import DegenerateMarginError, DegenerateVarianceError, InvalidArgumentError
from .distributions import f_sf, studentized_range_sf, t_cdf, t_sf

LEVENE_CENTERS = ("mean", "median")
TOST_SE_MODES = ("welch", "pooled")


@dataclass(frozen=True)
class GroupSummary:
    """Size, mean and sample SD of one outcome variable in one group."""
    group_id: str
    variable: str
    n: int
    mean: float
    sd: float

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise InvalidArgumentError(f"unknown variable {self.variable!r}")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 2:
            raise InvalidArgumentError(f"{self.group_id}/{self.variable}: n must be an integer >= 2, got {self.n}")
        if not math.isfinite(self.mean) or not math.isfinite(self.sd) or self.sd < 0:
            raise InvalidArgumentError(f"{self.group_id}/{self.variable}: invalid mean/sd {self.mean}/{self.sd}")

    @property
    def variance(self) -> float:
        return self.sd * self.sd

    @property
    def sem_sq(self) -> float:
        """Squared standard error of the mean."""
        return self.variance / self.n

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class LeveneResult:
    variable: Optional[str]
    w_stat: float
    df1: int
    df2: int
    p_value: float
    center: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class WelchResult:
    variable: Optional[str]
    f_stat: float
    df1: int
    df2: float
    p_value: float
    partial_eta_sq: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PairwiseResult:
    variable: Optional[str]
    group_a: str
    group_b: str
    mean_diff: float
    se: float
    q_stat: float
    df: float
    p_value: float

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TostResult:
    group_id: str
    reference_id: str
    variable: str
    mean_diff: float
    lower_bound: float
    upper_bound: float
    se: float
    t_lower: float
    t_upper: float
    df: float
    p_value: float
    alpha: float
    is_equivalent: bool
    se_mode: str = "welch"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _values(values) -> np.ndarray:
    array = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if array.ndim != 1:
        raise InvalidArgumentError("expected a one-dimensional sample")
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError("sample contains non-finite values")
    return array


def describe(values) -> tuple:
    """Size, mean and sample standard deviation (n - 1 denominator).

    Args:
        values: Sample of at least two reals

    Returns:
        tuple: (n, mean, sd)
    """
    array = _values(values)
    if array.size < 2:
        raise InvalidArgumentError(f"describe needs n >= 2, got {array.size}")
    if np.ptp(array) == 0:
        return int(array.size), float(array[0]), 0.0
    return int(array.size), float(np.mean(array)), float(np.std(array, ddof=1))


def summarize(group_id: str, variable: str, values) -> GroupSummary:
    n, mean, sd = describe(values)
    return GroupSummary(group_id, variable, n, mean, sd)


def summaries_from_records(records: Iterable, variable: str, centered: bool = True,
                           group_order: Optional[Sequence[str]] = None) -> List[GroupSummary]:
    """One GroupSummary per group for ``variable`` of the given outcome records."""
    values: Dict[str, List[float]] = {}
    for record in records:
        value = record.centered(variable) if centered else record.raw(variable)
        values.setdefault(record.group_id, []).append(value)
    order = list(group_order) if group_order is not None else sorted(values)
    return [summarize(g, variable, values[g]) for g in order if g in values]


def welch_t(a: GroupSummary, b: GroupSummary) -> tuple:
    """Welch two-sample t test from summaries.

    Returns:
        tuple: (t, df, two-sided p)
    """
    se_sq = a.sem_sq + b.sem_sq
    if se_sq == 0:
        raise DegenerateVarianceError(f"{a.group_id} and {b.group_id} both have zero variance")
    t = (a.mean - b.mean) / math.sqrt(se_sq)
    df = _welch_df(a, b)
    return t, df, min(1.0, 2.0 * t_sf(abs(t), df))


def _welch_df(a: GroupSummary, b: GroupSummary) -> float:
    va, vb = a.sem_sq, b.sem_sq
    return (va + vb) ** 2 / (va * va / (a.n - 1) + vb * vb / (b.n - 1))


def levene(groups: Sequence, center: str = "mean", variable: Optional[str] = None) -> LeveneResult:
    """Levene test of equal variances: one-way ANOVA on absolute deviations.

    Args:
        groups: Raw samples, one per group
        center: ``mean`` (Levene) or ``median`` (Brown-Forsythe)

    Returns:
        LeveneResult
    """
    if center not in LEVENE_CENTERS:
        raise InvalidArgumentError(f"center must be one of {LEVENE_CENTERS}, got {center!r}")
    samples = [_values(g) for g in groups]
    if len(samples) < 2:
        raise InvalidArgumentError(f"levene needs at least 2 groups, got {len(samples)}")
    if any(s.size < 2 for s in samples):
        raise InvalidArgumentError("levene needs n >= 2 in every group")
    locate = np.mean if center == "mean" else np.median
    deviations = [np.abs(s - locate(s)) for s in samples]
    k = len(samples)
    total = sum(d.size for d in deviations)
    group_means = np.array([d.mean() for d in deviations])
    sizes = np.array([d.size for d in deviations], dtype=float)
    grand = float(np.sum(sizes * group_means) / total)
    between = float(np.sum(sizes * (group_means - grand) ** 2))
    within = float(sum(np.sum((d - m) ** 2) for d, m in zip(deviations, group_means)))
    df1, df2 = k - 1, total - k
    if within == 0:
        w_stat, p_value = (0.0, 1.0) if between == 0 else (math.inf, 0.0)
    else:
        w_stat = (df2 / df1) * between / within
        p_value = f_sf(w_stat, df1, df2)
    return LeveneResult(variable, w_stat, df1, df2, p_value, center)


def _check_summaries(summaries: Sequence[GroupSummary]):
    if len(summaries) < 2:
        raise InvalidArgumentError(f"need at least 2 groups, got {len(summaries)}")
    variables = {s.variable for s in summaries}
    if len(variables) > 1:
        raise InvalidArgumentError(f"summaries mix variables {sorted(variables)}")
    for s in summaries:
        if s.sd == 0:
            raise DegenerateVarianceError(f"{s.group_id}/{s.variable} has zero variance")


def welch_anova(summaries: Sequence[GroupSummary]) -> WelchResult:
    """Welch heteroscedastic one-way ANOVA with partial eta squared.

    Args:
        summaries: One GroupSummary per group, all for the same variable

    Returns:
        WelchResult
    """
    _check_summaries(summaries)
    k = len(summaries)
    n = np.array([s.n for s in summaries], dtype=float)
    m = np.array([s.mean for s in summaries], dtype=float)
    v = np.array([s.variance for s in summaries], dtype=float)
    w = n / v
    total_w = float(w.sum())
    weighted_mean = float(np.sum(w * m) / total_w)
    a = float(np.sum(w * (m - weighted_mean) ** 2)) / (k - 1)
    lam = float(np.sum((1.0 - w / total_w) ** 2 / (n - 1)))
    f_stat = a / (1.0 + 2.0 * (k - 2) * lam / (k * k - 1))
    df2 = (k * k - 1) / (3.0 * lam)
    p_value = f_sf(f_stat, k - 1, df2)

    grand = float(np.sum(n * m) / n.sum())
    ss_between = float(np.sum(n * (m - grand) ** 2))
    ss_within = float(np.sum((n - 1) * v))
    eta = ss_between / (ss_between + ss_within) if ss_between + ss_within > 0 else 0.0
    variable = summaries[0].variable
    logger.debug(f"Welch ANOVA {variable}: F({k - 1}, {df2:.2f}) = {f_stat:.3f}, p = {p_value:.4g}")
    return WelchResult(variable, f_stat, k - 1, df2, p_value, eta)


def games_howell(summaries: Sequence[GroupSummary], k: Optional[int] = None) -> List[PairwiseResult]:
    """Games-Howell comparisons for every pair, in input order (a before b).

    Args:
        summaries: One GroupSummary per group
        k: Number of groups for the studentized range (default: len(summaries))

    Returns:
        list: k(k-1)/2 PairwiseResults, mean_diff = mean_a - mean_b
    """
    _check_summaries(summaries)
    k = len(summaries) if k is None else k
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise InvalidArgumentError(f"k must be an integer >= 2, got {k!r}")
    results = []
    for a, b in itertools.combinations(summaries, 2):
        diff = a.mean - b.mean
        se = math.sqrt(a.sem_sq + b.sem_sq)
        q = abs(diff) / math.sqrt(se * se / 2.0)
        df = _welch_df(a, b)
        results.append(PairwiseResult(a.variable, a.group_id, b.group_id, diff, se, q, df,
                                      studentized_range_sf(q, int(k), df)))
    return results


def pooled_sd(a: GroupSummary, b: GroupSummary) -> float:
    return math.sqrt(((a.n - 1) * a.variance + (b.n - 1) * b.variance) / (a.n + b.n - 2))


def tost_equivalence(ai: GroupSummary, human: GroupSummary, margin_factor: float = 0.2,
                     alpha: float = 0.05, se_mode: str = "welch") -> TostResult:
    """Two one-sided tests of equivalence of ``ai`` to the ``human`` baseline.

    The margin is ``margin_factor`` times the pooled SD of the two groups.

    Args:
        ai: Summary of the tested group
        human: Summary of the baseline group
        margin_factor: Margin in pooled-SD units (> 0)
        alpha: Significance level
        se_mode: ``welch`` (unpooled SE, Welch df) or ``pooled`` (pooled SE, n1+n2-2 df)

    Returns:
        TostResult
    """
    if ai.variable != human.variable:
        raise InvalidArgumentError(f"cannot compare {ai.variable} with {human.variable}")
    if not margin_factor > 0:
        raise InvalidArgumentError(f"margin_factor must be > 0, got {margin_factor}")
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if se_mode not in TOST_SE_MODES:
        raise InvalidArgumentError(f"se_mode must be one of {TOST_SE_MODES}, got {se_mode!r}")
    sd = pooled_sd(ai, human)
    if sd == 0:
        raise DegenerateMarginError(f"{ai.group_id} vs {human.group_id} ({ai.variable}): pooled SD is zero")
    delta = margin_factor * sd
    diff = ai.mean - human.mean
    if se_mode == "welch":
        se = math.sqrt(ai.sem_sq + human.sem_sq)
        df = _welch_df(ai, human) if se > 0 else float(ai.n + human.n - 2)
    else:
        se = sd * math.sqrt(1.0 / ai.n + 1.0 / human.n)
        df = float(ai.n + human.n - 2)
    if se == 0:
        inside = -delta < diff < delta
        t_lower = math.copysign(math.inf, diff + delta)
        t_upper = math.copysign(math.inf, diff - delta)
        p_value = 0.0 if inside else 1.0
    else:
        t_lower = (diff + delta) / se
        t_upper = (diff - delta) / se
        p_value = max(t_sf(t_lower, df), t_cdf(t_upper, df))
    p_value = min(1.0, max(0.0, p_value))
    return TostResult(ai.group_id, human.group_id, ai.variable, diff, -delta, delta, se, t_lower, t_upper,
                      df, p_value, alpha, p_value < alpha, se_mode)


def load_summaries(path) -> Dict[str, List[GroupSummary]]:
    """Load a group-summary fixture.

    The file holds ``groups``: a list of ``{group_id, n, <variable>: {mean, sd}}``.

    Returns:
        dict: variable -> GroupSummaries in file order
    """
    data = load_json(path)
    try:
        groups = data["groups"]
        out = {v: [] for v in VARIABLES}
        for entry in groups:
            for v in VARIABLES:
                stats = entry[v]
                n = int(stats.get("n", entry["n"]))
                out[v].append(GroupSummary(entry["group_id"], v, n, float(stats["mean"]), float(stats["sd"])))
    except (KeyError, TypeError) as e:
        logger.error(f"Summary fixture {path} is malformed: {e}")
        raise InvalidArgumentError(f"{path}: malformed summary fixture ({e})") from e
    logger.debug(f"Loaded summaries of {len(groups)} groups from {path}")
    return out
