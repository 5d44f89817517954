"""Recursive path model: predictor coding, equation-wise least squares and indirect effects."""
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special

from ..design.experiment_design import OUTCOME_ORDER, ExperimentCondition, enumerate_conditions
from ..utils.config import DEFAULT_CONFIG, logger
from ..utils.errors import CodingError, CollinearityError, DegenerateVarianceError, InvalidArgumentError

SERVICE_OUTCOME = "service_outcome"
SO_X_ADJ = "service_outcome:adjustability"
TIP_CHANGE = "tip_change"
TC_X_VIS = "tip_change:visibility"
INTERCEPT = "intercept"

# Equation -> predictors, in the published row order
EQUATIONS = (
    ("tip_change", (SERVICE_OUTCOME, SO_X_ADJ)),
    ("joint", (TIP_CHANGE, TC_X_VIS, SERVICE_OUTCOME)),
    ("diff", (TIP_CHANGE, TC_X_VIS, SERVICE_OUTCOME)),
)
PATHS = tuple((lhs, rhs) for lhs, predictors in EQUATIONS for rhs in predictors)
VARIANCE_ORDER = ("tip_change", "diff", "joint")
INDIRECT_EFFECTS = ("indirect_joint", "indirect_diff")

LABELS = {
    "tip_change": "Tip change",
    "joint": "Joint satisfaction",
    "diff": "Differential satisfaction",
    SERVICE_OUTCOME: "Service outcome",
    SO_X_ADJ: "Service outcome × Adjustability",
    TC_X_VIS: "Tip change × Visibility",
    INTERCEPT: "Intercept",
}

SE_CONVENTIONS = ("ml", "ols")
MIN_GROUP_N = 50
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class PredictorCoding:
    """Numeric codes of the three design factors and which of them are centered."""

    service_outcome_codes: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CONFIG["coding"]["service_outcome_codes"]))
    adjustability_codes: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CONFIG["coding"]["adjustability_codes"]))
    visibility_codes: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CONFIG["coding"]["visibility_codes"]))
    center_service_outcome: bool = True
    center_adjustability: bool = False
    center_visibility: bool = False
    intercept: bool = False

    def __post_init__(self):
        codes = [self.service_outcome_codes.get(o.value) for o in OUTCOME_ORDER]
        if None in codes:
            missing = [o.value for o, c in zip(OUTCOME_ORDER, codes) if c is None]
            raise CodingError(f"service outcome levels without a code: {missing}")
        if any(b <= a for a, b in zip(codes, codes[1:])):
            raise CodingError(f"service outcome codes must increase with quality, got {codes}")
        for name, table, levels in (("adjustability", self.adjustability_codes, ("false", "true")),
                                    ("visibility", self.visibility_codes, ("after", "before"))):
            values = [table.get(level) for level in levels]
            if sorted(v for v in values if v is not None) != [0, 1]:
                raise CodingError(f"{name} codes must map {levels} onto 0 and 1, got {table}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PredictorCoding":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise CodingError(f"unknown coding keys: {unknown}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def codes(self, condition: ExperimentCondition) -> Tuple[float, float, float]:
        """Raw (service outcome, adjustability, visibility) codes of a condition."""
        try:
            return (float(self.service_outcome_codes[condition.service_outcome.value]),
                    float(self.adjustability_codes[str(condition.tip_adjustable).lower()]),
                    float(self.visibility_codes[condition.tip_visibility.value]))
        except KeyError as e:
            raise CodingError(f"no numeric code for level {e.args[0]!r}") from None


@dataclass(frozen=True)
class EncodedPredictors:
    service_outcome: float
    adjustability: float
    visibility: float
    tip_change: float

    @property
    def so_x_adj(self) -> float:
        return self.service_outcome * self.adjustability

    @property
    def tc_x_vis(self) -> float:
        return self.tip_change * self.visibility

    @property
    def vector(self) -> np.ndarray:
        """[SO_c, SO_c x Adj, TC_c, TC_c x Vis]"""
        return np.array([self.service_outcome, self.so_x_adj, self.tip_change, self.tc_x_vis])


def predictor_means(records: Iterable, coding: PredictorCoding) -> Dict[str, float]:
    """Means of the raw factor codes over ``records``."""
    codes = np.array([coding.codes(r.condition) for r in records], dtype=float)
    if codes.size == 0:
        raise InvalidArgumentError("cannot compute predictor means of an empty dataset")
    so, adj, vis = codes.mean(axis=0)
    return {"service_outcome": float(so), "adjustability": float(adj), "visibility": float(vis)}


def encode_predictors(record, coding: PredictorCoding, means: Dict[str, float]) -> EncodedPredictors:
    """Code and center the predictors of one centered outcome record.

    Interactions are formed after centering.
    """
    so, adj, vis = coding.codes(record.condition)
    if coding.center_service_outcome:
        so -= means["service_outcome"]
    if coding.center_adjustability:
        adj -= means["adjustability"]
    if coding.center_visibility:
        vis -= means["visibility"]
    return EncodedPredictors(so, adj, vis, record.centered("tip_change"))


@dataclass(frozen=True, eq=False)
class PathData:
    """Column arrays of one group, rows in canonical dyad_id order."""

    group_id: str
    dyad_ids: Tuple[str, ...]
    service_outcome: np.ndarray
    adjustability: np.ndarray
    visibility: np.ndarray
    tip_change: np.ndarray
    joint: np.ndarray
    diff: np.ndarray

    def __len__(self):
        return len(self.dyad_ids)

    def column(self, name: str) -> np.ndarray:
        if name == SO_X_ADJ:
            return self.service_outcome * self.adjustability
        if name == TC_X_VIS:
            return self.tip_change * self.visibility
        if name == INTERCEPT:
            return np.ones(len(self))
        return getattr(self, name)

    def design(self, predictors: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.column(p) for p in predictors])

    def take(self, index: np.ndarray) -> "PathData":
        return PathData(self.group_id, tuple(self.dyad_ids[i] for i in index),
                        *(getattr(self, name)[index] for name in
                          ("service_outcome", "adjustability", "visibility", "tip_change", "joint", "diff")))

    def within_group(self) -> "PathData":
        """Copy with tip change, joint and diff demeaned over these rows.

        Interactions are formed from the demeaned tip change.
        """
        return PathData(self.group_id, self.dyad_ids, self.service_outcome, self.adjustability, self.visibility,
                        *(v - v.mean() for v in (self.tip_change, self.joint, self.diff)))


def build_path_data(records: Iterable, coding: PredictorCoding,
                    means: Optional[Dict[str, float]] = None, group_id: Optional[str] = None) -> PathData:
    """Encode centered outcome records of one group into PathData.

    Args:
        records: Centered OutcomeRecords (one group)
        coding: Predictor coding
        means: Factor-code means used for centering (default: of ``records``)
        group_id: Group label (default: taken from the records)
    """
    records = sorted(records, key=lambda r: r.dyad_id)
    if not records:
        raise InvalidArgumentError(f"group {group_id!r} has no records")
    groups = {r.group_id for r in records}
    if group_id is None:
        if len(groups) != 1:
            raise InvalidArgumentError(f"records span several groups: {sorted(groups)}")
        group_id = records[0].group_id
    means = means or predictor_means(records, coding)
    encoded = [encode_predictors(r, coding, means) for r in records]
    return PathData(
        group_id=group_id,
        dyad_ids=tuple(r.dyad_id for r in records),
        service_outcome=np.array([e.service_outcome for e in encoded]),
        adjustability=np.array([e.adjustability for e in encoded]),
        visibility=np.array([e.visibility for e in encoded]),
        tip_change=np.array([e.tip_change for e in encoded]),
        joint=np.array([r.centered("joint") for r in records]),
        diff=np.array([r.centered("diff") for r in records]),
    )


@dataclass(frozen=True, eq=False)
class OlsFit:
    columns: Tuple[str, ...]
    coefficients: np.ndarray
    ses: np.ndarray
    p_values: np.ndarray
    residual_variance: float
    n: int


def _z_p_values(coefficients, ses):
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(ses > 0, np.abs(coefficients) / np.where(ses > 0, ses, 1.0), np.inf)
    z = np.where((ses == 0) & (coefficients == 0), 0.0, z)
    return np.clip(2.0 * special.ndtr(-z), 0.0, 1.0)


def fit_ols(y, X, columns: Optional[Sequence[str]] = None, se_convention: str = "ml") -> OlsFit:
    """Least squares through a QR decomposition.

    Args:
        y: Response vector (n)
        X: Design matrix (n x p)
        columns: Column names used in collinearity errors
        se_convention: ``ml`` (RSS/n) or ``ols`` (RSS/(n - p))

    Returns:
        OlsFit with z-test p-values

    Raises:
        CollinearityError: X is rank deficient
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(p))
    if se_convention not in SE_CONVENTIONS:
        raise InvalidArgumentError(f"se_convention must be one of {SE_CONVENTIONS}, got {se_convention!r}")
    if y.shape != (n,):
        raise InvalidArgumentError(f"y has shape {y.shape}, expected ({n},)")
    if n < p + 1:
        raise InvalidArgumentError(f"need at least {p + 1} rows for {p} columns, got {n}")

    q, r = np.linalg.qr(X, mode='reduced')
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    dependent = [columns[j] for j in range(p) if scale == 0 or diag[j] <= RANK_TOLERANCE * scale]
    if dependent:
        logger.debug(f"Rank-deficient design, dependent columns {dependent}")
        raise CollinearityError(f"design matrix is rank deficient in columns {dependent}", columns=dependent)

    coefficients = linalg.solve_triangular(r, q.T @ y)
    residuals = y - X @ coefficients
    rss = float(residuals @ residuals)
    sigma_sq = rss / n if se_convention == "ml" else rss / (n - p)
    r_inv = linalg.solve_triangular(r, np.eye(p))
    ses = np.sqrt(sigma_sq * np.sum(r_inv * r_inv, axis=1))
    return OlsFit(columns, coefficients, ses, _z_p_values(coefficients, ses), sigma_sq, n)


@dataclass(frozen=True)
class PathEstimate:
    """One row of a path table: regression (``~``) or residual variance (``~~``)."""
    lhs: str
    op: str
    rhs: str
    estimate: float
    se: float
    p_value: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class GroupPathModel:
    """Eight regression paths and three residual variances of one group."""

    group_id: str
    n: int
    paths: Tuple[PathEstimate, ...]
    variances: Tuple[PathEstimate, ...]
    intercepts: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if tuple((p.lhs, p.rhs) for p in self.paths) != PATHS:
            raise InvalidArgumentError(f"{self.group_id}: paths must follow the canonical order {PATHS}")
        if tuple(v.lhs for v in self.variances) != VARIANCE_ORDER:
            raise InvalidArgumentError(f"{self.group_id}: variances must follow {VARIANCE_ORDER}")
        for v in self.variances:
            if not v.estimate > 0:
                raise DegenerateVarianceError(f"{self.group_id}: residual variance of {v.lhs} is not positive")

    def path(self, lhs: str, rhs: str) -> PathEstimate:
        for p in self.paths:
            if (p.lhs, p.rhs) == (lhs, rhs):
                return p
        raise InvalidArgumentError(f"no path {lhs} ~ {rhs}")

    def coefficient(self, lhs: str, rhs: str) -> float:
        return self.path(lhs, rhs).estimate

    def residual_variance(self, variable: str) -> float:
        return next(v.estimate for v in self.variances if v.lhs == variable)

    def rows(self) -> List[PathEstimate]:
        return list(self.paths) + list(self.variances)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "group_id": self.group_id,
            "n": self.n,
            "paths": [p.to_dict() for p in self.paths],
            "variances": [v.to_dict() for v in self.variances],
            "intercepts": dict(self.intercepts),
        }


def fit_group_paths(data: PathData, se_convention: str = "ml", intercept: bool = False,
                    min_n: int = MIN_GROUP_N) -> GroupPathModel:
    """Fit the three path equations of one group by least squares.

    TC ~ SO + SO x Adj; Joint ~ TC + TC x Vis + SO; Diff ~ TC + TC x Vis + SO.
    Outcomes are demeaned within the group first, so pooled centering leaves
    no group offset in the slopes.

    Args:
        data: Encoded group data
        se_convention: ``ml`` or ``ols`` residual variance
        intercept: Add an intercept column to every equation
        min_n: Estimation floor

    Returns:
        GroupPathModel
    """
    n = len(data)
    if n < min_n:
        logger.error(f"Group {data.group_id}: {n} dyads, path estimation needs at least {min_n}")
        raise InvalidArgumentError(f"group {data.group_id!r} has {n} dyads, fewer than {min_n}")
    data = data.within_group()
    paths, variances, intercepts = [], {}, {}
    for lhs, predictors in EQUATIONS:
        columns = (INTERCEPT,) + predictors if intercept else predictors
        fit = fit_ols(data.column(lhs), data.design(columns), columns, se_convention)
        for name, beta, se, p in zip(fit.columns, fit.coefficients, fit.ses, fit.p_values):
            if name == INTERCEPT:
                intercepts[lhs] = float(beta)
            else:
                paths.append(PathEstimate(lhs, "~", name, float(beta), float(se), float(p)))
        # ML variance estimate has asymptotic SE sigma^2 * sqrt(2/n)
        var_se = fit.residual_variance * math.sqrt(2.0 / n)
        var_p = float(_z_p_values(np.array([fit.residual_variance]), np.array([var_se]))[0])
        variances[lhs] = PathEstimate(lhs, "~~", lhs, fit.residual_variance, var_se, var_p)
    model = GroupPathModel(data.group_id, n, tuple(paths), tuple(variances[v] for v in VARIANCE_ORDER),
                           intercepts)
    logger.debug(f"Fitted paths for {data.group_id} (n={n})")
    return model


def indirect_effects(model: GroupPathModel) -> Dict[str, float]:
    """Products of the moderated first-stage path with each moderated second-stage path."""
    first = model.coefficient("tip_change", SO_X_ADJ)
    return {
        "indirect_joint": first * model.coefficient("joint", TC_X_VIS),
        "indirect_diff": first * model.coefficient("diff", TC_X_VIS),
    }


def simulate_path_data(model: GroupPathModel, coding: PredictorCoding, replicates_per_cell: int,
                       rng: np.random.Generator, group_id: Optional[str] = None) -> PathData:
    """Draw a balanced dataset from the linear path system of ``model``.

    Every design cell gets ``replicates_per_cell`` rows; errors are normal with
    the model's residual variances.
    """
    conditions = [c for c in enumerate_conditions() for _ in range(replicates_per_cell)]
    codes = np.array([coding.codes(c) for c in conditions], dtype=float)
    so, adj, vis = codes.T.copy()
    if coding.center_service_outcome:
        so -= so.mean()
    if coding.center_adjustability:
        adj -= adj.mean()
    if coding.center_visibility:
        vis -= vis.mean()
    n = len(conditions)
    beta = {(p.lhs, p.rhs): p.estimate for p in model.paths}
    sd = {v.lhs: math.sqrt(v.estimate) for v in model.variances}
    tc = beta[("tip_change", SERVICE_OUTCOME)] * so + beta[("tip_change", SO_X_ADJ)] * so * adj \
        + rng.normal(0.0, sd["tip_change"], n)
    outcomes = {}
    for lhs in ("joint", "diff"):
        outcomes[lhs] = (beta[(lhs, TIP_CHANGE)] * tc + beta[(lhs, TC_X_VIS)] * tc * vis
                         + beta[(lhs, SERVICE_OUTCOME)] * so + rng.normal(0.0, sd[lhs], n))
    dyad_ids = tuple(f"{c.key}#{i % replicates_per_cell + 1}" for i, c in enumerate(conditions))
    order = np.argsort(np.array(dyad_ids))
    data = PathData(group_id or model.group_id, dyad_ids, so, adj, vis, tc, outcomes["joint"], outcomes["diff"])
    return data.take(order)


def published_p(value) -> float:
    """Numeric p from a published cell; ``"<0.001"`` becomes its bound."""
    if isinstance(value, str):
        text = value.strip()
        return float(text[1:]) if text.startswith("<") else float(text)
    return float(value)


def model_from_dict(data: Dict[str, Any]) -> GroupPathModel:
    """GroupPathModel from ``to_dict`` output or a published-table entry."""
    paths = tuple(PathEstimate(p["lhs"], "~", p["rhs"], float(p["estimate"]), float(p["se"]),
                               published_p(p["p_value"])) for p in data["paths"])
    variances = tuple(PathEstimate(v["lhs"], "~~", v["lhs"], float(v["estimate"]), float(v["se"]),
                                   published_p(v["p_value"])) for v in data["variances"])
    return GroupPathModel(data["group_id"], int(data["n"]), paths, variances, dict(data.get("intercepts", {})))

