"""Nonparametric bootstrap of the indirect effects with bias-corrected percentile intervals."""
import concurrent.futures
import time
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import special

from ..design.experiment_design import derive_seed
from ..utils.config import logger
from ..utils.data import load_json
from ..utils.errors import BootstrapAbortError, InvalidArgumentError
from .path_model import (
    INDIRECT_EFFECTS, GroupPathModel, PathData, fit_group_paths, indirect_effects, model_from_dict, published_p
)

MIN_RESAMPLES = 1000
CHUNK_SIZE = 250
GRAM_TOLERANCE = 1e-12
P_VALUE_RULE = "sign_proportion"


@dataclass(frozen=True)
class IndirectEstimate:
    group_id: str
    effect_id: str
    point: float
    bootstrap_se: float
    ci_low: float
    ci_high: float
    p_value: float
    significant: bool
    n_resamples: int
    failed_resamples: int
    outside_interval: bool = False
    p_value_rule: str = P_VALUE_RULE

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _batch_solve(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Least squares for a stack of designs through their Gram matrices.

    Args:
        X: (m, n, p) designs
        Y: (m, n, k) responses

    Returns:
        tuple: (full-rank mask (m,), coefficients (m, p, k) with NaN where rank deficient)
    """
    gram = np.einsum('mni,mnj->mij', X, X)
    cross = np.einsum('mni,mnk->mik', X, Y)
    eig = np.linalg.eigvalsh(gram)
    ok = (eig[:, -1] > 0) & (eig[:, 0] > GRAM_TOLERANCE * eig[:, -1])
    coefficients = np.full(cross.shape, np.nan)
    if ok.any():
        coefficients[ok] = np.linalg.solve(gram[ok], cross[ok])
    return ok, coefficients


def _resample_chunk(columns: Dict[str, np.ndarray], seed: int, start: int, stop: int,
                    intercept: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Interaction coefficients for resamples ``start``..``stop - 1``.

    Resample ``b`` draws its indices from ``SeedSequence([seed, b])`` so any
    chunking yields the same draws. Outcomes are demeaned within each
    resample before the interactions are formed.
    """
    n = columns["tip_change"].size
    index = np.stack([np.random.default_rng(np.random.SeedSequence([seed, b])).integers(0, n, n)
                      for b in range(start, stop)])
    so, adj, vis = columns["service_outcome"][index], columns["adjustability"][index], columns["visibility"][index]
    tc, joint, diff = columns["tip_change"][index], columns["joint"][index], columns["diff"][index]
    tc, joint, diff = (v - v.mean(axis=1, keepdims=True) for v in (tc, joint, diff))
    first = [so, so * adj]
    second = [tc, tc * vis, so]
    if intercept:
        ones = np.ones_like(so)
        first.insert(0, ones)
        second.insert(0, ones)
    offset = 1 if intercept else 0
    ok1, beta1 = _batch_solve(np.stack(first, axis=-1), tc[..., None])
    ok2, beta2 = _batch_solve(np.stack(second, axis=-1), np.stack([joint, diff], axis=-1))
    return ok1 & ok2, beta1[:, 1 + offset, 0], beta2[:, 1 + offset, 0], beta2[:, 1 + offset, 1]


def _bias_corrected_interval(theta_star: np.ndarray, point: float, alpha: float) -> Tuple[float, float, bool]:
    """Bias-corrected percentile interval.

    Returns:
        tuple: (low, high, proportion clipped)
    """
    count = theta_star.size
    proportion = np.count_nonzero(theta_star < point) / count
    clipped = not 0 < proportion < 1
    proportion = min(max(proportion, 0.5 / count), 1 - 0.5 / count)
    z0 = special.ndtri(proportion)
    z = special.ndtri(1 - alpha / 2)
    levels = special.ndtr([2 * z0 - z, 2 * z0 + z])
    low, high = np.quantile(theta_star, levels)
    return float(low), float(high), clipped


def summarize_effect(group_id: str, effect_id: str, point: float, theta_star: np.ndarray, alpha: float,
                     failed: int = 0) -> IndirectEstimate:
    """IndirectEstimate from the bootstrap distribution of one effect."""
    count = theta_star.size
    low, high, clipped = _bias_corrected_interval(theta_star, point, alpha)
    if clipped:
        logger.warning(f"{group_id} {effect_id}: every resample fell on one side of the point estimate")
    p_value = min(1.0, 2.0 * min(np.count_nonzero(theta_star <= 0), np.count_nonzero(theta_star >= 0)) / count)
    outside = not low <= point <= high
    if outside:
        logger.warning(f"{group_id} {effect_id}: point {point:.4g} lies outside its bias-corrected "
                       f"interval [{low:.4g}, {high:.4g}]")
    return IndirectEstimate(group_id, effect_id, float(point), float(np.std(theta_star, ddof=1)), low, high,
                            float(p_value), not low <= 0.0 <= high, count, failed, outside)


def bootstrap_indirect(data: PathData, B: int = 5000, master_seed: int = 42, alpha: float = 0.05,
                       jobs: int = 1, failure_limit: float = 0.01, intercept: bool = False,
                       model: Optional[GroupPathModel] = None) -> Dict[str, IndirectEstimate]:
    """Bootstrap both indirect effects of one group.

    Dyads are resampled with replacement against canonical dyad_id order, the
    three equations are refitted and both interaction products recomputed.
    Rank-deficient resamples are skipped and counted.

    Args:
        data: Encoded group data
        B: Number of resamples (>= 1000)
        master_seed: Run seed; resample seeds derive from it and the group id
        alpha: Interval level is 1 - alpha
        jobs: Worker processes (1 = serial, same result either way)
        failure_limit: Largest tolerated fraction of skipped resamples
        intercept: Fit intercepts
        model: Already fitted model of ``data`` (refitted when omitted)

    Returns:
        dict: effect_id -> IndirectEstimate

    Raises:
        BootstrapAbortError: Skipped fraction exceeds ``failure_limit``
    """
    if isinstance(B, bool) or int(B) != B or B < MIN_RESAMPLES:
        raise InvalidArgumentError(f"B must be an integer >= {MIN_RESAMPLES}, got {B!r}")
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    B = int(B)
    start_time = time.time()
    data = data.take(np.argsort(np.array(data.dyad_ids), kind='stable'))
    model = model or fit_group_paths(data, intercept=intercept)
    points = indirect_effects(model)
    seed = derive_seed(master_seed, "bootstrap", data.group_id)
    columns = {name: getattr(data, name) for name in
               ("service_outcome", "adjustability", "visibility", "tip_change", "joint", "diff")}
    bounds = [(s, min(s + CHUNK_SIZE, B)) for s in range(0, B, CHUNK_SIZE)]

    if jobs and jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = [executor.submit(_resample_chunk, columns, seed, s, e, intercept) for s, e in bounds]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_resample_chunk(columns, seed, s, e, intercept) for s, e in bounds]

    ok = np.concatenate([c[0] for c in chunks])
    first = np.concatenate([c[1] for c in chunks])
    second = {"indirect_joint": np.concatenate([c[2] for c in chunks]),
              "indirect_diff": np.concatenate([c[3] for c in chunks])}
    failed = int(B - ok.sum())
    if failed / B > failure_limit:
        logger.error(f"{data.group_id}: {failed}/{B} bootstrap resamples rank deficient")
        raise BootstrapAbortError(f"{data.group_id}: {failed} of {B} resamples were rank deficient "
                                  f"(limit {failure_limit:.2%})")
    if failed:
        logger.warning(f"{data.group_id}: skipped {failed}/{B} rank-deficient bootstrap resamples")

    estimates = {
        effect: summarize_effect(data.group_id, effect, points[effect], first[ok] * second[effect][ok], alpha, failed)
        for effect in INDIRECT_EFFECTS
    }
    logger.info(f"Bootstrap {data.group_id}: B={B} in {time.time() - start_time:.2f}s")
    return estimates


def load_published_paths(path) -> Tuple[Dict[str, GroupPathModel], Dict[str, Dict[str, IndirectEstimate]]]:
    """Load published path tables and bootstrapped indirect-effect rows.

    Returns:
        tuple: (group -> GroupPathModel, group -> effect_id -> IndirectEstimate)
    """
    data = load_json(path)
    try:
        models = {entry["group_id"]: model_from_dict(entry) for entry in data["groups"]}
        indirect: Dict[str, Dict[str, IndirectEstimate]] = {}
        for row in data.get("indirect", []):
            indirect.setdefault(row["group_id"], {})[row["effect_id"]] = IndirectEstimate(
                group_id=row["group_id"],
                effect_id=row["effect_id"],
                point=float(row["point"]),
                bootstrap_se=float(row["bootstrap_se"]),
                ci_low=float(row["ci_low"]),
                ci_high=float(row["ci_high"]),
                p_value=published_p(row["p_value"]),
                significant=bool(row["significant"]),
                n_resamples=int(data.get("bootstrap_B", 0)),
                failed_resamples=0,
                p_value_rule="published",
            )
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Path fixture {path} is malformed: {e}")
        raise InvalidArgumentError(f"{path}: malformed path fixture ({e})") from e
    logger.debug(f"Loaded published paths of {len(models)} groups from {path}")
    return models, indirect
