"""Surface-level statistics and their distribution kernels."""
from .distributions import f_cdf, studentized_range_cdf, t_cdf
from .surface import (
    GroupSummary, describe, games_howell, levene, tost_equivalence, welch_anova
)

__all__ = [
    'GroupSummary',
    'describe',
    'f_cdf',
    'games_howell',
    'levene',
    'studentized_range_cdf',
    't_cdf',
    'tost_equivalence',
    'welch_anova'
]
