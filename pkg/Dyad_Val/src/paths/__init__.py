"""Per-group path model and bootstrap of its indirect effects."""
from .bootstrap import IndirectEstimate, bootstrap_indirect, load_published_paths
from .path_model import (
    GroupPathModel, PredictorCoding, encode_predictors, fit_group_paths, fit_ols, indirect_effects
)

__all__ = [
    'GroupPathModel',
    'IndirectEstimate',
    'PredictorCoding',
    'bootstrap_indirect',
    'encode_predictors',
    'fit_group_paths',
    'fit_ols',
    'indirect_effects',
    'load_published_paths'
]
