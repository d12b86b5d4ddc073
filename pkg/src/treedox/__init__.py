"""TreeDOX: hyperparameter-free tree-ensemble forecasting of chaotic series.

The pipeline couples a time-delay overembedding (explicit short-term
memory) with two extra-trees regressors: the first ranks delay features
by impurity importance, the second is retrained on the features that beat
the uniform-importance null rate and drives closed- or open-loop
forecasts.
"""

from .embedding import (
    OverembeddingSpec,
    TimeSeries,
    as_timeseries,
    build_overembedding,
    build_training_pairs,
    reduce_features,
)
from .etr import EtrConfig, EtrEnsemble, feature_importances, fit, predict

__all__ = [
    "EtrConfig",
    "EtrEnsemble",
    "OverembeddingSpec",
    "TimeSeries",
    "as_timeseries",
    "build_overembedding",
    "build_training_pairs",
    "feature_importances",
    "fit",
    "predict",
]

__version__ = "0.1.0"
