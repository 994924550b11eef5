"""Reflection and rotation symmetry detection as dense heatmap regression.

Modules, roughly in pipeline order: :mod:`labels` (rater labels and
consensus clustering), :mod:`heatmap` (ground-truth synthesis),
:mod:`augment`, :mod:`tensor` and :mod:`network` (a numpy conv net with
hand-written gradients), :mod:`trainer`, :mod:`evaluate`, :mod:`baseline`,
:mod:`synthdata` and the :mod:`cli`.  :mod:`estimators` wraps the stages in
scikit-learn style classes.
"""
from .estimators import (
    HeatmapSynthesizer,
    HoughReflectionDetector,
    LabelClusterer,
    RotationCorrelationDetector,
    SymmetryRegressor,
)
from .exceptions import SymnetError

__version__ = "0.1.0"

__all__ = [
    "HeatmapSynthesizer",
    "HoughReflectionDetector",
    "LabelClusterer",
    "RotationCorrelationDetector",
    "SymmetryRegressor",
    "SymnetError",
    "__version__",
]
