"""scikit-learn style wrappers around the pipeline stages.

Every estimator keeps its constructor arguments untouched (so ``get_params``
/ ``set_params`` / ``clone`` work) and stores learned state in attributes
with a trailing underscore.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import baseline
from .dataset import Sample
from .evaluate import evaluate_detector
from .exceptions import DimensionError, ParameterError
from .heatmap import SynthConfig, synth_kind
from .labels import KINDS, REFLECTION, ClusterConfig, cluster_all
from .network import NetConfig, load_checkpoint, predict, save_checkpoint
from .trainer import TrainSchedule, train


# -- input validation -----------------------------------------------------------

def check_kind(kind):
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")
    return kind


def check_image(image, name="image"):
    """Validate one H x W or H x W x C raster with finite values; returns an ndarray."""
    a = np.asarray(image)
    if a.ndim not in (2, 3):
        raise DimensionError(f"{name} must be H x W or H x W x C, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name} is empty")
    if a.dtype.kind not in "uif":
        raise ParameterError(f"{name} must be numeric, got dtype {a.dtype}")
    if a.dtype.kind == "f" and not np.all(np.isfinite(a)):
        raise ParameterError(f"{name} contains non-finite values")
    return a


def check_images(images):
    if isinstance(images, np.ndarray) and images.ndim in (2, 3):
        images = [images]
    out = [check_image(im, f"images[{i}]") for i, im in enumerate(images)]
    if not out:
        raise ParameterError("no images given")
    return out


def as_rgb(image):
    return image if image.ndim == 3 else np.repeat(image[..., None], 3, axis=2)


def check_gt_lists(gts, n):
    gts = list(gts)
    if len(gts) != n:
        raise ParameterError(f"got {n} images but {len(gts)} ground-truth lists")
    return [list(g) for g in gts]


# -- estimators ---------------------------------------------------------------------

class LabelClusterer(TransformerMixin, BaseEstimator):
    """Turn raw rater labels into consensus symmetries (stateless)."""

    def __init__(self, tau=5.0, min_labelers=5):
        self.tau = tau
        self.min_labelers = min_labelers

    def fit(self, labels=None, y=None):
        self.config_ = ClusterConfig(self.tau, self.min_labelers)
        return self

    def transform(self, labels):
        check_is_fitted(self, "config_")
        return cluster_all(list(labels), self.config_)


class HeatmapSynthesizer(TransformerMixin, BaseEstimator):
    """Ground-truth symmetry lists -> Gaussian heatmaps of a fixed size."""

    def __init__(self, kind=REFLECTION, shape=(64, 64), sigma=5.0):
        self.kind = kind
        self.shape = shape
        self.sigma = sigma

    def fit(self, gts=None, y=None):
        check_kind(self.kind)
        self.config_ = SynthConfig(self.sigma)
        return self

    def transform(self, gt_lists):
        """``gt_lists``: one list of ConsensusSymmetry per image; returns (n, H, W)."""
        check_is_fitted(self, "config_")
        h, w = self.shape
        return np.stack([synth_kind(g, self.kind, w, h, self.config_) for g in gt_lists])


class SymmetryRegressor(RegressorMixin, BaseEstimator):
    """The trainable heatmap network for one symmetry kind."""

    def __init__(self, kind=REFLECTION, trunk_channels=(8, 16, 32, 32, 32),
                 pyramid_rates=(2, 4, 8), pyramid_channels=16, pyramid_fusion="sum",
                 streams=(1.0,), base_lr=1e-2, power=0.9, total_batches=2000, batch_size=4,
                 momentum=0.9, augment=True, sigma=5.0, seed=0):
        self.kind = kind
        self.trunk_channels = trunk_channels
        self.pyramid_rates = pyramid_rates
        self.pyramid_channels = pyramid_channels
        self.pyramid_fusion = pyramid_fusion
        self.streams = streams
        self.base_lr = base_lr
        self.power = power
        self.total_batches = total_batches
        self.batch_size = batch_size
        self.momentum = momentum
        self.augment = augment
        self.sigma = sigma
        self.seed = seed

    def net_config(self):
        return NetConfig(trunk_channels=self.trunk_channels, pyramid_rates=self.pyramid_rates,
                         pyramid_channels=self.pyramid_channels,
                         pyramid_fusion=self.pyramid_fusion, streams=self.streams,
                         seed=self.seed)

    def schedule(self):
        return TrainSchedule(base_lr=self.base_lr, power=self.power,
                             total_batches=self.total_batches, batch_size=self.batch_size,
                             momentum=self.momentum, seed=self.seed, augment=self.augment,
                             sigma=self.sigma)

    def fit(self, images, gts):
        """``images``: rasters; ``gts``: one list of ConsensusSymmetry per image."""
        check_kind(self.kind)
        images = check_images(images)
        gts = check_gt_lists(gts, len(images))
        samples = [Sample(f"item{i:06d}", as_rgb(im), g)
                   for i, (im, g) in enumerate(zip(images, gts))]
        self.params_, self.log_ = train(self.net_config(), self.schedule(), samples, self.kind)
        return self

    def predict(self, images):
        """List of heatmaps (one per image; sizes may differ)."""
        check_is_fitted(self, "params_")
        return [predict(self.params_, as_rgb(im)) for im in check_images(images)]

    def score(self, images, gts, sample_weight=None):
        """Mean-curve max-F of this regressor on ``images`` (higher is better)."""
        return detector_score(self.predict(images), gts, self.kind)

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_)

    @classmethod
    def load(cls, path, kind=REFLECTION):
        params = load_checkpoint(path)
        c = params.config
        est = cls(kind=kind, trunk_channels=c.trunk_channels, pyramid_rates=c.pyramid_rates,
                  pyramid_channels=c.pyramid_channels, pyramid_fusion=c.pyramid_fusion,
                  streams=c.streams, seed=c.seed)
        est.params_ = params
        return est


def detector_score(heatmaps, gts, kind):
    gts = check_gt_lists(gts, len(heatmaps))
    keys = [f"item{i:06d}" for i in range(len(heatmaps))]
    report = evaluate_detector(dict(zip(keys, heatmaps)), dict(zip(keys, gts)), kind)
    return report.max_f


class _FixedDetector(BaseEstimator):
    """A detector with nothing to learn; ``fit`` only validates."""

    kind = REFLECTION

    def fit(self, images=None, gts=None):
        self.fitted_ = True
        return self

    def predict(self, images):
        check_is_fitted(self, "fitted_")
        return [self._detect(im) for im in check_images(images)]

    def score(self, images, gts):
        return detector_score(self.predict(images), gts, self.kind)


class HoughReflectionDetector(_FixedDetector):
    kind = REFLECTION

    def __init__(self, top_k=5, sigma=5.0):
        self.top_k = top_k
        self.sigma = sigma

    def _detect(self, image):
        return baseline.detect_reflection_baseline(image, self.top_k, self.sigma)


class RotationCorrelationDetector(_FixedDetector):
    kind = "rotation"

    def __init__(self, radius=16, stride=2):
        self.radius = radius
        self.stride = stride

    def _detect(self, image):
        return baseline.detect_rotation_baseline(image, self.radius, self.stride)
