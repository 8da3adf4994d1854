"""Scikit-learn style estimators wrapping the segmentation networks.

``TimeSeriesSegmenter`` exposes fit/predict/predict_proba/score so the
networks compose with sklearn tooling (clone, get_params, pipelines);
``StreamingDetector`` wraps the snapshot/ensemble pipeline for long streams.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .arch import ArchSpec, build_model, load_model
from .errors import ConfigError, DataError
from .stream import NormalizationSpec, detect
from .train import (TrainConfig, binarize_probs, finetune_freeze,
                    finetune_multipliers, mean_iou, train)
from .validation import as_batch, check_mask_batch


class TimeSeriesSegmenter(BaseEstimator):
    """Per-point anomaly segmentation with a 1D encoder/decoder network.

    Parameters mirror the architecture and training configuration. With
    ``base_model`` set (a model object or a model file path), ``fit`` runs
    transfer learning using ``strategy`` ("multipliers" or "freeze") instead
    of training from scratch; ``arch="munet"`` selects the multivariate
    transfer architecture.
    """

    def __init__(self, arch="unet", input_length=1024, channels=1, classes=3,
                 label_mode="multi_label", depth=5, base_width=16, pool=4,
                 kernel=3, epochs=20, batch_size=8, base_lr=1e-3, seed=0,
                 precision="float32", dice_epsilon=1.0, val_fraction=0.2,
                 threshold=0.5, base_model=None, strategy=None):
        self.arch = arch
        self.input_length = input_length
        self.channels = channels
        self.classes = classes
        self.label_mode = label_mode
        self.depth = depth
        self.base_width = base_width
        self.pool = pool
        self.kernel = kernel
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.seed = seed
        self.precision = precision
        self.dice_epsilon = dice_epsilon
        self.val_fraction = val_fraction
        self.threshold = threshold
        self.base_model = base_model
        self.strategy = strategy

    # -- internals ----------------------------------------------------------

    def _train_config(self):
        return TrainConfig(base_lr=self.base_lr, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.seed,
                           precision=self.precision,
                           dice_epsilon=self.dice_epsilon,
                           val_fraction=self.val_fraction,
                           threshold=self.threshold)

    def _resolve_base(self):
        if isinstance(self.base_model, (str, bytes)) or hasattr(self.base_model, "__fspath__"):
            return load_model(self.base_model)
        return self.base_model

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    # -- sklearn surface ------------------------------------------------------

    def fit(self, X, y):
        X = as_batch(X)
        y = check_mask_batch(y, n=len(X), length=X.shape[1])
        if X.shape[1] != self.input_length:
            raise DataError(f"series length {X.shape[1]} != input_length {self.input_length}")
        if y.shape[2] != self.classes:
            raise DataError(f"mask has {y.shape[2]} classes, estimator declares {self.classes}")
        config = self._train_config()
        if self.base_model is None:
            spec = ArchSpec(kind=self.arch, input_length=self.input_length,
                            channels=self.channels, classes=self.classes,
                            label_mode=self.label_mode, depth=self.depth,
                            base_width=self.base_width, pool=self.pool,
                            kernel=self.kernel)
            self.model_ = build_model(spec, seed=self.seed, dtype=config.dtype)
            self.report_ = train(self.model_, X, y, config)
        else:
            base = self._resolve_base()
            strategy = self.strategy or "multipliers"
            if strategy == "multipliers":
                fn = finetune_multipliers
            elif strategy == "freeze":
                fn = finetune_freeze
            else:
                raise ConfigError(f"unknown strategy {strategy!r}")
            channels = self.channels if self.arch == "munet" else None
            self.model_, self.report_ = fn(base, X, y, config,
                                           label_mode=self.label_mode,
                                           target_kind=self.arch,
                                           channels=channels)
        self.history_ = self.report_.history
        return self

    def predict_proba(self, X, batch_size=32):
        self._check_fitted()
        X = as_batch(X)
        outs = [self.model_.forward(X[i : i + batch_size], train=False)
                for i in range(0, len(X), batch_size)]
        return np.concatenate(outs, axis=0)

    def predict(self, X):
        probs = self.predict_proba(X)
        return binarize_probs(probs, self.model_.spec.label_mode, self.threshold)

    def score(self, X, y):
        y = check_mask_batch(y)
        return mean_iou(self.predict(X), y)


class StreamingDetector(BaseEstimator):
    """Windowed streaming detection with snapshot ensembling.

    ``model`` is a trained network or a model file path. ``predict`` returns
    the event list for a stream shaped (length, channels); ``predict_proba``
    the ensembled per-point probabilities.
    """

    def __init__(self, model=None, snapshot_length=None, coverage=3,
                 stride=None, normalization="fixed", center=0.0, scale=1.0,
                 threshold=0.5, min_len=2, merge_gap=2, ensemble_rule="mean"):
        self.model = model
        self.snapshot_length = snapshot_length
        self.coverage = coverage
        self.stride = stride
        self.normalization = normalization
        self.center = center
        self.scale = scale
        self.threshold = threshold
        self.min_len = min_len
        self.merge_gap = merge_gap
        self.ensemble_rule = ensemble_rule

    def fit(self, X=None, y=None):
        """Stateless; present for pipeline compatibility."""
        return self

    def _detect(self, X):
        if self.model is None:
            raise ConfigError("StreamingDetector needs a model")
        model = self.model
        if isinstance(model, (str, bytes)) or hasattr(model, "__fspath__"):
            model = load_model(model)
        norm = NormalizationSpec(mode=self.normalization, center=self.center,
                                 scale=self.scale)
        return detect(model, X, snapshot_length=self.snapshot_length,
                      coverage=self.coverage, stride=self.stride, norm=norm,
                      threshold=self.threshold, min_len=self.min_len,
                      merge_gap=self.merge_gap, rule=self.ensemble_rule)

    def predict(self, X):
        return self._detect(X).events

    def predict_proba(self, X):
        return self._detect(X).probs
