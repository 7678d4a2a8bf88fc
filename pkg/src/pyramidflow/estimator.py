"""Scikit-learn style front end for the motion models.

``MotionPyramidEstimator.fit`` runs the unsupervised training loop on a set
of (source, target) image pairs; ``predict`` returns dense flows, optionally
with multi-step progressive compensation. Hyper-parameters follow the
sklearn convention (plain attributes, ``get_params``/``set_params`` via
``BaseEstimator``), so the model drops into pipelines and searches.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .compensation import progressive_flow
from .losses import LossWeights
from .metrics import epe
from .network import ArchConfig, init_model, load_model, save_model, train_unsupervised
from .validation import check_pair_array


class MotionPyramidEstimator(BaseEstimator):
    """Dense 2-D motion estimator trained without flow supervision.

    Parameters mirror the architecture and training knobs; ``variant`` picks
    the multi-scale model ("pyramid") or the coarse-features-only baseline
    ("single_scale"). ``steps`` selects how many progressive compensation
    passes ``predict`` runs (1 = plain single forward pass).
    """

    def __init__(self, num_levels=4, encoder_channels=(8, 16, 32, 32),
                 kernel_size=3, leaky_slope=0.1, lateral_channels=8,
                 decoder_channels=16, head_channels=8, fusion_channels=16,
                 variant="pyramid", smooth_weight=0.05, epochs=30, lr=2e-3,
                 seed=0, steps=1, dtype="float32"):
        self.num_levels = num_levels
        self.encoder_channels = encoder_channels
        self.kernel_size = kernel_size
        self.leaky_slope = leaky_slope
        self.lateral_channels = lateral_channels
        self.decoder_channels = decoder_channels
        self.head_channels = head_channels
        self.fusion_channels = fusion_channels
        self.variant = variant
        self.smooth_weight = smooth_weight
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.steps = steps
        self.dtype = dtype

    def _arch_config(self):
        return ArchConfig(num_levels=self.num_levels,
                          encoder_channels=tuple(self.encoder_channels),
                          kernel_size=self.kernel_size,
                          leaky_slope=self.leaky_slope,
                          lateral_channels=self.lateral_channels,
                          decoder_channels=self.decoder_channels,
                          head_channels=self.head_channels,
                          fusion_channels=self.fusion_channels,
                          variant=self.variant)

    def fit(self, X, y=None):
        """Train on image pairs; X is (n, 2, H, W) or a list of (src, tgt)."""
        pairs = check_pair_array(X)
        params = init_model(self._arch_config(), seed=self.seed,
                            dtype=np.dtype(self.dtype))
        weights = LossWeights(lambda_smooth=self.smooth_weight)
        params, state, logs = train_unsupervised(params, pairs, weights,
                                                 epochs=self.epochs, lr=self.lr,
                                                 seed=self.seed)
        self.model_ = params
        self.opt_state_ = state
        self.history_ = logs
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit() or load()")

    def predict(self, X):
        """Dense flows for each pair, shape (n, H, W, 2) as (dy, dx) pixels."""
        self._check_fitted()
        pairs = check_pair_array(X)
        flows = [progressive_flow(self.model_, src, tgt, steps=self.steps)[0]
                 for src, tgt in pairs]
        return np.stack(flows)

    def score(self, X, y):
        """Negative mean endpoint error (px) against ground-truth flows ``y``."""
        flows = self.predict(X)
        gts = np.asarray(y)
        if gts.shape != flows.shape:
            raise ValueError(f"ground-truth flows shape {gts.shape} does not "
                             f"match predictions {flows.shape}")
        full = np.ones(flows.shape[1:3], dtype=bool)
        errs = [epe(flows[i], gts[i], full)[0] for i in range(len(flows))]
        return -float(np.mean(errs))

    def save(self, path):
        self._check_fitted()
        save_model(path, self.model_)

    @classmethod
    def load(cls, path, steps=1):
        """Rebuild a fitted estimator from a checkpoint."""
        params, _, _ = load_model(path)
        cfg = params.config
        est = cls(num_levels=cfg.num_levels,
                  encoder_channels=cfg.encoder_channels,
                  kernel_size=cfg.kernel_size, leaky_slope=cfg.leaky_slope,
                  lateral_channels=cfg.lateral_channels,
                  decoder_channels=cfg.decoder_channels,
                  head_channels=cfg.head_channels,
                  fusion_channels=cfg.fusion_channels, variant=cfg.variant,
                  seed=params.seed, steps=steps)
        est.model_ = params
        return est
