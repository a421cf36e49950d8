"""scikit-learn style wrappers around the segmentation and relevance stack.

These estimators make the pipeline compose with the wider ecosystem
(get_params/set_params, clone, Pipeline).  X is always an array-like of
volumes: (n, C, D, H, W) for images, (n, D, H, W) for masks.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ShapeError
from .filters import FilterSpec, apply_filtered_channels
from .kernels import forward
from .lrp import FINAL, SeedSpec, run_lrp
from .training import dice, train
from .unet import UNetConfig, build, init_kaiming
from .validation import as_f32, check_rank


def _as_volume_batch(X, rank, name):
    arr = as_f32(X, name)
    if arr.ndim == rank - 1:  # single volume without the batch axis
        arr = arr[None]
    check_rank(arr, rank, name)
    return arr


class UNetSegmenter(BaseEstimator):
    """Volumetric lesion segmenter: a 3D U-Net trained with soft Dice loss.

    Parameters mirror the builder and trainer defaults; `fit` derives the
    network input shape from the training volumes.
    """

    def __init__(self, depth=2, base_filters=8, out_channels=1, epochs=80,
                 lr=0.01, momentum=0.9, seed=0, threshold=0.5):
        self.depth = depth
        self.base_filters = base_filters
        self.out_channels = out_channels
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.seed = seed
        self.threshold = threshold

    def fit(self, X, y):
        X = _as_volume_batch(X, 5, "X")
        y = np.asarray(y)
        if y.ndim == 3:
            y = y[None]
        if y.shape != (X.shape[0],) + X.shape[2:]:
            raise ShapeError(
                f"y shape {y.shape} does not match volumes {(X.shape[0],) + X.shape[2:]}")
        config = UNetConfig(in_channels=X.shape[1], out_channels=self.out_channels,
                            depth=self.depth, base_filters=self.base_filters,
                            input_shape=X.shape[1:])
        net = init_kaiming(build(config), self.seed)
        cases = [_FitCase(image=X[i], mask=y[i], case_id=f"fit{i:03d}")
                 for i in range(X.shape[0])]
        self.net_, self.log_ = train(net, cases, epochs=self.epochs, lr=self.lr,
                                     momentum=self.momentum, seed=self.seed,
                                     threshold=self.threshold)
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this UNetSegmenter instance is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        X = _as_volume_batch(X, 5, "X")
        return np.stack([forward(self.net_, x)[0][0] for x in X])

    def predict(self, X):
        return self.predict_proba(X) > self.threshold

    def score(self, X, y):
        """Mean Dice coefficient over the batch."""
        preds = self.predict(X)
        y = np.asarray(y)
        if y.ndim == 3:
            y = y[None]
        return float(np.mean([dice(p, t) for p, t in zip(preds, y)]))


class _FitCase:
    def __init__(self, image, mask, case_id):
        self.image = image
        self.mask = mask
        self.case_id = case_id


class RelevanceExplainer(BaseEstimator, TransformerMixin):
    """Transforms input volumes into input-level relevance heatmaps.

    Wraps the backward relevance traversal of a fitted UNetSegmenter (or a
    raw Network passed as `network`).  An optional amplitude filter is
    applied to the final map in normalised form.
    """

    def __init__(self, segmenter=None, network=None, seed_mode="predicted_positive",
                 filter_spec=None, eps_stab=1e-9):
        self.segmenter = segmenter
        self.network = network
        self.seed_mode = seed_mode
        self.filter_spec = filter_spec
        self.eps_stab = eps_stab

    def fit(self, X=None, y=None):
        if self.network is not None:
            self.net_ = self.network
        elif self.segmenter is not None:
            self.segmenter._check_fitted()
            self.net_ = self.segmenter.net_
        else:
            raise NotFittedError("RelevanceExplainer needs a segmenter or a network")
        return self

    def transform(self, X):
        if not hasattr(self, "net_"):
            self.fit()
        X = _as_volume_batch(X, 5, "X")
        plan = {FINAL: self.filter_spec} if self.filter_spec is not None else None
        seed = SeedSpec(mode=self.seed_mode)
        maps = []
        for x in X:
            _, cache = forward(self.net_, x)
            maps.append(run_lrp(self.net_, cache, seed=seed, plan=plan,
                                eps_stab=self.eps_stab).input_relevance)
        return np.stack(maps)


class AmplitudeFilter(BaseEstimator, TransformerMixin):
    """Stateless per-channel amplitude filter in N * F[raw / N] form."""

    def __init__(self, kind="pass", lo=0.0, hi=0.4):
        self.kind = kind
        self.lo = lo
        self.hi = hi

    def _spec(self):
        return FilterSpec(self.kind, self.lo, self.hi)

    def fit(self, X=None, y=None):
        self._spec()  # validate parameters
        return self

    def transform(self, X):
        spec = self._spec()
        X = _as_volume_batch(X, 5, "X")
        return np.stack([apply_filtered_channels(x, spec) for x in X])
