import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from relvox.estimators import AmplitudeFilter, RelevanceExplainer, UNetSegmenter
from relvox.errors import ConfigError, ShapeError
from relvox.filters import FilterSpec, apply_filtered_channels


@pytest.fixture(scope="module")
def fitted(tiny_dataset):
    X = np.stack([c.image for c in tiny_dataset])
    y = np.stack([c.mask for c in tiny_dataset])
    seg = UNetSegmenter(depth=2, base_filters=4, epochs=20, lr=0.1, seed=0)
    return seg.fit(X, y), X, y


class TestUNetSegmenter:
    def test_get_set_params_round_trip(self):
        seg = UNetSegmenter(depth=3, base_filters=2)
        params = seg.get_params()
        assert params["depth"] == 3
        other = clone(seg)
        assert other.get_params() == params

    def test_not_fitted_raises(self):
        with pytest.raises(NotFittedError):
            UNetSegmenter().predict(np.zeros((1, 6, 8, 16, 16), np.float32))

    def test_fit_predict_shapes(self, fitted):
        seg, X, y = fitted
        pred = seg.predict(X)
        assert pred.shape == y.shape
        assert pred.dtype == bool
        proba = seg.predict_proba(X)
        assert proba.min() >= 0.0 and proba.max() <= 1.0

    def test_score_is_mean_dice(self, fitted):
        seg, X, y = fitted
        score = seg.score(X, y)
        assert 0.0 <= score <= 1.0

    def test_single_volume_without_batch_axis(self, fitted):
        seg, X, _ = fitted
        single = seg.predict(X[0])
        assert single.shape == (1,) + X.shape[2:]

    def test_mismatched_y_rejected(self, fitted):
        _, X, _ = fitted
        seg = UNetSegmenter(depth=2, base_filters=2, epochs=1)
        with pytest.raises(ShapeError):
            seg.fit(X, np.zeros((len(X), 4, 4, 4), np.float32))

    def test_training_log_exposed(self, fitted):
        seg, _, _ = fitted
        assert len(seg.log_.records) == seg.epochs


class TestRelevanceExplainer:
    def test_transform_shape(self, fitted):
        seg, X, _ = fitted
        expl = RelevanceExplainer(segmenter=seg).fit()
        rel = expl.transform(X[:1])
        assert rel.shape == X[:1].shape

    def test_requires_a_network(self):
        with pytest.raises(NotFittedError):
            RelevanceExplainer().fit()

    def test_filter_spec_applied(self, fitted):
        seg, X, _ = fitted
        raw = RelevanceExplainer(segmenter=seg).fit().transform(X[:1])[0]
        clamped = RelevanceExplainer(segmenter=seg,
                                     filter_spec=FilterSpec("clamp", hi=0.2)
                                     ).fit().transform(X[:1])[0]
        for c in range(6):
            m = np.abs(raw[c]).max()
            if m > 0:
                assert np.abs(clamped[c]).max() <= 0.2 * m * (1 + 1e-5)

    def test_accepts_bare_network(self, fitted):
        seg, X, _ = fitted
        expl = RelevanceExplainer(network=seg.net_)
        rel = expl.transform(X[:1])  # transform may self-fit
        assert rel.shape == X[:1].shape


class TestAmplitudeFilter:
    def test_matches_functional_form(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(2, 3, 4, 4, 4)).astype(np.float32)
        est = AmplitudeFilter(kind="pass", lo=0.1, hi=0.6).fit()
        out = est.transform(X)
        spec = FilterSpec("pass", 0.1, 0.6)
        for i in range(2):
            assert np.array_equal(out[i], apply_filtered_channels(X[i], spec))

    def test_invalid_params_raise_on_fit(self):
        with pytest.raises(ConfigError):
            AmplitudeFilter(kind="pass", lo=0.9, hi=0.1).fit()

    def test_clone_keeps_params(self):
        est = AmplitudeFilter(kind="clamp", lo=0.0, hi=0.3)
        assert clone(est).get_params()["hi"] == 0.3

    def test_fit_transform_pipeline_compatible(self):
        X = np.random.default_rng(1).normal(size=(1, 2, 3, 3, 3)).astype(np.float32)
        out = AmplitudeFilter(kind="clamp", hi=0.5).fit_transform(X)
        assert out.shape == X.shape
