import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from delight.estimator import DelightLanguageModel, DelightSeq2Seq, check_sequences, check_text

FAST = dict(d_m=32, N_min=2, N_max=3, B=2, g_max=2, steps=30, batch_size=8, warmup=10)


def _copy_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(3, 12, size=rng.integers(3, 6)).tolist() for _ in range(n)]


def test_params_roundtrip_through_clone():
    est = DelightSeq2Seq(**FAST)
    again = clone(est)
    assert again.get_params() == est.get_params()
    assert again.set_params(steps=5).steps == 5


def test_fit_predict_score():
    X = _copy_data()
    est = DelightSeq2Seq(**FAST).fit(X, X)
    assert est.n_iter_ == 30 and len(est.loss_curve_) == 30
    preds = est.predict(X[:4])
    assert len(preds) == 4 and all(isinstance(t, int) for p in preds for t in p)
    assert 0.0 <= est.score(X[:8], X[:8]) <= 1.0


def test_fit_is_deterministic():
    X = _copy_data()
    a = DelightSeq2Seq(**FAST, random_state=1).fit(X, X)
    b = DelightSeq2Seq(**FAST, random_state=1).fit(X, X)
    assert a.loss_curve_ == b.loss_curve_


def test_validation_helpers():
    assert check_sequences([np.array([3, 4]), (5,)]) == [[3, 4], [5]]
    with pytest.raises(ValueError, match="reserved"):
        check_sequences([[0, 3]])
    with pytest.raises(TypeError):
        check_sequences([[3.5, 4.0]])
    with pytest.raises(TypeError):
        check_sequences("abc")
    with pytest.raises(ValueError):
        check_sequences([])
    assert check_text(["ab", "c"]) == "ab\nc"
    with pytest.raises(TypeError):
        check_text([1, 2])


def test_fit_rejects_bad_inputs():
    X = _copy_data(8)
    with pytest.raises(ValueError, match="different lengths"):
        DelightSeq2Seq(**FAST).fit(X, X[:3])
    with pytest.raises(ValueError, match="vocab_size"):
        DelightSeq2Seq(**FAST, vocab_size=5).fit(X, X)
    with pytest.raises(ValueError, match="steps"):
        DelightSeq2Seq(**{**FAST, "steps": 0}).fit(X, X)
    with pytest.raises(NotFittedError):
        DelightSeq2Seq().predict(X)


def test_language_model_estimator():
    text = "the quick brown fox jumps over the lazy dog. " * 8
    lm = DelightLanguageModel(**{**FAST, "steps": 20}, context=16).fit(text)
    ppl = lm.perplexity(text)
    assert 1.0 < ppl < lm.model_config_.vocab_size * 2
    assert lm.score(text) == pytest.approx(-np.log(ppl))
    with pytest.raises(ValueError, match="not seen"):
        lm.perplexity("XYZ" * 20)
    with pytest.raises(ValueError):
        lm.perplexity("the")
