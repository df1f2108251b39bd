import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from online_registers import OnlineRegisterEncoder
from online_registers.training import synth_batch

FAST = dict(d_model=8, n_heads=2, steps=3, batch_size=2, crop=16, chunk_size=4, lookahead=1)


@pytest.fixture(scope="module")
def data():
    return synth_batch(np.random.default_rng(0), 4, 20, 8)


@pytest.fixture(scope="module")
def fitted(data):
    return OnlineRegisterEncoder(**FAST).fit(data)


def test_params_roundtrip():
    est = OnlineRegisterEncoder(**FAST)
    assert est.get_params()["chunk_size"] == 4
    assert clone(est).set_params(lookahead=2).get_params()["lookahead"] == 2


def test_fit_sets_attributes(fitted):
    assert fitted.n_features_in_ == 8 and len(fitted.history_) == 3
    assert fitted.encoder_.n_registers == 1


def test_transform_shapes(fitted, data):
    out = fitted.transform(data)
    assert isinstance(out, np.ndarray) and out.shape == (4, 20, 8)
    ragged = fitted.transform([data[0][:7], data[1]])
    assert [o.shape for o in ragged] == [(7, 8), (20, 8)]
    regs = fitted.transform_registers([data[0][:7]])
    assert regs[0].shape == (2, 1, 8)


def test_online_matches_offline_without_registers_in_one_chunk(data):
    online = OnlineRegisterEncoder(**{**FAST, "n_registers": 0, "chunk_size": 20, "lookahead": 0}).fit(data)
    offline = clone(online).set_params(mode="offline")
    offline.model_, offline.n_features_in_ = online.model_, online.n_features_in_
    np.testing.assert_allclose(online.transform(data), offline.transform(data), rtol=0, atol=1e-5)


def test_transform_deterministic(fitted, data):
    np.testing.assert_array_equal(fitted.transform(data), fitted.transform(data))


def test_refit_is_reproducible(data):
    a = OnlineRegisterEncoder(**FAST).fit(data).transform(data)
    b = OnlineRegisterEncoder(**FAST).fit(data).transform(data)
    np.testing.assert_array_equal(a, b)


def test_projection_for_other_widths():
    x = synth_batch(np.random.default_rng(1), 3, 18, 5)
    est = OnlineRegisterEncoder(**FAST).fit(x)
    assert est.transform(x).shape == (3, 18, 8)
    with pytest.raises(ValueError):
        est.transform(np.zeros((1, 18, 6)))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        OnlineRegisterEncoder().transform(np.zeros((1, 4, 32)))


def test_input_validation(data):
    with pytest.raises(ValueError):
        OnlineRegisterEncoder(**{**FAST, "mode": "sideways"}).fit(data)
    with pytest.raises(ValueError):
        OnlineRegisterEncoder(**{**FAST, "chunk_size": 0}).fit(data)
    bad = data.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        OnlineRegisterEncoder(**FAST).fit(bad)
    with pytest.raises(ValueError):
        OnlineRegisterEncoder(**FAST).fit([np.zeros((5, 8)), np.zeros((5, 7))])
    with pytest.raises(TypeError):
        OnlineRegisterEncoder(**FAST).fit(3)


def test_in_pipeline(data):
    pipe = make_pipeline(FunctionTransformer(lambda x: x * 2), OnlineRegisterEncoder(**FAST))
    assert pipe.fit_transform(data).shape == (4, 20, 8)
