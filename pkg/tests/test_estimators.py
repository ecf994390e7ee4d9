import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from diffcontrol import BCPolicy, DiffControlPolicy, DiffusionPolicy
from diffcontrol.estimators import check_demos, check_window, demos_for
from diffcontrol.exceptions import ShapeMismatchError

SMALL = dict(W=16, h=4, channels=(8, 16, 32), cond_dim=32, epochs=1, batches_per_epoch=2, batch_size=8,
             schedule=(8, 1e-3, 0.3))


@pytest.fixture(scope="module")
def demos():
    return demos_for("scoop", n=3, random_state=0)


@pytest.fixture(scope="module")
def fitted(demos):
    base = DiffusionPolicy(**SMALL).fit(demos)
    dc = DiffControlPolicy(**SMALL, transition_epochs=1).fit(demos, base=base)
    return base, dc


def test_params_and_clone():
    est = DiffControlPolicy(**SMALL, transition_epochs=3)
    p = est.get_params()
    assert p["transition_epochs"] == 3 and p["W"] == 16 and p["bootstrap"] == "blank"
    twin = clone(est)
    assert twin.get_params() == p and twin is not est
    est.set_params(h=8)
    assert est.h == 8 and twin.h == 4


def test_unfitted_estimators_refuse():
    with pytest.raises(NotFittedError):
        DiffusionPolicy().predict([[0.0]])
    with pytest.raises(NotFittedError):
        BCPolicy().predict([[0.0]])


def test_predict_shapes(fitted, demos):
    base, dc = fitted
    obs = demos[0].observations[:3]
    assert base.predict(obs).shape == (3, 16, 2)
    assert base.sample(obs[0], n=5).shape == (5, 16, 2)
    first = dc.predict(obs[:1])
    nxt = dc.predict(obs[1:2], prior=first)
    assert first.shape == nxt.shape == (1, 16, 2)
    assert dc.sample(obs[0], n=4, prior=first[0]).shape == (4, 16, 2)
    assert dc.base_ is base.base_ and dc.task_ == "scoop"


def test_predict_is_seeded(fitted, demos):
    base, _ = fitted
    obs = demos[0].observations[:2]
    assert np.array_equal(base.predict(obs, random_state=3), base.predict(obs, random_state=3))
    assert not np.array_equal(base.predict(obs, random_state=3), base.predict(obs, random_state=4))


def test_zero_connectors_match_stateless(demos):
    base = DiffusionPolicy(**SMALL).fit(demos)
    dc = DiffControlPolicy(**SMALL, transition_epochs=0).fit(demos, base=base)
    obs = demos[1].observations[:4]
    assert np.array_equal(base.predict(obs, random_state=1), dc.predict(obs, random_state=1))
    prior = base.predict(obs[:1])
    assert np.array_equal(base.predict(obs, random_state=1), dc.predict(obs, prior=prior, random_state=1))


def test_input_validation(fitted, demos):
    base, dc = fitted
    with pytest.raises(ShapeMismatchError):
        base.predict(np.zeros((2, 3)))
    with pytest.raises(ShapeMismatchError):
        dc.predict(np.zeros((1, 4)), prior=np.zeros((15, 2)))
    with pytest.raises(ValueError):
        base.predict([[np.nan, 0, 0, 0]])
    with pytest.raises(ValueError):
        check_demos([])
    with pytest.raises(ValueError):
        check_demos(demos + demos_for("drum", n=1))
    assert check_window(np.zeros((16, 2)), 16, 2).shape == (1, 16, 2)


@pytest.mark.parametrize("recurrent", [False, True])
def test_bc_estimator(recurrent):
    d = demos_for("drum", n=3, random_state=1)
    est = BCPolicy(W=16, h=4, recurrent=recurrent, epochs=1, batches_per_epoch=2, batch_size=8).fit(d)
    out = est.predict(d[0].observations[:5])
    assert out.shape == (5, 16, 1)
    assert np.array_equal(out, est.predict(d[0].observations[:5]))
