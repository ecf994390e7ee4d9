"""scikit-learn style wrappers around the training stages and policies.

Each estimator takes a list of :class:`~diffcontrol.tasks.Demonstration`
in :meth:`fit` and returns action windows in environment units from
:meth:`predict`. Hyperparameters are plain constructor arguments, so
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import tasks as T
from .baselines import plan_bc_batch, train_bc
from .diffusion import make_schedule
from .exceptions import ShapeMismatchError
from .nets import DenoiserConfig
from .policy import PolicyParams, PolicySpec, PolicyState, plan_batch
from .training import DEFAULT_SCHEDULE, TrainHyper, pairs_from_demos, train_base, train_transition

__all__ = [
    "DiffusionPolicy",
    "DiffControlPolicy",
    "BCPolicy",
    "check_demos",
    "check_observations",
    "check_window",
]


def check_demos(demos):
    """Nonempty list of demonstrations from one task with consistent shapes."""
    demos = list(demos)
    if not demos:
        raise ValueError("need at least one demonstration")
    task = demos[0].task
    D, O = demos[0].actions.shape[1], demos[0].observations.shape[1]
    for d in demos:
        if d.task != task:
            raise ValueError("all demonstrations must come from one task")
        if d.actions.shape[1] != D or d.observations.shape[1] != O or len(d.actions) != len(d.observations):
            raise ShapeMismatchError("demonstrations have inconsistent shapes")
    return demos


def check_observations(obs, obs_dim):
    X = check_array(np.atleast_2d(np.asarray(obs, dtype=np.float64)), dtype=np.float64)
    if X.shape[1] != obs_dim:
        raise ShapeMismatchError(f"observations need {obs_dim} columns, got {X.shape[1]}")
    return X


def check_window(window, W, D, allow_batch=True):
    """A finite ``(W, D)`` window, or ``(n, W, D)`` when ``allow_batch``."""
    a = check_array(np.asarray(window, dtype=np.float64), allow_nd=True, ensure_2d=False, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1:] != (W, D) or (not allow_batch and a.shape[0] != 1):
        raise ShapeMismatchError(f"expected window(s) of shape ({W}, {D}), got {np.shape(window)}")
    return a


class DiffusionPolicy(BaseEstimator):
    """Stateless diffusion policy: one denoiser conditioned on the observation."""

    def __init__(self, W=48, h=12, channels=(16, 32, 64), cond_dim=128, epochs=40, batches_per_epoch=25,
                 batch_size=64, lr=1e-3, schedule=DEFAULT_SCHEDULE, random_state=0):
        self.W = W
        self.h = h
        self.channels = channels
        self.cond_dim = cond_dim
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.random_state = random_state

    def _hyper(self):
        return TrainHyper(epochs=self.epochs, batches_per_epoch=self.batches_per_epoch, batch_size=self.batch_size, lr=self.lr)

    def _fit_base(self, demos, rng):
        d0 = demos[0]
        cfg = DenoiserConfig(W=self.W, D=d0.actions.shape[1], obs_dim=d0.observations.shape[1],
                             channels=tuple(self.channels), levels=len(self.channels), cond_dim=self.cond_dim)
        return train_base(demos, cfg, self._hyper(), rng, make_schedule(*self.schedule))

    def fit(self, demos, y=None):
        demos = check_demos(demos)
        rng = np.random.default_rng(self.random_state)
        self.task_ = demos[0].task
        self.task_id_ = demos[0].task_id
        self.base_ = self._fit_base(demos, rng)
        self.n_features_in_ = demos[0].observations.shape[1]
        return self

    def _spec(self):
        return PolicySpec("stateless_diffusion", W=self.W, h=self.h)

    def _params(self):
        return PolicyParams(base=self.base_)

    def _plan(self, obs, priors, random_state):
        X = check_observations(obs, self.n_features_in_)
        ss = np.random.SeedSequence(random_state)
        rngs = [np.random.default_rng(s) for s in ss.spawn(len(X))]
        states = [PolicyState(prior_window=p) for p in priors(len(X))]
        wins, _ = plan_batch(self._spec(), self._params(), X, self.task_id_, states, rngs, task=self.task_)
        return self.base_.action_norm.inverse_transform(wins)

    def predict(self, obs, random_state=0):
        """One sampled window per observation row, shape ``(n, W, D)``."""
        check_is_fitted(self, "base_")
        return self._plan(obs, lambda n: [None] * n, random_state)

    def sample(self, obs, n=10, random_state=0):
        """``n`` windows for a single observation."""
        o = np.asarray(obs, dtype=np.float64).reshape(1, -1)
        return self.predict(np.repeat(o, n, axis=0), random_state)


class DiffControlPolicy(DiffusionPolicy):
    """Diffusion policy whose windows also condition on the previous window."""

    def __init__(self, W=48, h=12, channels=(16, 32, 64), cond_dim=128, epochs=40, transition_epochs=80,
                 batches_per_epoch=25, batch_size=64, lr=1e-3, schedule=DEFAULT_SCHEDULE, bootstrap="blank",
                 obs_dropout=0.15, random_state=0):
        super().__init__(W, h, channels, cond_dim, epochs, batches_per_epoch, batch_size, lr, schedule, random_state)
        self.transition_epochs = transition_epochs
        self.bootstrap = bootstrap
        self.obs_dropout = obs_dropout

    def fit(self, demos, y=None, base=None):
        """Train both stages. Pass a fitted :class:`DiffusionPolicy` as ``base`` to reuse its denoiser."""
        demos = check_demos(demos)
        rng = np.random.default_rng(self.random_state)
        self.task_ = demos[0].task
        self.task_id_ = demos[0].task_id
        self.n_features_in_ = demos[0].observations.shape[1]
        self.base_ = base.base_ if base is not None else self._fit_base(demos, rng)
        hyper = TrainHyper(epochs=self.transition_epochs, batches_per_epoch=self.batches_per_epoch,
                           batch_size=self.batch_size, lr=self.lr, obs_dropout=self.obs_dropout)
        self.transition_ = train_transition(pairs_from_demos(demos, self.W, self.h), self.base_, hyper, rng, shift=self.h)
        return self

    def _spec(self):
        return PolicySpec("diff_control", W=self.W, h=self.h, bootstrap=self.bootstrap)

    def _params(self):
        return PolicyParams(base=self.base_, transition=self.transition_)

    def predict(self, obs, prior=None, random_state=0):
        """Windows given observations and, optionally, previous windows in environment units."""
        check_is_fitted(self, "transition_")
        if prior is None:
            return self._plan(obs, lambda n: [None] * n, random_state)
        D = self.base_.denoiser_config.D
        p = self.base_.action_norm.transform(check_window(prior, self.W, D))
        return self._plan(obs, lambda n: [p[0]] * n if len(p) == 1 else list(p), random_state)

    def sample(self, obs, n=10, prior=None, random_state=0):
        o = np.asarray(obs, dtype=np.float64).reshape(1, -1)
        return self.predict(np.repeat(o, n, axis=0), prior, random_state)


class BCPolicy(BaseEstimator):
    """Deterministic behavior-cloning regressor, optionally recurrent."""

    def __init__(self, W=48, h=12, recurrent=False, epochs=40, batches_per_epoch=25, batch_size=64, lr=1e-3,
                 random_state=0):
        self.W = W
        self.h = h
        self.recurrent = recurrent
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, demos, y=None):
        demos = check_demos(demos)
        hyper = TrainHyper(epochs=self.epochs, batches_per_epoch=self.batches_per_epoch, batch_size=self.batch_size, lr=self.lr)
        self.ckpt_ = train_bc(demos, self.recurrent, hyper, np.random.default_rng(self.random_state), W=self.W, h=self.h)
        self.task_id_ = demos[0].task_id
        self.n_features_in_ = demos[0].observations.shape[1]
        return self

    def predict(self, obs, hidden=None):
        """Windows for each observation row; recurrent models treat the rows as one batch of fresh episodes."""
        check_is_fitted(self, "ckpt_")
        X = check_observations(obs, self.n_features_in_)
        wins, _ = plan_bc_batch(self.ckpt_, X, self.task_id_, hidden)
        return self.ckpt_.action_norm.inverse_transform(wins)


def demos_for(task, n=200, random_state=0):
    """Convenience: expert demonstrations ready for :meth:`fit`."""
    return T.gen_demos(task, n, np.random.default_rng(random_state))
