import copy
import dataclasses

import numpy as np
import pytest
import torch

from diffcontrol import tasks as T
from diffcontrol.diffusion import make_schedule
from diffcontrol.nets import DenoiserConfig
from diffcontrol.policy import PolicyParams
from diffcontrol.training import TrainHyper, pairs_from_demos, train_base, train_transition

torch.set_num_threads(1)

W, H = 16, 4


def _tiny(task, seed=0):
    info = T.task_info(task)
    demos = T.gen_demos(task, 4, np.random.default_rng(seed))
    cfg = DenoiserConfig(W=W, D=info.D, obs_dim=info.obs_dim, channels=(8, 16, 32), cond_dim=32, prior_hidden=8)
    hyper = TrainHyper(epochs=1, batches_per_epoch=2, batch_size=8)
    base = train_base(demos, cfg, hyper, np.random.default_rng(seed), make_schedule(8, 1e-3, 0.3))
    trans = train_transition(pairs_from_demos(demos, W, H), base, TrainHyper(epochs=0), np.random.default_rng(seed + 1), shift=H)
    return demos, base, trans


@pytest.fixture(scope="session")
def tiny_models():
    """Barely trained tiny checkpoints per task; the transition keeps zero connectors."""
    return {task: _tiny(task) for task in T.TASKS}


@pytest.fixture(scope="session")
def perturbed_models(tiny_models):
    """Like ``tiny_models`` but with connectors pushed away from zero."""
    out = {}
    for task, (demos, base, trans) in tiny_models.items():
        t2 = dataclasses.replace(trans, module=copy.deepcopy(trans.module))
        g = torch.Generator().manual_seed(0)
        with torch.no_grad():
            for c in t2.module.connectors:
                c.weight.copy_(torch.randn(c.weight.shape, generator=g) * 0.3)
        out[task] = (demos, base, t2)
    return out


def params_of(models, task):
    _, base, trans = models[task]
    return PolicyParams(base=base, transition=trans)
