import math

import numpy as np
import pytest
import torch

from diffcontrol.exceptions import InvalidConfigError, ShapeMismatchError, UnknownTaskError
from diffcontrol.nets import (
    DenoiserConfig,
    denoise_base,
    denoise_controlled,
    embed_condition,
    encoder_names,
    init_base,
    init_transition,
    is_frozen,
)

SMALL = dict(W=16, D=2, obs_dim=3, channels=(8, 16, 32), cond_dim=32, prior_hidden=8)


def conv_params(cin, cout, k):
    return cin * cout * k + cout


def res_params(cin, cout, cond, k):
    n = conv_params(cin, cout, k) + 2 * cout + conv_params(cout, cout, k) + 2 * cout
    n += cond * 2 * cout + 2 * cout  # FiLM scale and shift
    if cin != cout:
        n += conv_params(cin, cout, 1)
    return n


def tally_base(cfg):
    """Parameter count of the base layout, derived layer by layer."""
    ch, k, c = cfg.channels, cfg.kernel_size, cfg.cond_dim
    t, o, q = cfg.split
    n = cfg.obs_dim * o + o + cfg.n_tasks * q  # observation projection and task table
    n += conv_params(cfg.D, ch[0], k)  # stem
    prev = ch[0]
    for i, w in enumerate(ch):
        n += res_params(prev, w, c, k) + res_params(w, w, c, k)
        if i < len(ch) - 1:
            n += conv_params(w, w, 3)  # strided downsample
        prev = w
    n += 2 * res_params(ch[-1], ch[-1], c, k)  # middle
    for i in reversed(range(len(ch) - 1)):
        n += ch[i + 1] * ch[i + 1] * 4 + ch[i + 1]  # transposed-conv upsample
        n += res_params(ch[i + 1] + ch[i], ch[i], c, k) + res_params(ch[i], ch[i], c, k)
    n += conv_params(ch[0], ch[0], k) + 2 * ch[0] + conv_params(ch[0], cfg.D, 1)
    return n


def tally_encoder(cfg):
    ch, k, c = cfg.channels, cfg.kernel_size, cfg.cond_dim
    n = conv_params(cfg.D, ch[0], k)
    prev = ch[0]
    for i, w in enumerate(ch):
        n += res_params(prev, w, c, k) + res_params(w, w, c, k)
        if i < len(ch) - 1:
            n += conv_params(w, w, 3)
        prev = w
    return n + 2 * res_params(ch[-1], ch[-1], c, k)


@pytest.fixture(scope="module")
def pair():
    cfg = DenoiserConfig(**SMALL)
    base = init_base(cfg, 1)
    trans = init_transition(base, rng=2)
    return cfg, base, trans


def count(m):
    return sum(p.numel() for p in m.parameters())


def test_base_parameter_tally():
    cfg = DenoiserConfig(**SMALL)
    assert count(init_base(cfg, 0)) == tally_base(cfg)


def test_default_parameter_tally():
    cfg = DenoiserConfig()
    assert count(init_base(cfg, 0)) == tally_base(cfg)


def test_transition_parameter_tally(pair):
    cfg, base, trans = pair
    ch, k, hid = cfg.channels, cfg.kernel_size, cfg.prior_hidden
    prior = conv_params(cfg.D + 1, hid, k) + conv_params(hid, hid, k) + conv_params(hid, ch[0], k)
    conns = sum(conv_params(c, c, 1) for c in ch[:-1]) + conv_params(ch[-1], ch[-1], 1)
    assert count(trans) == tally_encoder(cfg) + prior + conns
    assert count(trans.replica) == count(base.encoder)


def test_replica_starts_as_copy(pair):
    _, base, trans = pair
    names = encoder_names(base)
    assert names == [n for n, _ in trans.replica.named_parameters()]
    bs = dict(base.encoder.named_parameters())
    for n, p in trans.replica.named_parameters():
        assert torch.equal(p, bs[n])
        assert p.data_ptr() != bs[n].data_ptr()


def test_connectors_are_zero(pair):
    _, _, trans = pair
    for conn in trans.connectors:
        for p in conn.parameters():
            assert torch.count_nonzero(p) == 0


def test_base_is_frozen_after_transition_init(pair):
    _, base, trans = pair
    assert is_frozen(base)
    assert not any(p.requires_grad for p in base.parameters())
    assert all(p.requires_grad for p in trans.parameters())


def test_zero_init_bit_exact_on_random_inputs(pair):
    cfg, base, trans = pair
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.standard_normal((cfg.W, cfg.D))
        tau = int(rng.integers(1, 101))
        obs = rng.standard_normal(cfg.obs_dim)
        k = int(rng.integers(0, cfg.n_tasks))
        prior = rng.standard_normal((cfg.W, cfg.D))
        valid = bool(rng.integers(0, 2))
        x = denoise_base(base, a, tau, obs, k)
        y = denoise_controlled(base, trans, a, tau, obs, k, prior, valid)
        assert np.array_equal(x, y)


def test_batched_inputs_shape(pair):
    cfg, base, trans = pair
    a = np.zeros((5, cfg.W, cfg.D))
    assert denoise_base(base, a, 7, np.zeros(cfg.obs_dim), 0).shape == (5, cfg.W, cfg.D)
    out = denoise_controlled(base, trans, a, 7, np.zeros((5, cfg.obs_dim)), 1, np.zeros((cfg.W, cfg.D)))
    assert out.shape == (5, cfg.W, cfg.D)


def test_nonzero_connector_changes_output():
    cfg = DenoiserConfig(**SMALL)
    base = init_base(cfg, 0)
    trans = init_transition(base, rng=0)
    with torch.no_grad():
        trans.connectors[-1].weight.normal_(0, 0.1)
    a = np.random.default_rng(0).standard_normal((cfg.W, cfg.D))
    x = denoise_base(base, a, 10, np.zeros(cfg.obs_dim), 0)
    y = denoise_controlled(base, trans, a, 10, np.zeros(cfg.obs_dim), 0, a)
    assert not np.allclose(x, y)


def test_embedding_layout():
    cfg = DenoiserConfig(**SMALL)
    net = init_base(cfg, 0)
    t, o, q = cfg.split
    e = embed_condition(net, 5, np.zeros(cfg.obs_dim), 2)
    assert e.shape == (cfg.cond_dim,)
    half = t // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    expect = np.empty(t)
    expect[0::2] = np.sin(5 * freqs)
    expect[1::2] = np.cos(5 * freqs)
    np.testing.assert_allclose(e[:t], expect, atol=1e-6)
    # zero observation leaves only the projection bias
    np.testing.assert_allclose(e[t : t + o], net.cond.obs_proj.bias.detach().numpy(), atol=1e-7)
    np.testing.assert_allclose(e[t + o :], net.cond.task_table.weight[2].detach().numpy(), atol=1e-7)


def test_unknown_task_rejected():
    cfg = DenoiserConfig(**SMALL)
    net = init_base(cfg, 0)
    with pytest.raises(UnknownTaskError):
        denoise_base(net, np.zeros((cfg.W, cfg.D)), 1, np.zeros(cfg.obs_dim), 3)


def test_shape_errors():
    cfg = DenoiserConfig(**SMALL)
    net = init_base(cfg, 0)
    with pytest.raises(ShapeMismatchError):
        denoise_base(net, np.zeros((cfg.W + 1, cfg.D)), 1, np.zeros(cfg.obs_dim), 0)
    with pytest.raises(ShapeMismatchError):
        denoise_base(net, np.zeros((cfg.W, cfg.D)), 1, np.zeros(cfg.obs_dim + 1), 0)


@pytest.mark.parametrize(
    "kw",
    [
        dict(W=50),
        dict(levels=3, channels=(64, 128)),
        dict(channels=(64, 64, 128)),
        dict(channels=(60, 120, 240)),
        dict(kernel_size=4),
        dict(cond_dim=6),
    ],
)
def test_invalid_configs(kw):
    with pytest.raises(InvalidConfigError):
        DenoiserConfig(**kw)


def test_init_is_seeded():
    cfg = DenoiserConfig(**SMALL)
    a, b, c = init_base(cfg, 4), init_base(cfg, 4), init_base(cfg, 5)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


def test_init_leaves_global_torch_rng_alone():
    torch.manual_seed(123)
    before = torch.rand(3)
    torch.manual_seed(123)
    init_base(DenoiserConfig(**SMALL), 9)
    assert torch.equal(torch.rand(3), before)


def test_config_round_trip():
    cfg = DenoiserConfig(**SMALL)
    assert DenoiserConfig.from_dict(cfg.to_dict()) == cfg


def test_mismatched_transition_config():
    base = init_base(DenoiserConfig(**SMALL), 0)
    with pytest.raises(InvalidConfigError):
        init_transition(base, DenoiserConfig())
