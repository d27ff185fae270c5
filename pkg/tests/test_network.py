import hashlib

import numpy as np
import pytest

from llfdisc import tensor as T
from llfdisc.network import (CheckpointError, NetworkConfig, cab_attention, cab_forward, dance_forward,
                             enhanced_lca_forward, iel_forward, init_params, llfdisc_forward,
                             load_checkpoint, save_checkpoint, se_forward)
from llfdisc.tensor import ShapeError, Tensor

SLOPE = 0.01
# pinned from one run
IEL_GOLDEN_SUM = -32.457000822868466
IEL_GOLDEN_ENTRY = -0.5013017886171769
FORWARD_GOLDEN_SHA256 = "6a0b74f5a83b906799a800f6aa762b9085e31e80153d4d626fc86d9c4e4e1d66"


# ---------------------------------------------------------------- straight-line oracles

def conv(x, w, b=None, pad=0, groups=1):
    """Cross-correlation written out over padded windows, no im2col."""
    B, C, H, W = x.shape
    O, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for g in range(groups):
        xs = xp[:, g * cg:(g + 1) * cg]
        for i in range(k):
            for j in range(k):
                patch = xs[:, :, i:i + Ho, j:j + Wo]
                out[:, g * og:(g + 1) * og] += np.einsum("bchw,oc->bohw", patch, w[g * og:(g + 1) * og, :, i, j])
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def lrelu(z):
    return np.where(z > 0, z, SLOPE * z)


def sigmoid(z):
    return 1 / (1 + np.exp(-z))


def c(layer, x, **kw):
    return conv(x, layer.weight.data, None if layer.bias is None else layer.bias.data, **kw)


def dance_oracle(x, p):
    C = x.shape[1]
    z0 = c(p.dw, x, pad=1, groups=C)
    z1 = c(p.pw, lrelu(z0))
    m = sigmoid(z1)
    x_den = x * m
    f0 = lrelu(c(p.dark1, x_den, pad=1))
    f_dark = c(p.dark2, f0, pad=1)
    s = f_dark.mean(axis=(2, 3), keepdims=True)
    w = sigmoid(c(p.ca_expand, lrelu(c(p.ca_reduce, s))))
    return x_den + f_dark * w


def iel_oracle(x, p):
    h = c(p.proj_in, x)
    h = c(p.dw, h, pad=1, groups=h.shape[1])
    h = c(p.proj_out, lrelu(h))
    return h * np.tanh(c(p.gate, x)) + x


def se_oracle(x, p):
    s = x.mean(axis=(2, 3), keepdims=True)
    w = np.tanh(c(p.fc2, np.maximum(c(p.fc1, s), 0)))
    return x * (1 + w)


def cab_oracle(x, p):
    B, C, H, W = x.shape
    qkv = c(p.qkv_dw, c(p.qkv, x), pad=1, groups=3 * C)
    h = p.heads
    ch = C // h
    mixed = np.empty((B, C, H * W))
    for b in range(B):
        for head in range(h):
            rows = slice(head * ch, (head + 1) * ch)
            q = qkv[b, 0:C][rows].reshape(ch, -1)
            k = qkv[b, C:2 * C][rows].reshape(ch, -1)
            v = qkv[b, 2 * C:][rows].reshape(ch, -1)
            q = q / np.sqrt((q * q).sum(1, keepdims=True) + 1e-12)
            k = k / np.sqrt((k * k).sum(1, keepdims=True) + 1e-12)
            logits = q @ k.T * np.exp(p.log_temperature.data[head])
            a = np.exp(logits - logits.max(1, keepdims=True))
            a /= a.sum(1, keepdims=True)
            mixed[b, rows] = a @ v
    return c(p.proj, mixed.reshape(B, C, H, W)) + x


def randomize(params, rng, scale=0.3):
    for t in params:
        t.data = rng.normal(0.0, scale, t.shape)


def block_tensors(block):
    from dataclasses import fields, is_dataclass
    out = []
    for f in fields(block):
        v = getattr(block, f.name)
        if isinstance(v, Tensor):
            out.append(v)
        elif is_dataclass(v):
            out.extend(block_tensors(v))
    return out


@pytest.fixture
def lca(rng):
    params = init_params(NetworkConfig(base_width=8, seed=3))
    blk = params.lca1  # width 16, 2 heads
    randomize(block_tensors(blk), rng)
    return blk


# ---------------------------------------------------------------- DANCE

def test_dance_annihilates_zero_input():
    p = init_params(NetworkConfig(base_width=4)).lca0.dance
    assert np.array_equal(dance_forward(np.zeros((1, 4, 6, 6)), p).data, np.zeros((1, 4, 6, 6)))


def test_dance_shape():
    p = init_params(NetworkConfig(base_width=16)).lca0.dance
    assert dance_forward(np.random.default_rng(0).random((2, 16, 8, 8)), p).shape == (2, 16, 8, 8)


@pytest.mark.parametrize("instance", range(10))
def test_dance_matches_scripted_oracle(instance):
    rng = np.random.default_rng(100 + instance)
    width = (4, 8, 16)[instance % 3]
    p = init_params(NetworkConfig(base_width=width, seed=instance)).lca0.dance
    randomize(block_tensors(p), rng, scale=rng.uniform(0.1, 0.6))
    x = rng.normal(0, 1, (1 + instance % 2, width, 5 + instance % 4, 6))
    assert np.abs(dance_forward(x, p).data - dance_oracle(x, p)).max() < 1e-12


def test_dance_width_mismatch():
    p = init_params(NetworkConfig(base_width=4)).lca0.dance
    with pytest.raises(ShapeError):
        dance_forward(np.zeros((1, 8, 4, 4)), p)


# ---------------------------------------------------------------- IEL, SE, CAB

def test_iel_annihilates_and_matches_oracle(lca, rng):
    zero_bias = init_params(NetworkConfig(base_width=32)).lca0.iel
    assert np.array_equal(iel_forward(np.zeros((1, 32, 4, 4)), zero_bias).data, np.zeros((1, 32, 4, 4)))
    x = rng.normal(size=(2, 16, 5, 4))
    assert np.abs(iel_forward(x, lca.iel).data - iel_oracle(x, lca.iel)).max() < 1e-12


def test_iel_golden_values():
    p = init_params(NetworkConfig(base_width=4, seed=11)).lca0.iel
    x = np.sin(np.arange(64.0)).reshape(1, 4, 4, 4)
    y = iel_forward(x, p).data
    assert abs(y.sum() - IEL_GOLDEN_SUM) < 1e-12
    assert abs(y[0, 2, 1, 3] - IEL_GOLDEN_ENTRY) < 1e-12


def test_se_identity_at_zero_params(rng):
    p = init_params(NetworkConfig(base_width=8)).lca0.se
    for t in block_tensors(p):
        t.data = np.zeros(t.shape)
    x = rng.random((2, 8, 5, 5))
    assert np.array_equal(se_forward(x, p).data, x)


def test_se_constant_input_and_oracle(lca, rng):
    x = np.full((1, 16, 4, 4), 0.3)
    y = se_forward(x, lca.se).data
    assert np.all(y == y[:, :, :1, :1])
    x = rng.normal(size=(2, 16, 3, 5))
    assert np.abs(se_forward(x, lca.se).data - se_oracle(x, lca.se)).max() < 1e-12


def test_cab_annihilates_and_matches_oracle(lca, rng):
    zero_bias = init_params(NetworkConfig(base_width=16, heads=(4, 2, 4))).lca0.cab
    assert np.array_equal(cab_forward(np.zeros((1, 16, 4, 4)), zero_bias).data, np.zeros((1, 16, 4, 4)))
    x = rng.normal(size=(2, 16, 4, 5))
    assert np.abs(cab_forward(x, lca.cab).data - cab_oracle(x, lca.cab)).max() < 1e-12


def test_cab_attention_rows_sum_to_one(lca, rng):
    attn, _ = cab_attention(Tensor(rng.normal(size=(2, 16, 4, 4))), lca.cab)
    assert attn.shape == (2, 2, 8, 8)
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-12)


def test_cab_zero_temperature_limit_is_uniform_mixing(rng):
    p = init_params(NetworkConfig(base_width=4, heads=(2, 2, 4), seed=5)).lca0.cab
    randomize(block_tensors(p), rng)
    p.log_temperature.data = np.full(2, -60.0)
    x = rng.normal(size=(1, 4, 3, 3))
    v = c(p.qkv_dw, c(p.qkv, x), pad=1, groups=12)[:, 8:]
    # two heads of two channels: each channel becomes the mean of its head's values
    mixed = np.concatenate([v[:, 0:2].mean(1, keepdims=True).repeat(2, 1),
                            v[:, 2:4].mean(1, keepdims=True).repeat(2, 1)], axis=1)
    want = c(p.proj, mixed) + x
    assert np.abs(cab_forward(x, p).data - want).max() < 1e-12


def test_cab_head_divisibility():
    p = init_params(NetworkConfig(base_width=4)).lca0.cab
    p.heads = 3
    with pytest.raises(ShapeError):
        cab_forward(np.zeros((1, 4, 4, 4)), p)


# ---------------------------------------------------------------- EnhancedLCA and full net

def test_lca_is_the_four_block_composition(lca, rng):
    x = rng.normal(size=(1, 16, 4, 4))
    want = se_oracle(dance_oracle(iel_oracle(cab_oracle(x, lca.cab), lca.iel), lca.dance), lca.se)
    got = enhanced_lca_forward(x, lca).data
    assert got.shape == x.shape
    assert np.abs(got - want).max() < 1e-12


def test_lca_annihilates_zero_input():
    p = init_params(NetworkConfig(base_width=8)).lca2
    assert np.array_equal(enhanced_lca_forward(np.zeros((1, 32, 2, 2)), p).data, np.zeros((1, 32, 2, 2)))


def test_identity_at_init(rng):
    params = init_params(NetworkConfig(base_width=4, seed=9))
    x = rng.random((2, 3, 32, 32))
    y = llfdisc_forward(x, params)
    assert y.shape == (2, 3, 32, 32)
    assert np.array_equal(y.data, x)
    assert not params.out.weight.data.any() and not params.out.bias.data.any()


def test_no_residual_at_init_gives_zero(rng):
    params = init_params(NetworkConfig(base_width=4, global_residual=False))
    assert not llfdisc_forward(rng.random((1, 3, 8, 8)), params).data.any()


def test_forward_golden_digest():
    params = init_params(NetworkConfig(base_width=4, seed=2))
    params.out.weight.data = np.random.default_rng(2).normal(0, 0.05, params.out.weight.shape)
    x = (np.arange(3 * 16 * 16).reshape(1, 3, 16, 16) % 17) / 16
    y = llfdisc_forward(x, params).data
    assert hashlib.sha256(y.astype("<f8").tobytes()).hexdigest() == FORWARD_GOLDEN_SHA256


def test_divisibility_error_mentions_padding():
    params = init_params(NetworkConfig(base_width=4))
    with pytest.raises(ShapeError, match="pad"):
        llfdisc_forward(np.zeros((1, 3, 10, 8)), params)
    with pytest.raises(ShapeError):
        llfdisc_forward(np.zeros((1, 1, 8, 8)), params)


# ---------------------------------------------------------------- init and config

def test_init_is_deterministic():
    a, b = init_params(NetworkConfig(seed=4)), init_params(NetworkConfig(seed=4))
    assert all(np.array_equal(s.data, t.data) for s, t in zip(a.tensors(), b.tensors()))
    c2 = init_params(NetworkConfig(seed=5))
    assert not np.array_equal(a.stem.weight.data, c2.stem.weight.data)


def test_parameter_counts():
    assert init_params(NetworkConfig()).count() == 187_794
    assert init_params(NetworkConfig(base_width=8)).count() == 48_974
    assert init_params(NetworkConfig(base_width=4)).count() == 13_260


def test_config_validation():
    for bad in (dict(base_width=2), dict(heads=(3, 2, 4)), dict(leaky_slope=0.0), dict(se_reduction=0)):
        with pytest.raises(ValueError):
            init_params(NetworkConfig(**bad))


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    params = init_params(NetworkConfig(base_width=4, heads=(2, 2, 4), seed=8, leaky_slope=0.2))
    randomize(params.tensors(), rng)
    path = tmp_path / "net.llfc"
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert back.config == params.config
    assert [n for n, _ in back.named_tensors()] == [n for n, _ in params.named_tensors()]
    assert all(np.array_equal(s.data, t.data) for s, t in zip(back.tensors(), params.tensors()))
    save_checkpoint(back, tmp_path / "again.llfc")
    assert (tmp_path / "again.llfc").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "net.llfc"
    save_checkpoint(init_params(NetworkConfig(base_width=4)), path)
    raw = path.read_bytes()
    bad_width = raw[:8] + (2).to_bytes(4, "little") + raw[12:]
    for bad in (b"NOPE" + raw[4:], raw[:4] + b"\x07" + raw[5:], raw[:-16], raw + b"\0\0", bad_width, raw[:20]):
        (tmp_path / "bad.llfc").write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.llfc")


# ---------------------------------------------------------------- gradients

def test_block_gradients(lca, rng):
    x = Tensor(rng.normal(size=(1, 16, 4, 4)))
    r = rng.normal(size=(1, 16, 4, 4))
    leaves = [x] + block_tensors(lca)
    coords = [np.arange(t.size) if i == 0 else np.random.default_rng(i).choice(t.size, min(4, t.size), replace=False)
              for i, t in enumerate(leaves)]
    assert T.gradient_check(lambda _: T.tsum(enhanced_lca_forward(x, lca) * r), leaves, coords=coords) < 1e-4

