from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dense_cross_attention, dense_self_attention, direct_conv, representative_map
from rgt.attention import (
    ConfigError,
    LsaWeights,
    RgsaConfig,
    RgsaWeights,
    WindowSpec,
    effective_recursion,
    linear,
    lsa_forward,
    recursion_count,
    representative_size,
    rgm_forward,
    rgsa_forward,
    window_partition,
    window_reverse,
)
from rgt.tensor import Tensor, conv2d, matmul, softmax


def as_arrays(w):
    return {f.name: getattr(w, f.name).data for f in fields(w)}


# ---- recursion depth


@pytest.mark.parametrize("args,expected", [((64, 64, 4, 4), 2), ((128, 128, 4, 16), 1), ((16, 16, 4, 16), 0), ((3, 3, 4, 16), 0)])
def test_recursion_count(args, expected):
    assert recursion_count(*args) == expected


def test_recursion_count_uses_longer_side():
    assert recursion_count(16, 64, 4, 4) == 2


def test_recursion_count_rejects_small_stride():
    with pytest.raises(ConfigError):
        recursion_count(64, 64, 1, 4)


@given(st.integers(1, 5000), st.integers(2, 6), st.integers(1, 20))
def test_recursion_count_matches_log(m, s, h):
    t = recursion_count(m, 1, s, h)
    assert h * s**t <= m or t == 0
    assert h * s ** (t + 1) > m


def test_config_validation():
    with pytest.raises(ConfigError):
        RgsaConfig(dim=12, heads=4, c_r=0.5)  # C_r = 6 not divisible by 4 heads
    with pytest.raises(ConfigError):
        RgsaConfig(dim=8, heads=2, s_r=1)
    assert RgsaConfig(dim=180, heads=6).reduced_dim == 90


# ---- RGM


def test_rgm_reference_geometry(rng):
    cfg = RgsaConfig(dim=180, heads=6, s_r=4, h=4, c_r=0.5)
    w = RgsaWeights.random(cfg, rng, 0.05)
    assert rgm_forward(Tensor(rng.normal(size=(64, 64, 180))), w, cfg).shape == (4, 4, 90)


def test_rgm_no_recursion_keeps_size(rng):
    cfg = RgsaConfig(dim=8, heads=2, h=4)
    w = RgsaWeights.random(cfg, rng)
    x = rng.normal(size=(4, 4, 8))
    out = rgm_forward(Tensor(x), w, cfg).data
    a = as_arrays(w)
    ref = direct_conv(direct_conv(x, a["dw_w"], a["dw_b"], 1, 1, 8), a["pw_w"], a["pw_b"], 1, 0, 1)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_rgm_full_channel_scale(rng):
    cfg = RgsaConfig(dim=8, heads=2, c_r=1.0)
    out = rgm_forward(Tensor(rng.normal(size=(16, 16, 8))), RgsaWeights.random(cfg, rng), cfg)
    assert out.shape[-1] == 8


def test_rgm_matches_direct_loops(rng):
    cfg = RgsaConfig(dim=4, heads=2, s_r=2, h=2)
    w = RgsaWeights.random(cfg, rng)
    x = rng.normal(size=(9, 6, 4))
    T = effective_recursion(9, 6, cfg)
    assert T == 2
    np.testing.assert_allclose(rgm_forward(Tensor(x), w, cfg).data, representative_map(x, as_arrays(w), 2, T), atol=1e-12)


@given(st.integers(1, 140), st.integers(1, 140), st.sampled_from([2, 3, 4]), st.integers(1, 6))
def test_rgm_size_band(H, W, s, h):
    cfg = RgsaConfig(dim=2, heads=2, s_r=s, h=h, c_r=1.0)
    h_eff, w_eff = representative_size(H, W, cfg)
    if effective_recursion(H, W, cfg) >= 1:
        assert h <= max(h_eff, w_eff) < s * h
    else:
        assert (h_eff, w_eff) == (H, W)


@pytest.mark.parametrize("H,W", [(16, 16), (21, 9), (40, 64)])
def test_rgm_shape_agrees_with_size_formula(rng, H, W):
    cfg = RgsaConfig(dim=2, heads=2, h=4, c_r=1.0)
    out = rgm_forward(Tensor(rng.normal(size=(H, W, 2))), RgsaWeights.random(cfg, rng), cfg)
    assert out.shape[:2] == representative_size(H, W, cfg)


def test_min_recursion_and_disabled_recursion():
    cfg = RgsaConfig(dim=2, heads=2, h=16, c_r=1.0, min_recursion=2)
    assert effective_recursion(128, 128, cfg) == 2
    assert representative_size(128, 128, cfg) == (8, 8)
    off = RgsaConfig(dim=2, heads=2, h=4, c_r=1.0, recursion_enabled=False)
    assert representative_size(128, 128, off) == (32, 32)


def test_shared_kernel_gradient_is_sum_over_levels(rng):
    """Tied W_r gradient equals the sum of gradients of an untied two-level copy."""
    cfg = RgsaConfig(dim=3, heads=1, s_r=2, h=2, c_r=1.0)
    w = RgsaWeights.random(cfg, rng)
    x = Tensor(rng.normal(size=(8, 8, 3)))
    proj = rng.normal(size=(8, 8, 3))
    assert effective_recursion(8, 8, cfg) == 2

    tied = Tensor(w.reduce_w.data, requires_grad=True)
    (rgsa_forward(x, w.replace(reduce_w=tied), cfg) * Tensor(proj)).sum().backward()

    k1 = Tensor(w.reduce_w.data, requires_grad=True)
    k2 = Tensor(w.reduce_w.data, requires_grad=True)

    def untied(inp):
        y = conv2d(inp, k1, w.reduce_b, stride=2, groups=3)
        return conv2d(y, k2, w.reduce_b, stride=2, groups=3)

    # same attention, rebuilt around the untied representative map
    rep = untied(x)
    rep = conv2d(rep, w.dw_w, w.dw_b, padding=1, groups=3)
    rep = conv2d(rep, w.pw_w, w.pw_b)
    n, m = 64, rep.shape[0] * rep.shape[1]
    q = linear(x.reshape(n, 3), w.q_w, w.q_b)
    k = linear(rep.reshape(m, 3), w.k_w, w.k_b)
    v = linear(rep.reshape(m, 3), w.v_w, w.v_b)
    a = softmax(matmul(q, k.T) * (1 / np.sqrt(3)))
    out = linear(matmul(a, v), w.proj_w, w.proj_b).reshape(8, 8, 3)
    (out * Tensor(proj)).sum().backward()

    assert np.abs(k1.grad.data).max() > 0 and np.abs(k2.grad.data).max() > 0
    np.testing.assert_allclose(tied.grad.data, k1.grad.data + k2.grad.data, rtol=1e-10, atol=1e-12)


# ---- RG-SA


def _rgsa_instance(rng, H=4, W=4, C=4, heads=1, s=2, h=2, c_r=1.0):
    cfg = RgsaConfig(dim=C, heads=heads, s_r=s, h=h, c_r=c_r)
    return cfg, RgsaWeights.random(cfg, rng), rng.normal(size=(H, W, C))


@pytest.mark.parametrize("H,W,C,heads,c_r", [(4, 4, 4, 1, 1.0), (6, 5, 8, 2, 0.5), (9, 4, 6, 3, 1.0)])
def test_rgsa_matches_dense_oracle(rng, H, W, C, heads, c_r):
    cfg, w, x = _rgsa_instance(rng, H, W, C, heads, c_r=c_r)
    a = as_arrays(w)
    rep = representative_map(x, a, cfg.s_r, effective_recursion(H, W, cfg))
    ref = dense_cross_attention(x, rep, a, heads)
    np.testing.assert_allclose(rgsa_forward(Tensor(x), w, cfg).data, ref, atol=1e-10)


def test_rgsa_attention_shape(rng):
    cfg = RgsaConfig(dim=4, heads=2, s_r=4, h=4, c_r=1.0)
    tr = {}
    rgsa_forward(Tensor(rng.normal(size=(64, 64, 4))), RgsaWeights.random(cfg, rng), cfg, tr)
    assert tr["attn"].shape == (1, 2, 4096, 16)


def test_rgsa_single_token_copies_value(rng):
    cfg = RgsaConfig(dim=4, heads=2, s_r=4, h=1, c_r=1.0)
    w = RgsaWeights.random(cfg, rng)
    tr = {}
    rgsa_forward(Tensor(rng.normal(size=(4, 4, 4))), w, cfg, tr)
    assert tr["attn"].shape[-1] == 1
    np.testing.assert_array_equal(tr["attn"], 1.0)
    np.testing.assert_array_equal(tr["mixed"], np.broadcast_to(tr["v"], tr["mixed"].shape))


@given(st.integers(0, 2**31))
def test_rgsa_rows_sum_to_one_and_convex(seed):
    r = np.random.default_rng(seed)
    cfg, w, x = _rgsa_instance(r, 7, 5, 4, 2)
    tr = {}
    rgsa_forward(Tensor(x), w, cfg, tr)
    assert np.abs(tr["attn"].sum(-1) - 1).max() <= 1e-12
    lo = tr["v"].min(axis=2, keepdims=True) - 1e-12
    hi = tr["v"].max(axis=2, keepdims=True) + 1e-12
    assert ((tr["mixed"] >= lo) & (tr["mixed"] <= hi)).all()


def test_rgsa_head_permutation(rng):
    heads, C = 3, 6
    cfg, w, x = _rgsa_instance(rng, 6, 6, C, heads)
    perm = [2, 0, 1]
    dq, dv = cfg.reduced_dim // heads, C // heads

    def cols(d):
        return np.concatenate([np.arange(p * d, (p + 1) * d) for p in perm])

    cq, cv = cols(dq), cols(dv)
    pw = w.replace(
        q_w=Tensor(w.q_w.data[:, cq]), q_b=Tensor(w.q_b.data[cq]),
        k_w=Tensor(w.k_w.data[:, cq]), k_b=Tensor(w.k_b.data[cq]),
        v_w=Tensor(w.v_w.data[:, cv]), v_b=Tensor(w.v_b.data[cv]),
        proj_w=Tensor(w.proj_w.data[cv, :]),
    )
    np.testing.assert_allclose(rgsa_forward(Tensor(x), pw, cfg).data, rgsa_forward(Tensor(x), w, cfg).data, atol=1e-10)


def test_rgsa_batched_equals_unbatched(rng):
    cfg, w, _ = _rgsa_instance(rng, C=4, heads=2)
    xs = rng.normal(size=(2, 5, 6, 4))
    out = rgsa_forward(Tensor(xs), w, cfg).data
    for b in range(2):
        np.testing.assert_allclose(out[b], rgsa_forward(Tensor(xs[b]), w, cfg).data, atol=1e-13)


def test_rgsa_channel_mismatch(rng):
    cfg, w, _ = _rgsa_instance(rng)
    with pytest.raises(ValueError, match="channels"):
        rgsa_forward(Tensor(np.zeros((4, 4, 5))), w, cfg)


# ---- windows


def test_partition_counts(rng):
    wins, _ = window_partition(Tensor(rng.normal(size=(64, 64, 2))), WindowSpec(8, 32))
    assert wins.shape == (16, 256, 2)
    x = rng.normal(size=(10, 10, 3))
    wins, info = window_partition(Tensor(x), WindowSpec(8, 32))
    assert wins.shape[0] == 2 and (info.padded_height, info.padded_width) == (16, 32)
    np.testing.assert_array_equal(window_reverse(wins, WindowSpec(8, 32), info).data, x)


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 9), st.integers(1, 9), st.booleans())
def test_partition_round_trip(H, W, wh, ww, batched):
    x = np.random.default_rng(H * 31 + W).normal(size=((2,) if batched else ()) + (H, W, 2))
    win = WindowSpec(wh, ww)
    wins, info = window_partition(Tensor(x), win)
    assert wins.shape[0] == (2 if batched else 1) * -(-H // wh) * -(-W // ww)
    np.testing.assert_array_equal(window_reverse(wins, win, info).data, x)


def test_partition_is_row_major(rng):
    x = np.arange(4 * 6, dtype=float).reshape(4, 6, 1)
    wins, _ = window_partition(Tensor(x), WindowSpec(2, 3))
    np.testing.assert_array_equal(wins.data[1, :, 0], [3, 4, 5, 9, 10, 11])


# ---- L-SA


def _lsa_weights(rng, C):
    w = LsaWeights.random(C, rng)
    return w, as_arrays(w)


@pytest.mark.parametrize("H,W,C,heads", [(4, 6, 4, 2), (3, 3, 6, 3), (5, 2, 4, 1)])
def test_lsa_full_window_matches_dense(rng, H, W, C, heads):
    w, a = _lsa_weights(rng, C)
    x = rng.normal(size=(H, W, C))
    out = lsa_forward(Tensor(x), w, WindowSpec(H, W), heads, split=False).data
    np.testing.assert_allclose(out, dense_self_attention(x.reshape(-1, C), a, heads).reshape(H, W, C), atol=1e-10)


def test_lsa_split_full_window_matches_dense(rng):
    w, a = _lsa_weights(rng, 8)
    x = rng.normal(size=(5, 5, 8))
    out = lsa_forward(Tensor(x), w, WindowSpec(5, 5), 4).data
    np.testing.assert_allclose(out, dense_self_attention(x.reshape(-1, 8), a, 4).reshape(5, 5, 8), atol=1e-10)


def test_lsa_padded_windows_ignore_padding(rng):
    """Each window of a padded input equals dense attention over its valid tokens only."""
    C, heads = 4, 2
    w, a = _lsa_weights(rng, C)
    x = rng.normal(size=(5, 7, C))
    win = WindowSpec(4, 4)
    out = lsa_forward(Tensor(x), w, win, heads, split=False).data
    for i0 in range(0, 5, 4):
        for j0 in range(0, 7, 4):
            blk = x[i0 : i0 + 4, j0 : j0 + 4]
            ref = dense_self_attention(blk.reshape(-1, C), a, heads).reshape(blk.shape)
            np.testing.assert_allclose(out[i0 : i0 + 4, j0 : j0 + 4], ref, atol=1e-10)


def test_lsa_split_orientations(rng):
    """Half the heads see 2x4 windows, the other half 4x2 windows."""
    C = 4
    w, a = _lsa_weights(rng, C)
    x = rng.normal(size=(4, 4, C))
    out = lsa_forward(Tensor(x), w, WindowSpec(2, 4), 2).data
    qkv = x.reshape(-1, C) @ a["qkv_w"] + a["qkv_b"]
    q, k, v = (qkv[:, i * C : (i + 1) * C].reshape(4, 4, C) for i in range(3))
    mixed = np.zeros((4, 4, C))
    for head, (wh, ww) in enumerate([(2, 4), (4, 2)]):
        sl = slice(head * 2, head * 2 + 2)
        for i0 in range(0, 4, wh):
            for j0 in range(0, 4, ww):
                blk = (slice(i0, i0 + wh), slice(j0, j0 + ww), sl)
                qs, ks, vs = (t[blk].reshape(-1, 2) for t in (q, k, v))
                s = qs @ ks.T / np.sqrt(2)
                p = np.exp(s - s.max(1, keepdims=True))
                p /= p.sum(1, keepdims=True)
                mixed[blk] = (p @ vs).reshape(wh, ww, 2)
    ref = mixed.reshape(-1, C) @ a["proj_w"] + a["proj_b"]
    np.testing.assert_allclose(out, ref.reshape(4, 4, C), atol=1e-10)


def test_lsa_window_locality(rng):
    w, _ = _lsa_weights(rng, 4)
    x = rng.normal(size=(8, 8, 4))
    y = x.copy()
    y[4:, :] = rng.normal(size=(4, 8, 4))
    win = WindowSpec(4, 8)
    a = lsa_forward(Tensor(x), w, win, 2, split=False).data
    b = lsa_forward(Tensor(y), w, win, 2, split=False).data
    np.testing.assert_array_equal(a[:4], b[:4])
    assert not np.array_equal(a[4:], b[4:])


def test_lsa_reference_shape(rng):
    w = LsaWeights.random(180, rng, 0.02)
    assert lsa_forward(Tensor(rng.normal(size=(64, 64, 180))), w, WindowSpec(8, 32), 6).shape == (64, 64, 180)


def test_lsa_rows_sum_to_one(rng):
    w, _ = _lsa_weights(rng, 4)
    tr = {}
    lsa_forward(Tensor(rng.normal(size=(9, 11, 4))), w, WindowSpec(4, 8), 2, trace=tr)
    assert len(tr["attn"]) == 2
    for a in tr["attn"]:
        assert np.abs(a.sum(-1) - 1).max() <= 1e-12


def test_lsa_odd_heads_rejected(rng):
    w, _ = _lsa_weights(rng, 6)
    with pytest.raises(ConfigError):
        lsa_forward(Tensor(np.zeros((4, 4, 6))), w, WindowSpec(2, 2), 3)
