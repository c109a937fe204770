"""Fusion vs independent dense oracles: windowed attention, pixel-word
attention, and the final-stage aggregation, all at 1e-10 on small inputs."""

import numpy as np
import pytest

import refseg.tensor as T
from refseg.fusion import (
    MFAModule,
    PixelWordAttentionModule,
    WindowAttentionBlock,
    mfa_aggregate,
    pixel_word_attention,
    window_self_attention,
)
from refseg.gradcheck import finite_difference_check
from refseg.tensor import ShapeMismatch, Tensor

ATOL = 1e-10


# -- dense reference implementations (numpy only, loops where clearer) --------


def _ln(x, g, b, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def dense_block(tokens, invalid, blk):
    """Reference for WindowAttentionBlock.attend on (n, t, C) numpy tokens."""
    n, t, c = tokens.shape
    heads, d = blk.heads, blk.head_dim
    out = np.empty_like(tokens)
    for gi in range(n):
        h = _ln(tokens[gi], blk.ln1_g.data, blk.ln1_b.data)
        q = h @ blk.wq.data + blk.bq.data
        k = h @ blk.wk.data + blk.bk.data
        v = h @ blk.wv.data + blk.bv.data
        attn_out = np.zeros((t, c))
        for hd in range(heads):
            sl = slice(hd * d, (hd + 1) * d)
            logits = q[:, sl] @ k[:, sl].T / np.sqrt(d) + blk.bias.data[hd]
            if invalid is not None:
                logits = logits + np.where(invalid[gi][None, :], -1e9, 0.0)
            w = np.exp(logits - logits.max(-1, keepdims=True))
            w /= w.sum(-1, keepdims=True)
            attn_out[:, sl] = w @ v[:, sl]
        x = tokens[gi] + attn_out @ blk.wo.data + blk.bo.data
        h2 = _ln(x, blk.ln2_g.data, blk.ln2_b.data)
        out[gi] = x + np.maximum(h2 @ blk.w1.data + blk.b1.data, 0.0) @ blk.w2.data + blk.b2.data
    return out


def dense_window_attention(x, blk, shift):
    """Reference for window_self_attention: explicit pad/partition loops."""
    c, h, w = x.shape
    ws = int(np.sqrt(blk.tokens))
    off = ws // 2 if shift else 0
    h2 = -(-(h + off) // ws) * ws
    w2 = -(-(w + off) // ws) * ws
    xp = np.zeros((c, h2, w2))
    xp[:, off : off + h, off : off + w] = x
    valid = np.zeros((h2, w2), dtype=bool)
    valid[off : off + h, off : off + w] = True
    nh, nw = h2 // ws, w2 // ws
    toks = np.zeros((nh * nw, ws * ws, c))
    inval = np.zeros((nh * nw, ws * ws), dtype=bool)
    for wi in range(nh):
        for wj in range(nw):
            g = wi * nw + wj
            for yy in range(ws):
                for xx in range(ws):
                    toks[g, yy * ws + xx] = xp[:, wi * ws + yy, wj * ws + xx]
                    inval[g, yy * ws + xx] = not valid[wi * ws + yy, wj * ws + xx]
    out_tok = dense_block(toks, inval, blk)
    yp = np.zeros_like(xp)
    for wi in range(nh):
        for wj in range(nw):
            g = wi * nw + wj
            for yy in range(ws):
                for xx in range(ws):
                    yp[:, wi * ws + yy, wj * ws + xx] = out_tok[g, yy * ws + xx]
    return yp[:, off : off + h, off : off + w]


def dense_pwam(v, f_t, mask, mod):
    """Reference for PixelWordAttentionModule.forward: per-pixel loops."""
    c, h, w = v.shape
    c_t, t_len = f_t.shape
    out = np.zeros((c, h, w))
    weights = np.zeros((h * w, t_len))
    keys = f_t.T @ mod.w_t.data + mod.b_t.data
    vals = f_t.T @ mod.w_tv.data + mod.b_tv.data
    for y in range(h):
        for x in range(w):
            pix = v[:, y, x]
            q = pix @ mod.w_iv.data + mod.b_iv.data
            logits = np.array(
                [
                    q @ keys[j] / np.sqrt(c) + (0.0 if mask[j] else -1e9)
                    for j in range(t_len)
                ]
            )
            e = np.exp(logits - logits.max())
            wgt = e / e.sum()
            weights[y * w + x] = wgt
            g = sum(wgt[j] * vals[j] for j in range(t_len))
            gate = pix @ mod.w_im.data + mod.b_im.data
            out[:, y, x] = g * gate
    return weights, out


def dense_mfa(textmap, guidance, mfa, pwam, v):
    """Reference composition for the final-stage aggregation."""
    c, h, w = guidance.shape
    gp = np.einsum("chw,cd->dhw", guidance, mfa.w_g.data) + mfa.b_g.data[:, None, None]
    cat = np.concatenate([textmap, gp], axis=0)
    x = dense_window_attention(cat, mfa.block1, shift=False)
    x = dense_window_attention(x, mfa.block2, shift=True)
    x = np.einsum("chw,cd->dhw", x, mfa.w_out.data) + mfa.b_out.data[:, None, None]
    gate = np.einsum("chw,cd->dhw", v, pwam.w_im.data) + pwam.b_im.data[:, None, None]
    return x * gate


# -- oracle equivalence --------------------------------------------------------


@pytest.mark.parametrize("shape,ws,shift", [
    ((4, 6, 6), 3, False),
    ((4, 6, 6), 3, True),
    ((8, 8, 8), 3, False),
    ((8, 8, 8), 3, True),
    ((4, 7, 5), 4, False),   # padding on both axes
    ((4, 7, 5), 4, True),
])
def test_window_attention_matches_dense_oracle(rng, shape, ws, shift):
    blk = WindowAttentionBlock(rng, shape[0], heads=2, tokens=ws * ws)
    for p in blk.parameters():
        if p.data.ndim >= 2 or "bias" in p.name:
            p.data += 0.05 * np.random.default_rng(1).standard_normal(p.data.shape)
    x = rng.standard_normal(shape)
    got = window_self_attention(Tensor(x), blk, shift=shift)
    want = dense_window_attention(x, blk, shift)
    np.testing.assert_allclose(got.data, want, atol=ATOL, rtol=0)


def test_pwam_matches_loop_oracle(rng):
    mod = PixelWordAttentionModule(rng, c_vis=6, c_text=5)
    v = rng.standard_normal((6, 4, 4))
    f_t = rng.standard_normal((5, 7))
    mask = np.array([1, 1, 1, 0, 1, 0, 0], dtype=bool)
    pwa, fused = pixel_word_attention(mod, Tensor(v), Tensor(f_t), mask)
    w_want, out_want = dense_pwam(v, f_t, mask, mod)
    np.testing.assert_allclose(pwa.weights.data, w_want, atol=ATOL, rtol=0)
    np.testing.assert_allclose(fused.data, out_want, atol=ATOL, rtol=0)


def test_mfa_matches_dense_composition_oracle(rng):
    c = 6
    mfa = MFAModule(rng, c_stage=c, heads=2, window_size=3)
    pwam = PixelWordAttentionModule(rng, c_vis=c, c_text=4)
    v = rng.standard_normal((c, 5, 5))
    p4 = rng.standard_normal((c, 5, 5))
    f_t = rng.standard_normal((4, 6))
    mask = np.ones(6, dtype=bool)
    pwa, _ = pwam.forward(Tensor(v), Tensor(f_t), mask)
    got = mfa_aggregate(mfa, pwa, Tensor(p4), pwam, Tensor(v))
    want = dense_mfa(pwa.textmap.data, p4, mfa, pwam, v)
    np.testing.assert_allclose(got.data, want, atol=ATOL, rtol=0)


# -- structural properties ------------------------------------------------------


def test_pwam_weights_row_stochastic_and_masked(rng):
    mod = PixelWordAttentionModule(rng, c_vis=4, c_text=3)
    v = rng.standard_normal((4, 3, 3))
    f_t = rng.standard_normal((3, 5))
    mask = np.array([1, 0, 1, 1, 0], dtype=bool)
    pwa = mod.attend_text(Tensor(v), Tensor(f_t), mask)
    w = pwa.weights.data
    np.testing.assert_allclose(w.sum(-1), np.ones(9), atol=1e-12)
    assert (w[:, ~mask] == 0.0).all(), "masked tokens must get exactly zero weight"


def test_pwam_rejects_fully_masked_text(rng):
    mod = PixelWordAttentionModule(rng, c_vis=4, c_text=3)
    with pytest.raises(ShapeMismatch):
        mod.attend_text(
            Tensor(rng.standard_normal((4, 2, 2))),
            Tensor(rng.standard_normal((3, 4))),
            np.zeros(4, dtype=bool),
        )


def test_window_attention_is_local(rng):
    """A perturbation in one window leaves every other window's output unchanged."""
    blk = WindowAttentionBlock(rng, 4, heads=2, tokens=9)
    x = rng.standard_normal((4, 6, 6))
    base = window_self_attention(Tensor(x), blk, shift=False).data
    x2 = x.copy()
    x2[0, 0, 0] += 1.0  # one channel of one pixel inside window (0,0)
    out = window_self_attention(Tensor(x2), blk, shift=False).data
    np.testing.assert_allclose(out[:, :, 3:], base[:, :, 3:], atol=1e-12)
    np.testing.assert_allclose(out[:, 3:, :3], base[:, 3:, :3], atol=1e-12)
    assert np.abs(out[:, :3, :3] - base[:, :3, :3]).max() > 1e-8


def test_shifted_windows_mix_across_unshifted_boundary(rng):
    blk = WindowAttentionBlock(rng, 4, heads=2, tokens=9)
    for p in blk.parameters():
        p.data += 0.1 * np.random.default_rng(2).standard_normal(p.data.shape)
    x = rng.standard_normal((4, 6, 6))
    base = window_self_attention(Tensor(x), blk, shift=True).data
    x2 = x.copy()
    # perturb one channel only: a uniform shift across channels is exactly
    # cancelled by the pre-norm LayerNorm and never reaches the attention path
    x2[0, 2, 2] += 1.0
    out = window_self_attention(Tensor(x2), blk, shift=True).data
    # pixel (2,2) sits in the same shifted window as (3,3): influence crosses
    # the unshifted 3x3 boundary
    assert np.abs(out[:, 3, 3] - base[:, 3, 3]).max() > 1e-8


def test_window_attention_gradients(rng):
    blk = WindowAttentionBlock(rng, 4, heads=2, tokens=4)
    x = Tensor(rng.standard_normal((4, 3, 3)), requires_grad=True)
    fn = lambda x: T.mean_all(T.square(window_self_attention(x, blk, shift=True)))
    assert finite_difference_check(fn, [x], n_probes=8) < 1e-5


def test_pwam_gradients(rng):
    mod = PixelWordAttentionModule(rng, c_vis=4, c_text=3)
    v = Tensor(rng.standard_normal((4, 3, 3)), requires_grad=True)
    f_t = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    mask = np.array([1, 1, 0, 1, 1], dtype=bool)
    fn = lambda v, f_t: T.mean_all(T.square(pixel_word_attention(mod, v, f_t, mask)[1]))
    assert finite_difference_check(fn, [v, f_t], n_probes=8) < 1e-5


def test_mfa_gradients_flow_to_both_branches(rng):
    c = 4
    mfa = MFAModule(rng, c_stage=c, heads=2, window_size=3)
    pwam = PixelWordAttentionModule(rng, c_vis=c, c_text=3)
    v = Tensor(rng.standard_normal((c, 3, 3)), requires_grad=True)
    p4 = Tensor(rng.standard_normal((c, 3, 3)), requires_grad=True)
    f_t = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    mask = np.ones(4, dtype=bool)

    def fn(v, p4, f_t):
        pwa, _ = pwam.forward(v, f_t, mask)
        return T.mean_all(T.square(mfa_aggregate(mfa, pwa, p4, pwam, v)))

    assert finite_difference_check(fn, [v, p4, f_t], n_probes=6) < 1e-5
