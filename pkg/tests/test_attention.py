import math

import numpy as np
import pytest

from attnedit.attention import (
    ProjectionSet,
    build_toy_denoiser,
    cross_attention,
    sparse_causal_attention,
)
from attnedit.core import KINDS, ShapeMismatchError, ValidationError


def brute_attention(x_q, x_kv, proj):
    """Direct summation, one query/key pair at a time."""
    H, d = proj.heads, proj.head_dim
    q = x_q @ proj.W_Q
    k = x_kv @ proj.W_K
    v = x_kv @ proj.W_V
    nq, nk = x_q.shape[0], x_kv.shape[0]
    probs = np.zeros((H, nq, nk))
    merged = np.zeros((nq, H * d))
    for h in range(H):
        sl = slice(h * d, (h + 1) * d)
        for i in range(nq):
            logits = [sum(q[i, sl][c] * k[j, sl][c] for c in range(d)) / math.sqrt(d) for j in range(nk)]
            mx = max(logits)
            w = [math.exp(l - mx) for l in logits]
            tot = sum(w)
            for j in range(nk):
                probs[h, i, j] = w[j] / tot
                for c in range(d):
                    merged[i, h * d + c] += probs[h, i, j] * v[j, sl][c]
    return merged @ proj.W_O, probs


def _proj(rng, feat, ctx, heads=2, hd=3):
    return ProjectionSet.random(rng, feat, ctx, heads, hd)


def test_single_token_map_is_one():
    rng = np.random.default_rng(0)
    proj = _proj(rng, 4, 5)
    _, m = cross_attention(rng.standard_normal((1, 4)), rng.standard_normal((1, 5)), proj)
    assert m.shape == (2, 1, 1) and np.all(m == 1.0)


def test_equal_logits_split_evenly():
    rng = np.random.default_rng(0)
    proj = _proj(rng, 4, 5)
    tok = rng.standard_normal((1, 5))
    _, m = cross_attention(rng.standard_normal((3, 4)), np.vstack([tok, tok]), proj)
    np.testing.assert_allclose(m, 0.5, atol=1e-7)


@pytest.mark.parametrize("seed", range(100))
def test_cross_attention_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    nq, M = rng.integers(1, 6), rng.integers(1, 5)
    proj = _proj(rng, 4, 3, heads=int(rng.integers(1, 3)), hd=int(rng.integers(1, 4)))
    x, p = rng.standard_normal((nq, 4)), rng.standard_normal((M, 3))
    out, m = cross_attention(x, p, proj)
    ref_out, ref_m = brute_attention(x, p, proj)
    np.testing.assert_allclose(m, ref_m, atol=1e-6, rtol=0)
    np.testing.assert_allclose(out, ref_out, atol=1e-6, rtol=0)


def test_cross_attention_4x3_case():
    rng = np.random.default_rng(43)
    proj = _proj(rng, 6, 5)
    x, p = rng.standard_normal((4, 6)), rng.standard_normal((3, 5))
    out, m = cross_attention(x, p, proj)
    ref_out, ref_m = brute_attention(x, p, proj)
    assert m.shape == (2, 4, 3)
    np.testing.assert_allclose(m, ref_m, atol=1e-6)
    np.testing.assert_allclose(out, ref_out, atol=1e-6)


@pytest.mark.parametrize("seed", range(100))
def test_sparse_causal_matches_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    K, Q, D = 3, int(rng.integers(1, 6)), 4
    proj = _proj(rng, D, D)
    clip = rng.standard_normal((K, Q, D))
    for k in range(K):
        prev = clip[k - 1] if k else clip[0]
        out, m = sparse_causal_attention(clip[k], clip[0], prev, proj)
        ref_out, ref_m = brute_attention(clip[k], np.concatenate([clip[0], prev]), proj)
        assert m.shape == (2, Q, 2 * Q)
        np.testing.assert_allclose(m, ref_m, atol=1e-6)
        np.testing.assert_allclose(out, ref_out, atol=1e-6)


def test_first_frame_equals_plain_self_attention():
    rng = np.random.default_rng(7)
    proj = _proj(rng, 4, 4)
    f = rng.standard_normal((5, 4))
    out, m = sparse_causal_attention(f, f, f, proj)
    plain_out, plain_m = brute_attention(f, f, proj)
    np.testing.assert_allclose(out, plain_out, atol=1e-6)
    np.testing.assert_allclose(m[..., :5] + m[..., 5:], plain_m, atol=1e-6)
    np.testing.assert_array_equal(m[..., :5], m[..., 5:])


def test_identical_frames_match_first_frame_map():
    rng = np.random.default_rng(8)
    proj = _proj(rng, 4, 4)
    f = rng.standard_normal((5, 4))
    _, m1 = sparse_causal_attention(f, f, f, proj)
    _, m3 = sparse_causal_attention(f.copy(), f.copy(), f.copy(), proj)
    assert m1.tobytes() == m3.tobytes()


def test_shape_errors():
    rng = np.random.default_rng(0)
    proj = _proj(rng, 4, 5)
    with pytest.raises(ShapeMismatchError):
        cross_attention(rng.standard_normal((3, 3)), rng.standard_normal((2, 5)), proj)
    with pytest.raises(ShapeMismatchError):
        cross_attention(rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), proj)
    p2 = _proj(rng, 4, 4)
    with pytest.raises(ShapeMismatchError):
        sparse_causal_attention(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((2, 4)), p2)
    with pytest.raises(ShapeMismatchError):
        ProjectionSet(np.zeros((4, 6)), np.zeros((5, 6)), np.zeros((5, 5)), np.zeros((6, 4)), 2, 3)


def test_hook_substitution_is_exact():
    rng = np.random.default_rng(9)
    proj = _proj(rng, 4, 5)
    x, p = rng.standard_normal((3, 4)), rng.standard_normal((6, 5))
    replacement = rng.random((2, 3, 6)).astype(np.float32)
    replacement /= replacement.sum(-1, keepdims=True)
    out, used = cross_attention(x, p, proj, hook=lambda *a: replacement)
    assert used.tobytes() == replacement.tobytes()
    v = (p @ proj.W_V).reshape(6, 2, 3).transpose(1, 0, 2)
    direct = np.matmul(replacement.astype(np.float64), v).transpose(1, 0, 2).reshape(3, 6) @ proj.W_O
    np.testing.assert_allclose(out, direct, atol=1e-12)


def test_hook_receives_context_and_shape_is_checked():
    rng = np.random.default_rng(10)
    proj = _proj(rng, 4, 5)
    seen = []

    def hook(layer, kind, step, frame, m):
        seen.append((layer, kind, step, frame, m.shape))
        return m

    cross_attention(np.zeros((3, 4)), np.zeros((2, 5)), proj, hook, layer_id=4, step=7, frame=2)
    assert seen == [(4, "cross", 7, 2, (2, 3, 2))]
    with pytest.raises(ShapeMismatchError):
        cross_attention(np.zeros((3, 4)), np.zeros((2, 5)), proj, lambda *a: np.ones((2, 3, 3)) / 3)


def test_hook_map_is_renormalized_when_drifting():
    rng = np.random.default_rng(11)
    proj = _proj(rng, 4, 5)
    bad = np.full((2, 3, 2), 0.6, dtype=np.float32)
    _, used = cross_attention(np.zeros((3, 4)), rng.standard_normal((2, 5)), proj, lambda *a: bad)
    np.testing.assert_allclose(used.sum(-1), 1.0, atol=1e-6)
    with pytest.raises(ValidationError):
        cross_attention(np.zeros((3, 4)), rng.standard_normal((2, 5)), proj, lambda *a: np.zeros((2, 3, 2)))


# -- toy denoiser -----------------------------------------------------------

def _toy_input(seed=0, K=3):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (K, 3, 16, 16))


def test_toy_deterministic(tok):
    ctx_prompt = tok.encode("a fox on grass")
    a, b = build_toy_denoiser(5), build_toy_denoiser(5)
    z = _toy_input()
    ea = a.forward(z, 10, a.embed_prompt(ctx_prompt))
    eb = b.forward(z, 10, b.embed_prompt(ctx_prompt))
    assert ea.tobytes() == eb.tobytes()
    assert ea.shape == z.shape
    assert a.fingerprint() == b.fingerprint() != build_toy_denoiser(6).fingerprint()


def test_toy_identity_hook(tok, toy):
    ctx = toy.embed_prompt(tok.encode("a fox"))
    z = _toy_input(1)
    plain = toy.forward(z, 3, ctx)
    hooked = toy.forward(z, 3, ctx, hook=lambda l, k, s, f, m: m)
    assert plain.tobytes() == hooked.tobytes()


def test_toy_cross_perturbation_changes_eps(tok, toy):
    ctx = toy.embed_prompt(tok.encode("a fox on grass"))
    z = _toy_input(2)
    plain = toy.forward(z, 3, ctx)

    def perturb(layer, kind, step, frame, m):
        if layer == 0 and kind == "cross" and frame == 1:
            m = np.roll(m, 1, axis=-1)
        return m

    delta = np.abs(toy.forward(z, 3, ctx, hook=perturb) - plain).max()
    assert delta > 1e-3


def test_toy_hook_order_and_completeness(tok, toy):
    calls = []
    toy.forward(_toy_input(K=3), 0, toy.embed_prompt(tok.encode("a")),
                hook=lambda l, k, s, f, m: calls.append((l, k, f)) or m)
    assert len(calls) == len(set(calls)) == len(toy.layers) * len(KINDS) * 3
    expected = [(l, kind, f) for l in range(2) for kind in ("spatial_temporal", "cross") for f in range(3)]
    assert calls == expected


def test_toy_maps_row_stochastic(tok, toy):
    maps = []
    toy.forward(_toy_input(3), 50, toy.embed_prompt(tok.encode("a white fox")),
                hook=lambda l, k, s, f, m: maps.append(m) or m)
    for m in maps:
        np.testing.assert_allclose(m.sum(-1, dtype=np.float64), 1.0, atol=1e-5)
        assert m.min() >= 0 and m.max() <= 1


def test_toy_resolution_checks():
    with pytest.raises(ShapeMismatchError):
        build_toy_denoiser(0, (8, 3), latent_size=(16, 16))
    den = build_toy_denoiser(0, (5,))
    with pytest.raises(ShapeMismatchError):
        den.forward(np.zeros((1, 3, 16, 16)), 0, np.zeros((2, 16)))
    with pytest.raises(ValidationError):
        build_toy_denoiser(0, ())
