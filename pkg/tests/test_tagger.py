import hashlib

import numpy as np
import pytest

from dsnerlab.corpus import TagSet, Vocabulary
from dsnerlab.tagger import (
    AdamState,
    TaggerArch,
    TaggerParams,
    adam_step,
    ema_update,
    eval_probs,
    hidden_activations,
    init_adam,
    init_params,
    load_checkpoint,
    loss_and_grad,
    mc_probs,
    output_probs,
    save_checkpoint,
    snapshot,
    warmup_lr,
    window_ids,
)

ARCH = TaggerArch(embedding_dim=4, window_radius=1, hidden_dim=6,
                  num_labels=9, dropout_rate=0.5, init_seed=11)


def small_params(seed=11, vocab=12, arch=ARCH):
    return init_params(TaggerArch(arch.embedding_dim, arch.window_radius,
                                  arch.hidden_dim, arch.num_labels,
                                  arch.dropout_rate, seed), vocab)


def zero_params(vocab=12, arch=ARCH):
    p = small_params(vocab=vocab, arch=arch)
    for _, a in p.named_arrays():
        a[:] = 0.0
    return p


def test_window_ids_padding():
    got = window_ids(np.array([5, 6, 7]), radius=2)
    np.testing.assert_array_equal(got[0], [0, 0, 5, 6, 7])
    np.testing.assert_array_equal(got[2], [5, 6, 7, 0, 0])


def test_forward_zero_params_uniform():
    p = zero_params()
    probs = eval_probs(p, window_ids(np.array([1, 2, 3]), 1))
    np.testing.assert_allclose(probs, 1.0 / 9, atol=1e-15)


def test_forward_rows_normalized():
    p = small_params()
    probs = eval_probs(p, window_ids(np.arange(1, 9), 1))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert (probs > 0).all() and (probs < 1).all()


def test_forward_id_out_of_range():
    p = small_params(vocab=4)
    with pytest.raises(ValueError, match="out of range"):
        eval_probs(p, window_ids(np.array([9]), 1))


def test_mc_deterministic_given_seed_and_pass():
    p = small_params()
    win = window_ids(np.array([1, 2, 3, 4]), 1)
    a = mc_probs(p, win, 0.5, base_seed=7, pass_index=3, sentence_index=5)
    b = mc_probs(p, win, 0.5, base_seed=7, pass_index=3, sentence_index=5)
    np.testing.assert_array_equal(a, b)
    c = mc_probs(p, win, 0.5, base_seed=7, pass_index=4, sentence_index=5)
    assert not np.array_equal(a, c)


def test_mc_equals_eval_without_dropout():
    p = small_params()
    win = window_ids(np.array([1, 2, 3]), 1)
    np.testing.assert_allclose(
        mc_probs(p, win, 0.0, base_seed=1, pass_index=0, sentence_index=0),
        eval_probs(p, win), atol=1e-15)


def test_mc_hidden_cache_is_pure_optimization():
    p = small_params()
    win = window_ids(np.array([3, 1, 2]), 1)
    h = hidden_activations(p, win)
    np.testing.assert_array_equal(
        mc_probs(p, win, 0.5, 9, 2, 4),
        mc_probs(p, win, 0.5, 9, 2, 4, hidden=h))


# -- loss and gradients ------------------------------------------------------


def test_loss_uniform_is_log_num_labels():
    p = zero_params()
    win = window_ids(np.array([1]), 1)
    loss, grads, used = loss_and_grad(p, win, np.array([4]), np.array([1.0]))
    assert used == 1
    assert loss == pytest.approx(np.log(9), abs=1e-12)


def test_loss_fully_masked_batch():
    p = small_params()
    win = window_ids(np.array([1, 2]), 1)
    loss, grads, used = loss_and_grad(p, win, np.array([0, 1]), np.zeros(2))
    assert loss == 0.0 and used == 0
    assert all(np.all(g == 0) for _, g in grads.named_arrays())


def test_masked_token_equals_deleted_token():
    # zeroing a token's weight must equal dropping its loss term entirely
    p = small_params()
    ids = np.array([1, 2, 3])
    win = window_ids(ids, 1)
    labels = np.array([0, 3, 5])
    _, g_masked, _ = loss_and_grad(p, win, labels, np.array([1.0, 0.0, 1.0]))
    _, g_dropped, _ = loss_and_grad(p, win[[0, 2]], labels[[0, 2]], np.ones(2))
    for (_, a), (_, b) in zip(g_masked.named_arrays(), g_dropped.named_arrays()):
        np.testing.assert_allclose(a, b, atol=1e-15)


def fd_check(params, win, labels, weights, dmask, rate, h=1e-4):
    _, grads, _ = loss_and_grad(params, win, labels, weights, dmask, rate)
    worst = 0.0
    for name, arr in params.named_arrays():
        g = dict(grads.named_arrays())[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            lp, _, _ = loss_and_grad(params, win, labels, weights, dmask, rate)
            arr[idx] = orig - h
            lm, _, _ = loss_and_grad(params, win, labels, weights, dmask, rate)
            arr[idx] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(g[idx]), 1e-8)
            worst = max(worst, abs(fd - g[idx]) / denom)
    return worst


def test_gradients_match_finite_differences_smoke():
    rng = np.random.default_rng(3)
    arch = TaggerArch(3, 1, 4, 5, 0.4, init_seed=2)
    p = init_params(arch, 7)
    ids = rng.integers(0, 7, size=5)
    win = window_ids(ids, 1)
    labels = rng.integers(0, 5, size=5)
    weights = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
    dmask = rng.random((5, 4)) >= 0.4
    assert fd_check(p, win, labels, weights, dmask, 0.4) < 1e-4


def test_overfit_single_batch():
    # 200 optimization steps on one small batch drive the loss under 0.05
    rng = np.random.default_rng(0)
    arch = TaggerArch(8, 1, 16, 9, 0.0, init_seed=5)
    p = init_params(arch, 30)
    sentences = [rng.integers(2, 30, size=rng.integers(3, 7)) for _ in range(5)]
    win = np.concatenate([window_ids(s, 1) for s in sentences])
    labels = rng.integers(0, 9, size=win.shape[0])
    weights = np.ones(len(labels))
    state = init_adam(p, lr=0.05)
    for _ in range(200):
        loss, grads, _ = loss_and_grad(p, win, labels, weights)
        adam_step(p, grads, state)
    assert loss < 0.05


# -- optimizer ---------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = small_params()
    before = snapshot(p)
    grads = TaggerParams(*(np.zeros_like(a) for _, a in p.named_arrays()))
    adam_step(p, grads, init_adam(p, lr=0.1))
    assert p.equals(before)


def test_adam_first_step_magnitude_is_lr():
    # bias correction makes the first update ~ lr * sign(g)
    p = zero_params()
    grads = TaggerParams(*(np.full_like(a, 0.37) for _, a in p.named_arrays()))
    adam_step(p, grads, init_adam(p, lr=1e-3))
    for _, arr in p.named_arrays():
        np.testing.assert_allclose(np.abs(arr), 1e-3, rtol=1e-6)


def test_adam_nonfinite_gradient_names_block():
    p = small_params()
    grads = TaggerParams(*(np.zeros_like(a) for _, a in p.named_arrays()))
    grads.w_out[0, 0] = np.nan
    with pytest.raises(ValueError, match="w_out"):
        adam_step(p, grads, init_adam(p, lr=0.1))


def test_adam_against_manual_two_steps():
    p = zero_params(vocab=1, arch=TaggerArch(1, 0, 1, 1, 0.0, 0))
    state = init_adam(p, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    g1, g2 = 0.5, -0.2
    m = v = 0.0
    theta = 0.0
    for t, g in ((1, g1), (2, g2)):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    for g in (g1, g2):
        grads = TaggerParams(*(np.full_like(a, g) for _, a in p.named_arrays()))
        adam_step(p, grads, state)
    assert p.embed[0, 0] == pytest.approx(theta, abs=1e-15)


def test_warmup_schedule():
    assert warmup_lr(1e-2, 1, 10) == pytest.approx(1e-3)
    assert warmup_lr(1e-2, 10, 10) == pytest.approx(1e-2)
    assert warmup_lr(1e-2, 50, 10) == pytest.approx(1e-2)
    assert warmup_lr(1e-2, 1, 0) == pytest.approx(1e-2)


# -- EMA ----------------------------------------------------------------------


def test_ema_direct_substitution():
    t = zero_params()
    t.embed[:] = 1.0
    s = zero_params()
    ema_update(t, s, 0.995)
    np.testing.assert_allclose(t.embed, 0.995, atol=1e-15)


def test_ema_boundaries():
    t, s = small_params(seed=1), small_params(seed=2)
    t1 = snapshot(t)
    ema_update(t1, s, 1.0)
    assert t1.equals(t)
    t0 = snapshot(t)
    ema_update(t0, s, 0.0)
    assert t0.equals(s)


def test_ema_closed_form_ten_steps():
    alpha = 0.995
    t, s = small_params(seed=1), small_params(seed=2)
    t0 = snapshot(t)
    for _ in range(10):
        ema_update(t, s, alpha)
    for (_, got), (_, start), (_, fixed) in zip(
            t.named_arrays(), t0.named_arrays(), s.named_arrays()):
        expect = fixed + alpha ** 10 * (start - fixed)
        np.testing.assert_allclose(got, expect, atol=1e-12)


def test_ema_shape_mismatch():
    t = small_params()
    s = init_params(TaggerArch(4, 1, 7, 9, 0.5, 0), 12)
    with pytest.raises(ValueError, match="w_hidden"):
        ema_update(t, s, 0.5)


def test_ema_alpha_range():
    t, s = small_params(), small_params()
    with pytest.raises(ValueError):
        ema_update(t, s, 1.5)


# -- snapshots and checkpoints ------------------------------------------------


def test_snapshot_is_independent():
    p = small_params()
    q = snapshot(p)
    q.embed[0, 0] += 1.0
    assert not p.equals(q)
    assert snapshot(p).equals(snapshot(p))


def params_digest(params):
    h = hashlib.sha256()
    for name, arr in params.named_arrays():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def test_init_deterministic_under_seed():
    assert params_digest(small_params(seed=42)) == params_digest(small_params(seed=42))
    assert params_digest(small_params(seed=42)) != params_digest(small_params(seed=43))


def test_init_glorot_bounds():
    arch = TaggerArch(4, 1, 6, 9, 0.5, 3)
    p = init_params(arch, 12)
    r = np.sqrt(6.0 / (arch.input_dim + arch.hidden_dim))
    assert np.abs(p.w_hidden).max() <= r
    assert np.all(p.b_hidden == 0) and np.all(p.b_out == 0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    arch = TaggerArch(4, 1, 6, 9, 0.5, 3)
    p = init_params(arch, 12)
    tagset = TagSet(["PER", "LOC", "ORG", "MISC"])
    vocab = Vocabulary(["alpha", "beta"], min_count=2, case_folding=True)
    path = tmp_path / "model.npz"
    save_checkpoint(path, arch, p, tagset, vocab, extra={"note": "x"})
    arch2, p2, tagset2, vocab2, extra = load_checkpoint(path)
    assert arch2 == arch
    assert tagset2 == tagset
    assert vocab2.token_to_id == vocab.token_to_id
    assert vocab2.min_count == 2 and vocab2.case_folding is True
    assert extra == {"note": "x"}
    for (_, a), (_, b) in zip(p.named_arrays(), p2.named_arrays()):
        assert a.dtype == b.dtype
        np.testing.assert_array_equal(a, b)


def test_arch_validation():
    with pytest.raises(ValueError):
        TaggerArch(0, 1, 4, 9, 0.5, 0)
    with pytest.raises(ValueError):
        TaggerArch(4, 1, 4, 9, 1.0, 0)
