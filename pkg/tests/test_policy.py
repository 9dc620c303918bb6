import numpy as np
import pytest

from scrubsim import autodiff as ad, codec, policy
from scrubsim.policy import (
    ACTION_DIMS, ContextOverflow, EpisodeContext, LoraAdapter, NoActionTargets,
    PolicyConfig, PolicyModel, TrainingConfig, action_loss_positions,
    forward_np, forward_t, infer_action, loss_action_only, train)


@pytest.fixture(scope="module")
def model(vocab):
    return PolicyModel.create(PolicyConfig(), vocab, seed=0)


def make_context(vocab, rng, history=2, target=False):
    ids = np.array([1, 2, 3], dtype=np.int64)
    obs = rng.standard_normal((8, PolicyConfig().embed_dim)) * 0.1
    proprio = np.array([vocab.id_of_bin(int(b))
                        for b in rng.integers(0, 256, ACTION_DIMS)])
    hist = [np.array([vocab.id_of_bin(int(b))
                      for b in rng.integers(0, 256, ACTION_DIMS)])
            for _ in range(history)]
    tgt = None
    if target:
        tgt = np.array([vocab.id_of_bin(int(b))
                        for b in rng.integers(0, 256, ACTION_DIMS)])
    return EpisodeContext(ids, obs, proprio, hist, tgt)


def test_lora_identity_at_zero_init(model, vocab, rng):
    adapters = LoraAdapter.create(model, rank=8, seed=5)
    for i in range(10):
        ctx = make_context(vocab, rng)
        base = forward_np(model, None, ctx)
        adapted = forward_np(model, adapters, ctx)
        np.testing.assert_array_equal(base[0], adapted[0])


def test_numpy_and_autodiff_forwards_agree(model, vocab, rng):
    adapters = LoraAdapter.create(model, rank=4, seed=6)
    # make the adapters non-trivial
    for k in adapters.up:
        adapters.up[k] = np.random.default_rng(1).standard_normal(
            adapters.up[k].shape) * 0.01
    ctx = make_context(vocab, rng, target=True)
    fast = forward_np(model, adapters, ctx)[0]
    slow = forward_t(model, adapters, ctx)[0].data
    np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_action_loss_positions_only_before_action_tokens(model, vocab, rng):
    ctx = make_context(vocab, rng, history=1, target=True)
    logits, roles, ids = forward_np(model, None, ctx)
    pos = action_loss_positions(ids, roles)
    roles = np.asarray(roles)
    assert len(pos) > 0
    for t in pos:
        assert roles[t + 1] == codec.ROLE_ACTION
    # no predicted-position target may be a text token
    for t in pos:
        assert vocab.is_action_id(int(ids[t + 1]))


def test_loss_matches_per_position_oracle(model, vocab, rng):
    ctx = make_context(vocab, rng, target=True)
    logits, roles, ids = forward_np(model, None, ctx)
    ids_arr = np.array([i if i is not None else 0 for i in ids])
    seq = codec.TokenSequence(ids_arr, np.asarray(roles))
    loss = float(loss_action_only(logits, seq).data)
    pos = action_loss_positions(ids, roles)
    total = 0.0
    for t in pos:
        row = logits[t] - logits[t].max()
        logp = row - np.log(np.exp(row).sum())
        total -= logp[ids[t + 1]]
    assert abs(loss - total / len(pos)) <= 1e-12


def test_uniform_logits_loss_is_log_vocab(vocab):
    V = vocab.size
    ids = np.array([1, 2] + [vocab.id_of_bin(k) for k in range(ACTION_DIMS)])
    roles = np.array([codec.ROLE_TEXT, codec.ROLE_TEXT] +
                     [codec.ROLE_ACTION] * ACTION_DIMS)
    logits = np.zeros((len(ids), V))
    loss = float(loss_action_only(logits, codec.TokenSequence(ids, roles)).data)
    assert abs(loss - np.log(V)) <= 1e-9


def test_loss_without_action_targets_raises(vocab):
    logits = np.zeros((3, vocab.size))
    seq = codec.TokenSequence(np.array([1, 2, 3]),
                              np.array([codec.ROLE_TEXT] * 3))
    with pytest.raises(NoActionTargets):
        loss_action_only(logits, seq)


def test_context_overflow(model, vocab, rng):
    cfg = model.config
    ids = np.arange(cfg.context_length, dtype=np.int64) % 10
    ctx = EpisodeContext(ids, rng.standard_normal((8, cfg.embed_dim)),
                         np.array([vocab.id_of_bin(0)] * ACTION_DIMS))
    with pytest.raises(ContextOverflow):
        forward_np(model, None, ctx)


def test_history_truncates_oldest(model, vocab, rng):
    # more blocks than the budget: forward must succeed, with the oldest gone
    blocks = 200
    ctx = make_context(vocab, rng, history=blocks)
    logits, roles, ids = forward_np(model, None, ctx)
    assert len(ids) <= model.config.context_length


def test_greedy_decode_is_constrained(model, vocab, ranges, rng):
    adapters = LoraAdapter.create(model, rank=4, seed=8)
    ctx = make_context(vocab, rng)
    action, tokens, latency = infer_action(model, adapters, ctx, vocab, ranges)
    assert len(tokens.ids) == ACTION_DIMS
    for t in tokens.ids:
        assert vocab.is_action_id(int(t))
    assert np.all(action.values >= ranges.lo) and np.all(action.values <= ranges.hi)
    assert latency > 0


def test_training_reduces_loss_on_fixed_batch(model, vocab):
    rng = np.random.default_rng(77)
    samples = [make_context(vocab, rng, target=True) for _ in range(4)]
    adapters = LoraAdapter.create(model, rank=8, seed=9)
    cfg = TrainingConfig(learning_rate=5e-3, batch_size=4, steps=30,
                         warmup=5, seed=10)
    curve = train(model, adapters, samples, cfg)
    assert len(curve) == 30
    assert np.mean(curve[-5:]) < curve[0]


def test_training_is_deterministic(model, vocab):
    rng = np.random.default_rng(78)
    samples = [make_context(vocab, rng, target=True) for _ in range(3)]
    curves = []
    ups = []
    for _ in range(2):
        adapters = LoraAdapter.create(model, rank=4, seed=11)
        curves.append(train(model, adapters, samples,
                            TrainingConfig(steps=5, batch_size=2, seed=12)))
        ups.append({k: v.copy() for k, v in adapters.up.items()})
    np.testing.assert_array_equal(curves[0], curves[1])
    for k in ups[0]:
        np.testing.assert_array_equal(ups[0][k], ups[1][k])
