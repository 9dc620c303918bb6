"""Decoder-only action policy with low-rank adapter fine-tuning.

The context is [instruction tokens || projected observation tokens ||
proprioception block || recent action blocks]; the model is trained by
next-token prediction restricted to action positions and decodes exactly
one 7-token action block per step, constrained to the action vocabulary.
Two forward implementations share the weights: an autodiff path used for
training and gradient checks, and a cached numpy path used for inference
(they agree to float precision; see tests).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .codec import (NUM_BINS, ROLE_ACTION, ROLE_TEXT, ContinuousAction,
                    TokenSequence, detokenize)

ACTION_DIMS = 7


class PolicyError(Exception):
    pass


class ContextOverflow(PolicyError):
    pass


class NoActionTargets(PolicyError):
    pass


class TrainingDiverged(PolicyError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = 1024
    embed_dim: int = 128
    layers: int = 2
    heads: int = 4
    context_length: int = 256
    ff_mult: int = 4

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("head count must divide embedding width")


# every adapted linear layer, per block, plus the output head
def linear_layer_names(config):
    names = []
    for l in range(config.layers):
        names += [f"l{l}_wq", f"l{l}_wk", f"l{l}_wv", f"l{l}_wo",
                  f"l{l}_ff1", f"l{l}_ff2"]
    names.append("head")
    return names


def _sinusoid(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


@dataclass
class PolicyModel:
    config: PolicyConfig
    params: dict
    action_ids: np.ndarray

    @staticmethod
    def create(config, vocab, seed=0):
        """Seeded init. Action-token embeddings carry a smooth code of their
        bin index so ordinal structure is available before any training."""
        rng = np.random.default_rng(seed)
        D, V = config.embed_dim, config.vocab_size
        p = {}
        embed = 0.02 * rng.standard_normal((V, D))
        code_dim = min(32, D)
        bins = np.arange(NUM_BINS)[:, None]
        freqs = np.power(10000.0, -np.arange(code_dim // 2) * 2.0 / code_dim)
        code = np.concatenate([np.sin(bins * freqs * 2 * np.pi / NUM_BINS),
                               np.cos(bins * freqs * 2 * np.pi / NUM_BINS)], axis=1)
        embed[vocab.action_ids, :code_dim] = 0.5 * code
        p["embed"] = embed
        p["pos"] = _sinusoid(config.context_length, D) * 0.1
        for l in range(config.layers):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"l{l}_{name}_w"] = rng.standard_normal((D, D)) / np.sqrt(D)
            p[f"l{l}_ff1_w"] = rng.standard_normal((D, config.ff_mult * D)) / np.sqrt(D)
            p[f"l{l}_ff1_b"] = np.zeros(config.ff_mult * D)
            p[f"l{l}_ff2_w"] = rng.standard_normal((config.ff_mult * D, D)) / np.sqrt(config.ff_mult * D)
            p[f"l{l}_ff2_b"] = np.zeros(D)
            p[f"l{l}_ln1_g"] = np.ones(D)
            p[f"l{l}_ln1_b"] = np.zeros(D)
            p[f"l{l}_ln2_g"] = np.ones(D)
            p[f"l{l}_ln2_b"] = np.zeros(D)
        p["lnf_g"] = np.ones(D)
        p["lnf_b"] = np.zeros(D)
        p["head_w"] = 0.02 * rng.standard_normal((D, V))
        p["head_b"] = np.zeros(V)
        return PolicyModel(config, p, np.asarray(vocab.action_ids))


@dataclass
class LoraAdapter:
    """Low-rank additive deltas on the named linear layers.

    Up matrices start at zero, so a fresh adapter set is an exact identity
    delta on the base model.
    """
    ranks: dict
    alpha: float
    down: dict
    up: dict

    @staticmethod
    def create(model, rank=8, alpha=16.0, rank_overrides=None, seed=0):
        rng = np.random.default_rng(seed)
        ranks, down, up = {}, {}, {}
        overrides = rank_overrides or {}
        for name in linear_layer_names(model.config):
            w = model.params[f"{name}_w"]
            r = int(overrides.get(name, rank))
            r = min(r, min(w.shape))
            ranks[name] = r
            if r > 0:
                down[name] = rng.standard_normal((w.shape[0], r)) / np.sqrt(w.shape[0])
                up[name] = np.zeros((r, w.shape[1]))
        return LoraAdapter(ranks, alpha, down, up)

    def trainable(self):
        out = {}
        for name, r in self.ranks.items():
            if r > 0:
                out[f"{name}_down"] = self.down[name]
                out[f"{name}_up"] = self.up[name]
        return out


@dataclass
class EpisodeContext:
    """Per-step policy input: instruction ids, one observation refresh,
    a proprioception block (current joints, tokenized), and the most
    recent action blocks that fit the context budget."""
    instruction_ids: np.ndarray
    obs_embeddings: np.ndarray           # (n_obs, D)
    proprio_ids: np.ndarray              # (ACTION_DIMS,)
    history: list = field(default_factory=list)  # list of (ACTION_DIMS,) id arrays
    target_ids: np.ndarray | None = None # training only


def _assemble(context, config):
    """Build the embedding-slot layout: (ids-or-None, vectors, roles)."""
    ids, roles = [], []
    for t in np.asarray(context.instruction_ids, dtype=np.int64):
        ids.append(int(t))
        roles.append(ROLE_TEXT)
    n_obs = context.obs_embeddings.shape[0]
    ids += [None] * n_obs
    roles += [ROLE_TEXT] * n_obs
    for t in np.asarray(context.proprio_ids, dtype=np.int64):
        ids.append(int(t))
        roles.append(ROLE_TEXT)
    base_len = len(ids)
    budget = config.context_length - base_len - ACTION_DIMS  # room to decode
    if budget < 0:
        raise ContextOverflow(f"fixed context of {base_len} slots exceeds budget")
    blocks = list(context.history)
    if context.target_ids is not None:
        blocks.append(context.target_ids)
    # keep only the most recent blocks that fit (oldest truncated)
    max_blocks = budget // ACTION_DIMS
    blocks = blocks[-max_blocks:] if max_blocks else []
    for block in blocks:
        for t in np.asarray(block, dtype=np.int64):
            ids.append(int(t))
            roles.append(ROLE_ACTION)
    return ids, np.asarray(roles, dtype=np.int64)


def _adapted_np(x, params, adapters, name, bias=None):
    y = x @ params[f"{name}_w"]
    if bias is not None:
        y = y + params[bias]
    if adapters is not None and adapters.ranks.get(name, 0) > 0:
        scale = adapters.alpha / adapters.ranks[name]
        y = y + scale * ((x @ adapters.down[name]) @ adapters.up[name])
    return y


def _layer_norm_np(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    s = np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    return (x - mu) / s * g + b


def _input_embeddings_np(model, ids, obs_embeddings):
    D = model.config.embed_dim
    x = np.empty((len(ids), D))
    obs_i = 0
    for t, tok in enumerate(ids):
        if tok is None:
            x[t] = obs_embeddings[obs_i]
            obs_i += 1
        else:
            x[t] = model.params["embed"][tok]
    return x + model.params["pos"][:len(ids)]


def forward_np(model, adapters, context, return_hidden=False):
    """Plain numpy causal forward pass; logits at every position."""
    ids, roles = _assemble(context, model.config)
    x = _input_embeddings_np(model, ids, context.obs_embeddings)
    h = _forward_hidden_np(model, adapters, x)
    logits = _adapted_np(h, model.params, adapters, "head", bias="head_b")
    if return_hidden:
        return logits, roles, ids, h
    return logits, roles, ids


def _forward_hidden_np(model, adapters, x):
    cfg = model.config
    T, D = x.shape
    H, dh = cfg.heads, D // cfg.heads
    mask = np.triu(np.full((T, T), -np.inf), k=1)
    p = model.params
    for l in range(cfg.layers):
        xn = _layer_norm_np(x, p[f"l{l}_ln1_g"], p[f"l{l}_ln1_b"])
        q = _adapted_np(xn, p, adapters, f"l{l}_wq").reshape(T, H, dh).transpose(1, 0, 2)
        k = _adapted_np(xn, p, adapters, f"l{l}_wk").reshape(T, H, dh).transpose(1, 0, 2)
        v = _adapted_np(xn, p, adapters, f"l{l}_wv").reshape(T, H, dh).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh) + mask
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        attn = (w @ v).transpose(1, 0, 2).reshape(T, D)
        x = x + _adapted_np(attn, p, adapters, f"l{l}_wo")
        xn = _layer_norm_np(x, p[f"l{l}_ln2_g"], p[f"l{l}_ln2_b"])
        hidden = np.tanh(_adapted_np(xn, p, adapters, f"l{l}_ff1", bias=f"l{l}_ff1_b"))
        x = x + _adapted_np(hidden, p, adapters, f"l{l}_ff2", bias=f"l{l}_ff2_b")
    return _layer_norm_np(x, p["lnf_g"], p["lnf_b"])


# ---------------------------------------------------------------------------
# autodiff forward (training path)

def _adapted_t(x, tparams, tadapters, adapters, name, bias=None):
    y = x @ tparams[f"{name}_w"]
    if bias is not None:
        y = y + tparams[bias]
    if adapters is not None and adapters.ranks.get(name, 0) > 0:
        scale = adapters.alpha / adapters.ranks[name]
        y = y + ad.mul_scalar((x @ tadapters[f"{name}_down"]) @ tadapters[f"{name}_up"], scale)
    return y


def forward_t(model, adapters, context, tparams=None, tadapters=None, loss_positions=None):
    """Autodiff forward. Returns (logits tensor, roles, ids).

    When loss_positions is given, head logits are computed only at those
    positions (the only ones the masked loss reads).
    """
    cfg = model.config
    ids, roles = _assemble(context, cfg)
    if tparams is None:
        tparams = {k: ad.Tensor(v) for k, v in model.params.items()}
    if tadapters is None and adapters is not None:
        tadapters = {k: ad.parameter(v) for k, v in adapters.trainable().items()}
    x0 = _input_embeddings_np(model, ids, context.obs_embeddings)
    x = ad.Tensor(x0)
    T, D = x0.shape
    H, dh = cfg.heads, D // cfg.heads
    mask = np.triu(np.full((T, T), -np.inf), k=1)
    for l in range(cfg.layers):
        xn = ad.layer_norm(x, tparams[f"l{l}_ln1_g"], tparams[f"l{l}_ln1_b"])
        q = ad.transpose(ad.reshape(_adapted_t(xn, tparams, tadapters, adapters, f"l{l}_wq"), (T, H, dh)), (1, 0, 2))
        k = ad.transpose(ad.reshape(_adapted_t(xn, tparams, tadapters, adapters, f"l{l}_wk"), (T, H, dh)), (1, 0, 2))
        v = ad.transpose(ad.reshape(_adapted_t(xn, tparams, tadapters, adapters, f"l{l}_wv"), (T, H, dh)), (1, 0, 2))
        scores = ad.mul_scalar(q @ ad.transpose(k, (0, 2, 1)), 1.0 / np.sqrt(dh)) + ad.Tensor(mask)
        w = ad.softmax(scores, axis=-1)
        attn = ad.reshape(ad.transpose(w @ v, (1, 0, 2)), (T, D))
        x = x + _adapted_t(attn, tparams, tadapters, adapters, f"l{l}_wo")
        xn = ad.layer_norm(x, tparams[f"l{l}_ln2_g"], tparams[f"l{l}_ln2_b"])
        hidden = ad.tanh(_adapted_t(xn, tparams, tadapters, adapters, f"l{l}_ff1", bias=f"l{l}_ff1_b"))
        x = x + _adapted_t(hidden, tparams, tadapters, adapters, f"l{l}_ff2", bias=f"l{l}_ff2_b")
    h = ad.layer_norm(x, tparams["lnf_g"], tparams["lnf_b"])
    if loss_positions is not None:
        h = ad.gather_rows(h, loss_positions)
    logits = _adapted_t(h, tparams, tadapters, adapters, "head", bias="head_b")
    return logits, roles, ids


def action_loss_positions(ids, roles):
    """Positions whose next token is an action token (and is a real id)."""
    pos = [t for t in range(len(ids) - 1)
           if roles[t + 1] == ROLE_ACTION and ids[t + 1] is not None]
    return np.asarray(pos, dtype=np.int64)


def loss_action_only(logits, targets):
    """Mean cross-entropy over next-token-is-action positions.

    `logits` is a Tensor of shape (T, V) over the full sequence; `targets`
    a TokenSequence aligned with it. Text positions contribute zero.
    """
    ids = targets.ids if isinstance(targets, TokenSequence) else np.asarray(targets)
    roles = targets.roles if isinstance(targets, TokenSequence) else None
    if roles is None:
        raise ValueError("need a role mask")
    pos = np.asarray([t for t in range(len(ids) - 1) if roles[t + 1] == ROLE_ACTION],
                     dtype=np.int64)
    if len(pos) == 0:
        raise NoActionTargets("sequence has no action-role targets")
    sel = ad.gather_rows(logits, pos) if isinstance(logits, ad.Tensor) else ad.Tensor(np.asarray(logits)[pos])
    return ad.masked_cross_entropy(sel, ids[pos + 1], np.ones(len(pos)))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainingConfig:
    learning_rate: float = 3e-3
    batch_size: int = 8
    steps: int = 3000
    seed: int = 0
    frozen_modules: tuple = ("perception", "fusion")
    loss_masking: str = "action_only"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: int = 100
    lr_decay: str = "none"          # "none" | "cosine" (decays to 10% of peak)
    label_smoothing: float = 0.0    # Gaussian sigma in bins over action ids


def _smoothed_targets(targets, action_ids, sigma):
    """Spread each action target over neighboring bins with Gaussian weights.

    Action bins are ordinal (adjacent bins are adjacent joint angles), so a
    soft target that credits near-misses gives the head a smooth training
    signal instead of an all-or-nothing one. Non-action targets keep their
    hard label. Returns (row indices, target ids, weights) shaped for
    masked_cross_entropy; weights sum to 1 per original position.
    """
    id_to_bin = {int(t): b for b, t in enumerate(action_ids)}
    half = max(1, int(np.ceil(2.0 * sigma)))
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    rows, stg, w = [], [], []
    n_bins = len(action_ids)
    for r, t in enumerate(targets):
        b = id_to_bin.get(int(t))
        if b is None:
            rows.append(r); stg.append(int(t)); w.append(1.0)
            continue
        bins = b + offsets
        ok = (bins >= 0) & (bins < n_bins)
        kk = kernel[ok] / kernel[ok].sum()
        for bb, weight in zip(bins[ok], kk):
            rows.append(r); stg.append(int(action_ids[bb])); w.append(weight)
    return (np.asarray(rows, dtype=np.int64), np.asarray(stg, dtype=np.int64),
            np.asarray(w))


def train(model, adapters, samples, cfg, log=None):
    """Seeded mini-batch adapter training with the repo-wide Adam optimizer.

    `samples` is a sequence of EpisodeContext objects with target_ids set.
    Base model weights are never touched; only adapter matrices move.
    Returns the loss curve (one entry per step).
    """
    if cfg.steps == 0:
        return []
    if len(samples) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    tparams = {k: ad.Tensor(v) for k, v in model.params.items()}
    tadapters = {k: ad.parameter(v.copy()) for k, v in adapters.trainable().items()}
    m = {k: np.zeros_like(t.data) for k, t in tadapters.items()}
    v = {k: np.zeros_like(t.data) for k, t in tadapters.items()}
    curve = []
    t0 = time.time()
    for step in range(cfg.steps):
        idx = rng.integers(len(samples), size=cfg.batch_size)
        total = None
        for i in idx:
            ctx = samples[i] if not callable(samples[i]) else samples[i]()
            ids, roles = _assemble(ctx, model.config)
            pos = action_loss_positions(ids, roles)
            if len(pos) == 0:
                raise NoActionTargets("training sample has no action targets")
            logits, _, _ = forward_t(model, adapters, ctx,
                                     tparams=tparams, tadapters=tadapters,
                                     loss_positions=pos)
            tgt = np.asarray([ids[t + 1] for t in pos], dtype=np.int64)
            if cfg.label_smoothing > 0.0:
                rows, stg, w = _smoothed_targets(tgt, model.action_ids,
                                                 cfg.label_smoothing)
                loss = ad.masked_cross_entropy(ad.gather_rows(logits, rows),
                                               stg, w)
            else:
                loss = ad.masked_cross_entropy(logits, tgt, np.ones(len(pos)))
            total = loss if total is None else total + loss
        total = ad.mul_scalar(total, 1.0 / cfg.batch_size)
        if not np.isfinite(total.data):
            raise TrainingDiverged(f"loss became {total.data} at step {step}")
        for t in tadapters.values():
            t.zero_grad()
        total.backward()
        lr = cfg.learning_rate * min(1.0, (step + 1) / max(cfg.warmup, 1))
        if cfg.lr_decay == "cosine" and cfg.steps > cfg.warmup:
            frac = max(0.0, (step - cfg.warmup) / (cfg.steps - cfg.warmup))
            lr *= 0.55 + 0.45 * np.cos(np.pi * frac)
        for k, t in tadapters.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
            v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
            mh = m[k] / (1 - cfg.beta1 ** (step + 1))
            vh = v[k] / (1 - cfg.beta2 ** (step + 1))
            t.data -= lr * mh / (np.sqrt(vh) + cfg.eps)
        curve.append(float(total.data))
        if log is not None:
            log(step, float(total.data), time.time() - t0)
    # write trained values back into the adapter set
    for name, r in adapters.ranks.items():
        if r > 0:
            adapters.down[name] = tadapters[f"{name}_down"].data
            adapters.up[name] = tadapters[f"{name}_up"].data
    return curve


# ---------------------------------------------------------------------------
# inference

def infer_action(model, adapters, context, vocab, ranges):
    """Greedy constrained decoding of one 7-token action block.

    Non-action logits are masked to -inf, so the decoded block always
    de-tokenizes into the configured ranges. Returns (action, tokens,
    wall-clock latency in seconds).
    """
    start = time.perf_counter()
    ids, roles = _assemble(context, model.config)
    x = _input_embeddings_np(model, ids, context.obs_embeddings)
    action_mask = np.full(model.config.vocab_size, -np.inf)
    action_mask[model.action_ids] = 0.0
    decoded = []
    for _ in range(ACTION_DIMS):
        h = _forward_hidden_np(model, adapters, x)
        logits = _adapted_np(h[-1:], model.params, adapters, "head", bias="head_b")[0]
        tok = int(np.argmax(logits + action_mask))
        decoded.append(tok)
        emb = model.params["embed"][tok] + model.params["pos"][x.shape[0]]
        x = np.vstack([x, emb])
    latency = time.perf_counter() - start
    tokens = TokenSequence(np.asarray(decoded), np.full(ACTION_DIMS, ROLE_ACTION))
    action = detokenize(tokens, ranges, vocab)
    return action, tokens, latency
