"""A compact window-MLP token tagger with hand-written gradients.

Architecture per token: embedding lookup over a symmetric context window of
2w+1 tokens, concatenation, one tanh hidden layer, dropout on the hidden
activations (inverted scaling, so eval needs no rescale), linear output,
softmax over the label alphabet.

Keeping dropout on the hidden layer only has a useful consequence: the
pre-dropout hidden activations are identical across stochastic forward
passes, so multi-pass inference can reuse one hidden computation and apply
K cheap masked output heads.

All arrays are float64; gradients are exact for the masked cross-entropy
loss with the dropout mask held fixed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .corpus import PAD_ID, TagSet, Vocabulary
from .rng import derive_rng


@dataclass(frozen=True)
class TaggerArch:
    embedding_dim: int
    window_radius: int
    hidden_dim: int
    num_labels: int
    dropout_rate: float = 0.5
    init_seed: int = 0

    def __post_init__(self):
        if min(self.embedding_dim, self.hidden_dim, self.num_labels) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.window_radius < 0:
            raise ValueError("window_radius must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def context_size(self) -> int:
        return 2 * self.window_radius + 1

    @property
    def input_dim(self) -> int:
        return self.context_size * self.embedding_dim


@dataclass
class TaggerParams:
    embed: np.ndarray     # (vocab, embedding_dim)
    w_hidden: np.ndarray  # (input_dim, hidden_dim)
    b_hidden: np.ndarray  # (hidden_dim,)
    w_out: np.ndarray     # (hidden_dim, num_labels)
    b_out: np.ndarray     # (num_labels,)

    def named_arrays(self):
        yield "embed", self.embed
        yield "w_hidden", self.w_hidden
        yield "b_hidden", self.b_hidden
        yield "w_out", self.w_out
        yield "b_out", self.b_out

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    def copy(self) -> "TaggerParams":
        return TaggerParams(*(arr.copy() for _, arr in self.named_arrays()))

    def equals(self, other: "TaggerParams") -> bool:
        return all(
            np.array_equal(a, b)
            for (_, a), (_, b) in zip(self.named_arrays(), other.named_arrays())
        )


def snapshot(params: TaggerParams) -> TaggerParams:
    """Value-identical, storage-independent copy (teacher duplication)."""
    return params.copy()


def init_params(arch: TaggerArch, vocab_size: int) -> TaggerParams:
    """Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)) per matrix; zero biases."""
    rng = derive_rng(arch.init_seed)

    def glorot(fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=(fan_in, fan_out))

    return TaggerParams(
        embed=glorot(vocab_size, arch.embedding_dim),
        w_hidden=glorot(arch.input_dim, arch.hidden_dim),
        b_hidden=np.zeros(arch.hidden_dim),
        w_out=glorot(arch.hidden_dim, arch.num_labels),
        b_out=np.zeros(arch.num_labels),
    )


def window_ids(token_ids: np.ndarray, radius: int) -> np.ndarray:
    """(T, 2r+1) context-window id matrix; out-of-sentence positions get PAD."""
    t = len(token_ids)
    padded = np.full(t + 2 * radius, PAD_ID, dtype=np.int64)
    padded[radius:radius + t] = token_ids
    offsets = np.arange(2 * radius + 1)
    return padded[np.arange(t)[:, None] + offsets[None, :]]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def hidden_activations(params: TaggerParams, win_ids: np.ndarray) -> np.ndarray:
    """Pre-dropout hidden layer: tanh(concat(embeddings) @ W + b)."""
    if win_ids.size and (win_ids.min() < 0 or win_ids.max() >= params.vocab_size):
        raise ValueError("token id out of range for embedding table")
    n = win_ids.shape[0]
    e = params.embed[win_ids].reshape(n, -1)
    return np.tanh(e @ params.w_hidden + params.b_hidden)


def output_probs(params: TaggerParams, hidden: np.ndarray) -> np.ndarray:
    return softmax(hidden @ params.w_out + params.b_out)


def eval_probs(params: TaggerParams, win_ids: np.ndarray) -> np.ndarray:
    """Deterministic (no-dropout) per-token label distributions."""
    return output_probs(params, hidden_activations(params, win_ids))


def mc_dropout_mask(n_tokens: int, hidden_dim: int, dropout_rate: float,
                    base_seed: int, pass_index: int,
                    sentence_index: int) -> np.ndarray:
    """Boolean keep-mask for one stochastic pass over one sentence.

    Seeded by (base_seed, pass_index, sentence_index), so every pass is a
    pure function of its inputs and uncertainty estimates are reproducible.
    """
    rng = derive_rng(base_seed, pass_index, sentence_index)
    return rng.random((n_tokens, hidden_dim)) >= dropout_rate


def mc_probs(params: TaggerParams, win_ids: np.ndarray, dropout_rate: float,
             base_seed: int, pass_index: int, sentence_index: int,
             hidden: Optional[np.ndarray] = None) -> np.ndarray:
    """One stochastic forward pass for a single sentence.

    `hidden` may carry precomputed pre-dropout activations; passing it is a
    pure optimization and cannot change the result.
    """
    h = hidden_activations(params, win_ids) if hidden is None else hidden
    keep = 1.0 - dropout_rate
    mask = mc_dropout_mask(h.shape[0], h.shape[1], dropout_rate,
                           base_seed, pass_index, sentence_index)
    return output_probs(params, h * mask / keep)


def train_dropout_mask(n_tokens: int, hidden_dim: int, dropout_rate: float,
                       rng: np.random.Generator) -> np.ndarray:
    return rng.random((n_tokens, hidden_dim)) >= dropout_rate


def loss_and_grad(params: TaggerParams, win_ids: np.ndarray,
                  labels: np.ndarray, weights: np.ndarray,
                  dropout_mask: Optional[np.ndarray] = None,
                  dropout_rate: float = 0.0):
    """Masked mean cross-entropy and its exact gradients.

    loss = sum_i w_i * CE_i / max(1, sum_i w_i), i.e. the mean over unmasked
    tokens. A fully masked batch returns loss 0 with zero gradients (the
    caller sees used == 0) rather than failing.

    Returns (loss, grads: TaggerParams, used: number of unmasked tokens).
    """
    n = win_ids.shape[0]
    weights = np.asarray(weights, dtype=np.float64)
    used = float(weights.sum())
    denom = max(1.0, used)

    e = params.embed[win_ids].reshape(n, -1)
    h = np.tanh(e @ params.w_hidden + params.b_hidden)
    if dropout_mask is not None:
        keep = 1.0 - dropout_rate
        hd = h * dropout_mask / keep
    else:
        hd = h
    probs = softmax(hd @ params.w_out + params.b_out)

    idx = np.arange(n)
    ce = -np.log(probs[idx, labels])
    loss = float((weights * ce).sum() / denom)

    dlogits = probs.copy()
    dlogits[idx, labels] -= 1.0
    dlogits *= (weights / denom)[:, None]

    g_w_out = hd.T @ dlogits
    g_b_out = dlogits.sum(axis=0)
    dhd = dlogits @ params.w_out.T
    if dropout_mask is not None:
        dh = dhd * dropout_mask / keep
    else:
        dh = dhd
    dpre = dh * (1.0 - h * h)
    g_w_hidden = e.T @ dpre
    g_b_hidden = dpre.sum(axis=0)

    de = (dpre @ params.w_hidden.T).reshape(n * win_ids.shape[1], -1)
    g_embed = np.zeros_like(params.embed)
    np.add.at(g_embed, win_ids.reshape(-1), de)

    grads = TaggerParams(g_embed, g_w_hidden, g_b_hidden, g_w_out, g_b_out)
    return loss, grads, int(used)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: TaggerParams
    v: TaggerParams


def init_adam(params: TaggerParams, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = lambda: TaggerParams(*(np.zeros_like(a) for _, a in params.named_arrays()))
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m=zeros(), v=zeros())


def adam_step(params: TaggerParams, grads: TaggerParams, state: AdamState,
              lr: Optional[float] = None) -> None:
    """Standard bias-corrected Adam update, in place."""
    for name, g in grads.named_arrays():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in block {name!r}")
    state.step += 1
    t = state.step
    alpha = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for (_, p), (_, g), (_, m), (_, v) in zip(
        params.named_arrays(), grads.named_arrays(),
        state.m.named_arrays(), state.v.named_arrays(),
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear warmup to base_lr over warmup_steps optimizer steps, then constant."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


def ema_update(teacher: TaggerParams, student: TaggerParams, alpha: float) -> None:
    """teacher <- alpha * teacher + (1 - alpha) * student, elementwise, in place."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    for (name, t), (_, s) in zip(teacher.named_arrays(), student.named_arrays()):
        if t.shape != s.shape:
            raise ValueError(f"shape mismatch in block {name!r}: {t.shape} vs {s.shape}")
        t *= alpha
        t += (1.0 - alpha) * s


# ---------------------------------------------------------------------------
# Checkpoints: one .npz holding a JSON header (format version, architecture,
# tag set, vocabulary, free-form extras) plus the named parameter arrays.
# float64 arrays round-trip bit-exactly through savez.
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, arch: TaggerArch, params: TaggerParams,
                    tagset: TagSet, vocab: Vocabulary,
                    extra: Optional[dict] = None) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "arch": asdict(arch),
        "entity_types": list(tagset.entity_types),
        "vocab": vocab.to_dict(),
        "extra": extra or {},
    }
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"),
                         dtype=np.uint8)
    arrays = dict(params.named_arrays())
    np.savez(path, header=blob, **arrays)


def load_checkpoint(path):
    """Returns (arch, params, tagset, vocab, extra)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {header['format_version']}"
            )
        params = TaggerParams(
            embed=data["embed"], w_hidden=data["w_hidden"],
            b_hidden=data["b_hidden"], w_out=data["w_out"], b_out=data["b_out"],
        )
    arch = TaggerArch(**header["arch"])
    tagset = TagSet(header["entity_types"])
    vocab = Vocabulary.from_dict(header["vocab"])
    return arch, params, tagset, vocab, header["extra"]
