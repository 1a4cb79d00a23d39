"""Click n-gram embedding pretraining.

A two-layer network maps a one-hot n-gram (length 10^n) to an m-dimensional
code and back to a 10^n-way softmax over n-grams.  The encoder is trained to
reconstruct the n-grams surrounding each position inside a context window,
so codes of patterns that occur in similar contexts end up close together.
The one-hot input is never materialized: encoding is a column gather.

For each position t with context offsets i in [-w, w], i != 0 (offsets that
fall outside the sequence are skipped), the default objective scores the
softmax output y against every coordinate of each one-hot context vector x:

    sum_i [ -x_{t+i} . log y_t - (1 - x_{t+i}) . log(1 - y_t) ]

with both log arguments clamped below at 1e-12.  A pure-categorical
variant (only -log y_t[target]) is available via ``objective="categorical"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import serialize
from .autodiff import Tensor
from .errors import InputError, TrainingDiverged
from .layers import glorot_uniform
from .optim import ParamStore, make_optimizer

__all__ = [
    "LOG_CLAMP",
    "NGramPretrainConfig",
    "NGramEmbeddingModel",
    "encode",
    "window_loss",
    "train_ngram_embeddings",
    "export_embeddings",
    "save_ngram_model",
    "load_ngram_model",
    "export_embeddings_tsv",
]

LOG_CLAMP = 1e-12


@dataclass
class NGramPretrainConfig:
    n: int = 4                    # n-gram order; vocabulary is 10^n
    embed_dim: int = 64           # m
    window: int = 2               # w
    epochs: int = 5
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    batch_size: int = 256
    objective: str = "two_sided"  # or "categorical"
    max_positions_per_epoch: int | None = None  # subsample cap for large corpora
    loss_eval_positions: int | None = None      # cap for the per-epoch loss report

    def validate(self):
        if self.n < 1:
            raise InputError("n must be >= 1")
        if self.embed_dim < 1:
            raise InputError("embed_dim must be >= 1")
        if self.window < 1:
            raise InputError("window must be >= 1")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.lr <= 0:
            raise InputError("lr must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.objective not in ("two_sided", "categorical"):
            raise InputError(f"unknown objective {self.objective!r}")


@dataclass
class NGramEmbeddingModel:
    """Trained encoder/decoder parameters.

    W_c (m, 10^n) and b_c (m,) encode; W_o (10^n, m) and b_o (10^n,) decode.
    """

    n: int
    embed_dim: int
    W_c: np.ndarray
    b_c: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return 10 ** self.n

    def validate(self):
        V, m = self.vocab_size, self.embed_dim
        shapes = {"W_c": (m, V), "b_c": (m,), "W_o": (V, m), "b_o": (V,)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise InputError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite values")


def encode(model: NGramEmbeddingModel, index: int) -> np.ndarray:
    """Encoder output for one n-gram: column ``index`` of W_c plus b_c."""
    if not 0 <= index < model.vocab_size:
        raise IndexError(f"ngram index {index} out of range for n={model.n}")
    return model.W_c[:, index] + model.b_c


def export_embeddings(model: NGramEmbeddingModel) -> np.ndarray:
    """(10^n, m) table whose row j equals ``encode(model, j)``."""
    return model.W_c.T + model.b_c


def context_probabilities(model: NGramEmbeddingModel, index: int) -> np.ndarray:
    """Softmax distribution the model predicts around n-gram ``index``."""
    v = model.W_o @ encode(model, index) + model.b_o
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def window_loss(model: NGramEmbeddingModel, sequence, t: int, window: int,
                objective: str = "two_sided") -> float:
    """Reference single-position loss, computed directly from the model.

    Context offsets outside the sequence are skipped; a position with no
    in-range context contributes zero.
    """
    if not 0 <= t < len(sequence):
        raise InputError(f"position {t} outside sequence of length {len(sequence)}")
    u = encode(model, int(sequence[t]))
    v = model.W_o @ u + model.b_o
    z = v - v.max()
    e = np.exp(z)
    p = e / e.sum()
    log_p = np.log(np.maximum(p, LOG_CLAMP))
    log_q = np.log(np.maximum(1.0 - p, LOG_CLAMP))
    total = 0.0
    for i in range(-window, window + 1):
        if i == 0 or not 0 <= t + i < len(sequence):
            continue
        target = int(sequence[t + i])
        if objective == "categorical":
            total += -log_p[target]
        else:
            total += -log_p[target] - (log_q.sum() - log_q[target])
    return float(total)


def _window_loss_forward(x: np.ndarray, ctx_rows, ctx_cols, counts, objective):
    """Shared forward pass: per-row losses plus the softmax probabilities."""
    z = x - x.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    B = x.shape[0]
    p_at = p[ctx_rows, ctx_cols]
    log_p_at = np.log(np.maximum(p_at, LOG_CLAMP))
    if objective == "categorical":
        out = np.bincount(ctx_rows, weights=-log_p_at, minlength=B)
    else:
        log_q = np.log(np.maximum(1.0 - p, LOG_CLAMP))
        S = log_q.sum(axis=1)
        per_pair = -log_p_at + log_q[ctx_rows, ctx_cols]
        out = np.bincount(ctx_rows, weights=per_pair, minlength=B) - counts * S
    return out, p


def window_reconstruction_loss(logits: Tensor, ctx_rows: np.ndarray,
                               ctx_cols: np.ndarray, ctx_counts: np.ndarray,
                               objective: str = "two_sided") -> Tensor:
    """Fused per-row window loss over a batch of positions.

    logits: (B, V) decoder outputs.  ctx_rows/ctx_cols list every (position,
    target) context pair; ctx_counts (B,) is the number of context targets
    per row.  Returns the (B,) per-position losses.  The softmax, clamped
    logs, and their gradient are fused into one op: materializing the
    intermediate (B, V) graph nodes separately dominates the pretraining
    runtime otherwise.
    """
    logits = ad.tensor(logits)
    ctx_rows = np.asarray(ctx_rows, dtype=np.intp)
    ctx_cols = np.asarray(ctx_cols, dtype=np.intp)
    counts = np.asarray(ctx_counts, dtype=np.float64)
    out, p = _window_loss_forward(logits.data, ctx_rows, ctx_cols, counts, objective)

    def bw(g):
        cnt = np.zeros_like(p)
        np.add.at(cnt, (ctx_rows, ctx_cols), 1.0)
        inv_p = (p > LOG_CLAMP) / np.maximum(p, LOG_CLAMP)
        dLdp = -cnt * inv_p
        if objective != "categorical":
            q = 1.0 - p
            inv_q = (q > LOG_CLAMP) / np.maximum(q, LOG_CLAMP)
            dLdp += (counts[:, None] - cnt) * inv_q
        dot = (p * dLdp).sum(axis=1, keepdims=True)
        dx = p * (dLdp - dot)
        dx *= g[:, None]
        return ((logits, dx),)

    return ad._node(out, (logits,), bw)


@dataclass
class _Positions:
    """Flattened corpus positions with CSR-style context target lists."""

    tokens: np.ndarray      # (P,) n-gram index at each position
    ctx_flat: np.ndarray    # all context targets, grouped by position
    ctx_offsets: np.ndarray  # (P+1,) slice bounds into ctx_flat


def _flatten_corpus(corpus, vocab_size: int, window: int) -> _Positions:
    tokens = []
    pair_pos = []
    pair_tgt = []
    base = 0
    for seq in corpus:
        s = np.asarray(seq, dtype=np.intp)
        if s.size == 0:
            continue
        if s.min() < 0 or s.max() >= vocab_size:
            raise InputError(
                f"ngram index out of range: got {int(s.max())} for vocabulary {vocab_size}"
            )
        L = s.size
        tokens.append(s)
        for off in range(-window, window + 1):
            if off == 0:
                continue
            lo, hi = max(0, -off), min(L, L - off)
            if hi > lo:
                pair_pos.append(np.arange(lo, hi, dtype=np.intp) + base)
                pair_tgt.append(s[lo + off:hi + off])
        base += L
    if not tokens:
        raise InputError("pretraining corpus is empty")
    tokens = np.concatenate(tokens)
    if pair_pos:
        pos_arr = np.concatenate(pair_pos)
        tgt_arr = np.concatenate(pair_tgt)
        order = np.argsort(pos_arr, kind="stable")  # group context targets by position
        ctx_flat = tgt_arr[order]
        counts = np.bincount(pos_arr, minlength=tokens.size)
    else:
        ctx_flat = np.zeros(0, dtype=np.intp)
        counts = np.zeros(tokens.size, dtype=np.intp)
    offsets = np.zeros(tokens.size + 1, dtype=np.intp)
    np.cumsum(counts, out=offsets[1:])
    return _Positions(tokens=tokens, ctx_flat=ctx_flat, ctx_offsets=offsets)


def _batch_context(pos: _Positions, batch_idx: np.ndarray):
    starts = pos.ctx_offsets[batch_idx]
    ends = pos.ctx_offsets[batch_idx + 1]
    counts = ends - starts
    rows = np.repeat(np.arange(batch_idx.size), counts)
    cols = np.concatenate(
        [pos.ctx_flat[s:e] for s, e in zip(starts, ends)]
    ) if counts.sum() else np.zeros(0, dtype=np.intp)
    return rows, cols, counts


def _mean_corpus_loss(store, pos, eval_idx, batch_size, objective) -> float:
    """Forward-only mean loss over the evaluation positions (no graph)."""
    enc = store["encoder_table"].data
    enc_b = store["encoder_bias"].data
    dec = store["decoder_weight"].data
    dec_b = store["decoder_bias"].data
    total = 0.0
    for lo in range(0, eval_idx.size, batch_size):
        batch = eval_idx[lo:lo + batch_size]
        rows, cols, counts = _batch_context(pos, batch)
        logits = (enc[pos.tokens[batch]] + enc_b) @ dec + dec_b
        values, _ = _window_loss_forward(logits, rows, cols,
                                         counts.astype(np.float64), objective)
        total += float(values.sum())
    return total / eval_idx.size


def train_ngram_embeddings(corpus, config: NGramPretrainConfig) -> NGramEmbeddingModel:
    """Train the encoder/decoder on per-learner weekly n-gram sequences.

    ``corpus`` is an iterable of integer index sequences, one per
    (learner, week); context windows never cross sequences.  Reports the
    mean per-position loss after each epoch in ``model.epoch_losses``.
    """
    config.validate()
    V = 10 ** config.n
    m = config.embed_dim
    pos = _flatten_corpus(corpus, V, config.window)
    P = pos.tokens.size

    rng = np.random.default_rng(config.seed)
    store = ParamStore()
    # encoder stored row-major (V, m) so lookups are row gathers; the model
    # exposes the column-major W_c view of the same numbers
    store.add("encoder_table", glorot_uniform(rng, V, m))
    store.add("encoder_bias", np.zeros(m))
    store.add("decoder_weight", glorot_uniform(rng, m, V))
    store.add("decoder_bias", np.zeros(V))
    opt = make_optimizer(config.optimizer, store, config.lr)

    eval_cap = config.loss_eval_positions
    if eval_cap is not None and eval_cap < P:
        eval_idx = rng.choice(P, size=eval_cap, replace=False)
        eval_idx.sort()
    else:
        eval_idx = np.arange(P)

    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(P)
        if config.max_positions_per_epoch is not None:
            order = order[:config.max_positions_per_epoch]
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            rows, cols, counts = _batch_context(pos, batch)
            u = ad.take_rows(store["encoder_table"], pos.tokens[batch]) + store["encoder_bias"]
            logits = ad.matmul(u, store["decoder_weight"]) + store["decoder_bias"]
            losses_b = window_reconstruction_loss(logits, rows, cols, counts, config.objective)
            loss = ad.tmean(losses_b)
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged("ngram pretraining loss", "non-finite loss")
            loss.backward()
            opt.step()
        losses.append(_mean_corpus_loss(store, pos, eval_idx, config.batch_size,
                                        config.objective))

    model = NGramEmbeddingModel(
        n=config.n,
        embed_dim=m,
        W_c=store["encoder_table"].data.T.copy(),
        b_c=store["encoder_bias"].data.copy(),
        W_o=store["decoder_weight"].data.T.copy(),
        b_o=store["decoder_bias"].data.copy(),
        epoch_losses=losses,
    )
    model.validate()
    return model


def save_ngram_model(model: NGramEmbeddingModel, path: str):
    serialize.write_model(
        path,
        serialize.KIND_NGRAM_MODEL,
        {"n": model.n, "m": model.embed_dim},
        [model.W_c, model.b_c, model.W_o, model.b_o],
    )


def load_ngram_model(path: str) -> NGramEmbeddingModel:
    _, meta, tensors = serialize.read_model(path, serialize.KIND_NGRAM_MODEL)
    model = NGramEmbeddingModel(
        n=int(meta["n"]), embed_dim=int(meta["m"]),
        W_c=tensors[0], b_c=tensors[1], W_o=tensors[2], b_o=tensors[3],
    )
    model.validate()
    return model


def export_embeddings_tsv(model: NGramEmbeddingModel, path: str):
    table = export_embeddings(model)
    lines = []
    for j in range(table.shape[0]):
        lines.append(str(j) + "\t" + "\t".join(repr(float(x)) for x in table[j]))
    serialize.atomic_write_text(path, "\n".join(lines) + "\n")
