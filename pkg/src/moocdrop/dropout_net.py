"""Weekly dropout-risk prediction network and its pairwise ranking trainer.

Each (learner, week) instance is an independent sequence of (click n-gram,
video) index pairs.  Per step the n-gram code and, in the video-aware
variants, the video embedding are concatenated and fed to a GRU; a logistic
head on the last hidden state yields the dropout probability P.  An empty
week (fewer clicks than the window size) leaves the hidden state at zero, so
its score is sigmoid(output bias).

Training minimizes the mean hinge max(0, -(P_pos - P_neg) + margin) over
within-learner pairs: each learner's single positive week is paired with each
of their negative weeks.  Labels are wildly imbalanced, which is why ranking
pairs rather than per-instance likelihoods drive the updates.

Four variants mirror the embedding-initialization grid:

    click                             random click table, no video branch
    click_pretrained                  pretrained click table, no video branch
    click_pretrained_video            pretrained click table + random video table
    click_pretrained_video_pretrained pretrained click and video tables

Embedding tables are fine-tuned during training unless frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import serialize
from .autodiff import Tensor
from .batching import bucket_batches, masked_gru_last, pad_index_matrix
from .clickstream import WeeklyInstance
from .errors import InputError, TrainingDiverged
from .layers import GruCellParams, glorot_uniform
from .metrics import ScoredInstance, auc
from .optim import ParamStore, make_optimizer

__all__ = [
    "VARIANTS",
    "VARIANT_CLICK",
    "VARIANT_CLICK_PRETRAINED",
    "VARIANT_CLICK_VIDEO",
    "VARIANT_CLICK_VIDEO_PRETRAINED",
    "variant_uses_video",
    "variant_uses_pretrained_clicks",
    "DropoutTrainConfig",
    "DropoutPredictor",
    "RankingPair",
    "margin_loss",
    "build_pairs",
    "predict",
    "score_instances",
    "train_dropout",
    "save_predictor",
    "load_predictor",
    "write_predictions_tsv",
    "read_predictions_tsv",
]

VARIANT_CLICK = "click"
VARIANT_CLICK_PRETRAINED = "click_pretrained"
VARIANT_CLICK_VIDEO = "click_pretrained_video"
VARIANT_CLICK_VIDEO_PRETRAINED = "click_pretrained_video_pretrained"
VARIANTS = (
    VARIANT_CLICK,
    VARIANT_CLICK_PRETRAINED,
    VARIANT_CLICK_VIDEO,
    VARIANT_CLICK_VIDEO_PRETRAINED,
)


def variant_uses_video(variant: str) -> bool:
    return variant in (VARIANT_CLICK_VIDEO, VARIANT_CLICK_VIDEO_PRETRAINED)


def variant_uses_pretrained_clicks(variant: str) -> bool:
    return variant != VARIANT_CLICK


@dataclass(frozen=True, slots=True)
class RankingPair:
    pos: WeeklyInstance
    neg: WeeklyInstance

    def __post_init__(self):
        if self.pos.label != 1 or self.neg.label != 0:
            raise InputError("RankingPair needs a positive and a negative instance")
        if self.pos.user_id != self.neg.user_id:
            raise InputError("RankingPair instances must share a user")


@dataclass
class DropoutTrainConfig:
    variant: str = VARIANT_CLICK
    n: int = 4
    embed_dim: int = 64       # m, click code width
    video_dim: int = 32       # d_v, ignored by click-only variants
    hidden_dim: int = 64      # d_h
    num_videos: int = 0       # required for the video variants
    epochs: int = 10
    lr: float = 1e-3
    margin: float = 0.5
    seed: int = 0
    optimizer: str = "adam"
    batch_pairs: int = 64
    freeze_embeddings: bool = False

    def validate(self):
        if self.variant not in VARIANTS:
            raise InputError(f"unknown variant {self.variant!r}")
        for name in ("n", "embed_dim", "hidden_dim", "epochs", "batch_pairs"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise InputError(f"{name} must be positive")
        if self.lr <= 0:
            raise InputError("lr must be positive")
        if self.margin < 0:
            raise InputError("margin must be >= 0")
        if variant_uses_video(self.variant):
            if self.video_dim < 1:
                raise InputError("video_dim must be >= 1")
            if self.num_videos < 1:
                raise InputError("num_videos must be >= 1 for video variants")


@dataclass
class DropoutPredictor:
    variant: str
    n: int
    ngram_table: np.ndarray                 # (10^n, m)
    video_table: Optional[np.ndarray]       # (V+1, d_v) or None
    gru: dict[str, np.ndarray]
    w_out: np.ndarray                       # (d_h,)
    b_out: float
    epoch_losses: list[float] = field(default_factory=list)
    val_aucs: list[float] = field(default_factory=list)

    @property
    def embed_dim(self) -> int:
        return self.ngram_table.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_out.shape[0]

    @property
    def uses_video(self) -> bool:
        return self.video_table is not None

    def gru_cell(self) -> GruCellParams:
        return GruCellParams(**{k: Tensor(v) for k, v in self.gru.items()})


def margin_loss(p_pos: float, p_neg: float, margin: float = 0.5) -> float:
    """Pairwise hinge: zero once the positive outscores the negative by the margin."""
    return max(0.0, -(p_pos - p_neg) + margin)


def build_pairs(instances: Sequence[WeeklyInstance]) -> list[RankingPair]:
    """One pair per (user positive, user negative); completers contribute none."""
    by_user: dict[str, list[WeeklyInstance]] = {}
    for inst in instances:
        by_user.setdefault(inst.user_id, []).append(inst)
    pairs = []
    for user_id in sorted(by_user):
        items = sorted(by_user[user_id], key=lambda i: i.week)
        positives = [i for i in items if i.label == 1]
        if not positives:
            continue
        pos = positives[0]
        for neg in items:
            if neg.label == 0:
                pairs.append(RankingPair(pos=pos, neg=neg))
    return pairs


class _Network:
    """Parameter bundle shared by training and batched scoring."""

    def __init__(self, ngram_table: Tensor, video_table: Optional[Tensor],
                 cell: GruCellParams, w_out: Tensor, b_out: Tensor):
        self.ngram_table = ngram_table
        self.video_table = video_table
        self.cell = cell
        self.w_out = w_out
        self.b_out = b_out

    def scores(self, step_lists: list) -> Tensor:
        """Dropout probabilities (B,) for a list of step sequences."""
        idx, mask = pad_index_matrix(step_lists, columns=2)

        def inputs_at(t):
            x = ad.take_rows(self.ngram_table, idx[:, t, 0])
            if self.video_table is not None:
                x = ad.concat(x, ad.take_rows(self.video_table, idx[:, t, 1]))
            return x

        h_last = masked_gru_last(self.cell, inputs_at, mask)
        return ad.sigmoid(ad.matmul(h_last, self.w_out) + self.b_out)


def _network_from_predictor(model: DropoutPredictor) -> _Network:
    return _Network(
        ngram_table=Tensor(model.ngram_table),
        video_table=Tensor(model.video_table) if model.video_table is not None else None,
        cell=model.gru_cell(),
        w_out=Tensor(model.w_out),
        b_out=Tensor(np.asarray(model.b_out)),
    )


def _check_instance(model: DropoutPredictor, inst: WeeklyInstance):
    V_ngram = model.ngram_table.shape[0]
    V_video = model.video_table.shape[0] if model.video_table is not None else None
    for g, v in inst.steps:
        if not 0 <= g < V_ngram:
            raise InputError(f"ngram index {g} out of range for ({inst.user_id}, {inst.week})")
        if V_video is not None and not 0 <= v < V_video:
            raise InputError(f"video index {v} out of range for ({inst.user_id}, {inst.week})")


def predict(model: DropoutPredictor, instance: WeeklyInstance) -> float:
    """Dropout probability for a single weekly instance."""
    _check_instance(model, instance)
    net = _network_from_predictor(model)
    return float(net.scores([instance.steps]).data[0])


def score_instances(model: DropoutPredictor, instances: Sequence[WeeklyInstance],
                    batch_size: int = 256) -> np.ndarray:
    """Vectorized scoring; returns probabilities aligned with ``instances``."""
    for inst in instances:
        _check_instance(model, inst)
    net = _network_from_predictor(model)
    out = np.zeros(len(instances))
    lengths = [len(i.steps) for i in instances]
    for batch in bucket_batches(lengths, batch_size):
        scores = net.scores([instances[i].steps for i in batch])
        out[batch] = scores.data
    return out


def _hinge_mean(net: _Network, pairs: list[RankingPair], batch: np.ndarray,
                margin: float) -> Tensor:
    p_pos = net.scores([pairs[i].pos.steps for i in batch])
    p_neg = net.scores([pairs[i].neg.steps for i in batch])
    return ad.tmean(ad.relu(ad.add(ad.sub(p_neg, p_pos), margin)))


def train_dropout(
    instances: Sequence[WeeklyInstance],
    config: DropoutTrainConfig,
    ngram_table: np.ndarray | None = None,
    video_table: np.ndarray | None = None,
    val_instances: Sequence[WeeklyInstance] | None = None,
) -> DropoutPredictor:
    """Train one variant on labeled weekly instances.

    ``ngram_table``/``video_table`` carry pretrained embeddings and must be
    present exactly when the variant calls for them.  When ``val_instances``
    is given, the parameters from the epoch with the best validation AUC are
    kept (ties keep the earlier epoch).
    """
    config.validate()
    vocab_size = 10 ** config.n

    if variant_uses_pretrained_clicks(config.variant):
        if ngram_table is None:
            raise InputError(f"variant {config.variant!r} requires a pretrained ngram table")
        if ngram_table.shape != (vocab_size, config.embed_dim):
            raise InputError(
                f"ngram table shape {ngram_table.shape} != {(vocab_size, config.embed_dim)}"
            )
    elif ngram_table is not None:
        raise InputError("variant 'click' trains its click table from scratch")

    if config.variant == VARIANT_CLICK_VIDEO_PRETRAINED:
        if video_table is None:
            raise InputError(f"variant {config.variant!r} requires a pretrained video table")
        if video_table.shape != (config.num_videos + 1, config.video_dim):
            raise InputError(
                f"video table shape {video_table.shape} != "
                f"{(config.num_videos + 1, config.video_dim)}"
            )
    elif video_table is not None:
        raise InputError(f"variant {config.variant!r} does not take a pretrained video table")

    pairs = build_pairs(instances)
    if not pairs:
        raise InputError("no ranking pairs: every user lacks a positive or a negative week")

    rng = np.random.default_rng(config.seed)
    store = ParamStore()

    click_init = (np.array(ngram_table, dtype=np.float64) if ngram_table is not None
                  else glorot_uniform(rng, vocab_size, config.embed_dim))
    if config.freeze_embeddings and ngram_table is not None:
        click_tensor = Tensor(click_init)
    else:
        click_tensor = store.add("ngram_table", click_init)

    video_tensor = None
    d_in = config.embed_dim
    if variant_uses_video(config.variant):
        video_init = (np.array(video_table, dtype=np.float64) if video_table is not None
                      else glorot_uniform(rng, config.num_videos + 1, config.video_dim))
        if config.freeze_embeddings and video_table is not None:
            video_tensor = Tensor(video_init)
        else:
            video_tensor = store.add("video_table", video_init)
        d_in += config.video_dim

    cell = GruCellParams.init(rng, d_in, config.hidden_dim)
    for name, t in zip(GruCellParams.FIELD_NAMES, cell.tensors()):
        store.register(f"gru.{name}", t)
    w_out = store.add("w_out", glorot_uniform(rng, config.hidden_dim, 1)[:, 0])
    b_out = store.add("b_out", np.asarray(0.0))
    opt = make_optimizer(config.optimizer, store, config.lr)

    net = _Network(click_tensor, video_tensor, cell, w_out, b_out)
    pair_lengths = [max(len(p.pos.steps), len(p.neg.steps)) for p in pairs]

    def snapshot_model(losses, vals):
        return DropoutPredictor(
            variant=config.variant,
            n=config.n,
            ngram_table=click_tensor.data.copy(),
            video_table=video_tensor.data.copy() if video_tensor is not None else None,
            gru={name: getattr(cell, name).data.copy() for name in GruCellParams.FIELD_NAMES},
            w_out=w_out.data.copy(),
            b_out=float(b_out.data),
            epoch_losses=losses,
            val_aucs=vals,
        )

    losses: list[float] = []
    val_aucs: list[float] = []
    best_snap = None
    best_val = -np.inf
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        batches = bucket_batches([pair_lengths[i] for i in order], config.batch_pairs, rng)
        total, count = 0.0, 0
        for rel in batches:
            batch = order[rel]
            loss = _hinge_mean(net, pairs, batch, config.margin)
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged("dropout ranking loss", "non-finite loss")
            loss.backward()
            opt.step()
            total += float(loss.data) * batch.size
            count += batch.size
        losses.append(total / count)
        if val_instances is not None:
            current = snapshot_model(list(losses), list(val_aucs))
            scores = score_instances(current, val_instances)
            val = auc([ScoredInstance(i.user_id, i.week, float(s), i.label)
                       for i, s in zip(val_instances, scores)])
            val_aucs.append(val)
            if val > best_val:
                best_val = val
                best_snap = store.snapshot()

    if best_snap is not None:
        store.restore(best_snap)
    return snapshot_model(losses, val_aucs)


def save_predictor(model: DropoutPredictor, path: str):
    meta = {
        "variant": model.variant,
        "n": model.n,
        "m": model.embed_dim,
        "d_h": model.hidden_dim,
        "has_video": model.uses_video,
        "d_v": model.video_table.shape[1] if model.uses_video else None,
        "num_videos": model.video_table.shape[0] - 1 if model.uses_video else None,
    }
    tensors = [model.ngram_table]
    if model.uses_video:
        tensors.append(model.video_table)
    tensors.extend(model.gru[name] for name in GruCellParams.FIELD_NAMES)
    tensors.append(model.w_out)
    tensors.append(np.asarray(model.b_out))
    serialize.write_model(path, serialize.KIND_DROPOUT_PREDICTOR, meta, tensors)


def load_predictor(path: str) -> DropoutPredictor:
    _, meta, tensors = serialize.read_model(path, serialize.KIND_DROPOUT_PREDICTOR)
    it = iter(tensors)
    ngram_table = next(it)
    video_table = next(it) if meta["has_video"] else None
    gru = {name: next(it) for name in GruCellParams.FIELD_NAMES}
    w_out = next(it)
    b_out = float(next(it))
    return DropoutPredictor(
        variant=meta["variant"], n=int(meta["n"]),
        ngram_table=ngram_table, video_table=video_table,
        gru=gru, w_out=w_out, b_out=b_out,
    )


def write_predictions_tsv(instances: Sequence[WeeklyInstance], scores: np.ndarray,
                          path: str):
    """Rows of (user_id, week, P); float repr round-trips exactly."""
    lines = [
        f"{inst.user_id}\t{inst.week}\t{repr(float(s))}"
        for inst, s in zip(instances, scores)
    ]
    serialize.atomic_write_text(path, "\n".join(lines) + "\n")


def read_predictions_tsv(path: str) -> list[tuple[str, int, float]]:
    rows = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise InputError(f"{path}:{line_no}: expected 3 tab-separated fields")
            rows.append((parts[0], int(parts[1]), float(parts[2])))
    return rows
