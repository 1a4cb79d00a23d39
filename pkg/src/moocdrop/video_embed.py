"""Video embedding pretraining.

Two stages.  First a recurrent classifier learns to name the video a learner
is interacting with from the click n-gram sequence recorded on that video:
n-gram codes feed a GRU and the last hidden state goes through an affine
softmax head over the real videos.  Second, with the trained head (W_v, b_v)
frozen, each video's embedding is the hidden-state vector that maximizes the
head's probability for that video.

That maximization is unbounded whenever two head rows differ (scaling the
optimum direction always increases the probability), so ascent is projected
onto the L2 ball of radius rho after every step.  The ascent is deterministic
from the zero vector with step halving, which makes the achieved probability
non-decreasing across accepted steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import serialize
from .autodiff import Tensor
from .batching import bucket_batches, masked_gru_last, pad_index_matrix
from .errors import ExtractionError, InputError, TrainingDiverged
from .layers import GruCellParams, cross_entropy_rows, glorot_uniform
from .optim import ParamStore, make_optimizer

__all__ = [
    "VideoClassifierConfig",
    "VideoClassifier",
    "ExtractConfig",
    "VideoEmbeddingSet",
    "video_label_sequences",
    "train_video_classifier",
    "classify",
    "extract_video_embedding",
    "build_embedding_set",
    "save_video_embeddings",
    "load_video_embeddings",
    "export_video_embeddings_tsv",
]


@dataclass
class VideoClassifierConfig:
    hidden_dim: int = 32          # d_v, also the video embedding width
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    batch_size: int = 256
    freeze_embeddings: bool = False
    max_sequences_per_epoch: int | None = None

    def validate(self):
        if self.hidden_dim < 1:
            raise InputError("hidden_dim must be >= 1")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.lr <= 0:
            raise InputError("lr must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


@dataclass
class VideoClassifier:
    """Trained video-label classifier.

    ``embed`` is the (10^n, m) n-gram code table (pretrained or random,
    fine-tuned unless frozen), ``W_v`` the (V, d_v) head weights over the V
    real videos.  The no-video sentinel never appears as a label.
    """

    embed: np.ndarray
    gru: dict[str, np.ndarray]
    W_v: np.ndarray
    b_v: np.ndarray
    num_videos: int
    hidden_dim: int
    epoch_losses: list[float] = field(default_factory=list)
    train_accuracy: float = 0.0

    def gru_cell(self) -> GruCellParams:
        return GruCellParams(**{k: Tensor(v) for k, v in self.gru.items()})


@dataclass
class ExtractConfig:
    steps: int = 200
    lr: float = 1.0
    rho: float = 3.0
    seed: int = 0          # reserved; the ascent itself is deterministic
    grad_tol: float = 1e-6

    def validate(self):
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.lr <= 0:
            raise InputError("lr must be positive")
        if self.rho <= 0:
            raise InputError("rho must be positive")


@dataclass
class VideoEmbeddingSet:
    """(V+1, d_v) table: row i is video i's extracted vector, last row is the
    all-zero no-video sentinel."""

    table: np.ndarray
    rho: float
    achieved_prob: list[float] = field(default_factory=list)

    @property
    def num_videos(self) -> int:
        return self.table.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def video_label_sequences(instances, no_video_index: int):
    """Maximal runs of steps on one real video, labeled with that video.

    Steps whose window ends on a video-less click split runs and are never
    labeled; runs therefore contain n-grams for a single video each.
    """
    out = []
    for inst in instances:
        run: list[int] = []
        run_video = None
        for g, v in inst.steps:
            if v == no_video_index or v != run_video:
                if run_video is not None and run_video != no_video_index and run:
                    out.append((tuple(run), run_video))
                run = []
                run_video = None if v == no_video_index else v
            if run_video is not None:
                run.append(g)
        if run_video is not None and run:
            out.append((tuple(run), run_video))
    return out


def train_video_classifier(
    sequences,
    vocab_size: int,
    num_videos: int,
    config: VideoClassifierConfig,
    init_embed: np.ndarray | None = None,
) -> VideoClassifier:
    """Fit the classifier on (ngram sequence, video label) pairs."""
    config.validate()
    sequences = [(tuple(s), int(label)) for s, label in sequences if len(s) > 0]
    if not sequences:
        raise InputError("no labeled video sequences to train on")
    labels_seen = {label for _, label in sequences}
    if len(labels_seen) < 2:
        raise InputError(f"need at least 2 distinct video labels, got {len(labels_seen)}")
    if min(labels_seen) < 0 or max(labels_seen) >= num_videos:
        raise InputError("video label out of range")
    for s, _ in sequences:
        if min(s) < 0 or max(s) >= vocab_size:
            raise InputError("ngram index out of range in classifier corpus")

    rng = np.random.default_rng(config.seed)
    if init_embed is not None:
        if init_embed.shape[0] != vocab_size:
            raise InputError(
                f"init embedding table has {init_embed.shape[0]} rows, expected {vocab_size}"
            )
        embed_init = np.array(init_embed, dtype=np.float64)
        m = embed_init.shape[1]
    else:
        m = config.hidden_dim
        embed_init = glorot_uniform(rng, vocab_size, m)

    store = ParamStore()
    if config.freeze_embeddings:
        embed = Tensor(embed_init)
    else:
        embed = store.add("embed", embed_init)
    cell = GruCellParams.init(rng, m, config.hidden_dim)
    for name, t in zip(GruCellParams.FIELD_NAMES, cell.tensors()):
        store.register(f"gru.{name}", t)
    head_w = store.add("head_weight", glorot_uniform(rng, config.hidden_dim, num_videos))
    head_b = store.add("head_bias", np.zeros(num_videos))
    opt = make_optimizer(config.optimizer, store, config.lr)

    seqs = [s for s, _ in sequences]
    labels = np.array([label for _, label in sequences], dtype=np.intp)
    lengths = [len(s) for s in seqs]

    def forward(batch_idx, with_graph=True):
        sub = [seqs[i] for i in batch_idx]
        idx, mask = pad_index_matrix(sub)
        table = embed if with_graph else Tensor(embed.data)
        h_last = masked_gru_last(cell, lambda t: ad.take_rows(table, idx[:, t, 0]), mask)
        return ad.matmul(h_last, head_w) + head_b

    losses: list[float] = []
    for _ in range(config.epochs):
        epoch_order = rng.permutation(len(seqs))
        if config.max_sequences_per_epoch is not None:
            epoch_order = epoch_order[:config.max_sequences_per_epoch]
        batches = bucket_batches([lengths[i] for i in epoch_order], config.batch_size, rng)
        total, count = 0.0, 0
        for rel in batches:
            batch_idx = epoch_order[rel]
            logits = forward(batch_idx)
            loss = ad.tmean(cross_entropy_rows(logits, labels[batch_idx]))
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged("video classifier loss", "non-finite loss")
            loss.backward()
            opt.step()
            total += float(loss.data) * batch_idx.size
            count += batch_idx.size
        losses.append(total / count)

    # final training accuracy, forward only
    correct = 0
    for rel in bucket_batches(lengths, config.batch_size):
        logits = forward(rel, with_graph=False)
        correct += int((np.argmax(logits.data, axis=1) == labels[rel]).sum())

    return VideoClassifier(
        embed=embed.data.copy(),
        gru={name: getattr(cell, name).data.copy() for name in GruCellParams.FIELD_NAMES},
        W_v=head_w.data.T.copy(),
        b_v=head_b.data.copy(),
        num_videos=num_videos,
        hidden_dim=config.hidden_dim,
        epoch_losses=losses,
        train_accuracy=correct / len(seqs),
    )


def classify(classifier: VideoClassifier, ngram_sequence) -> np.ndarray:
    """Probability vector over the real videos for one n-gram sequence."""
    from .layers import gru_step

    seq = list(ngram_sequence)
    if not seq:
        raise InputError("classify requires a non-empty sequence")
    if min(seq) < 0 or max(seq) >= classifier.embed.shape[0]:
        raise InputError("ngram index out of range")
    cell = classifier.gru_cell()  # plain tensors: no graph is recorded
    h = np.zeros(classifier.hidden_dim)
    for g in seq:
        h = gru_step(cell, classifier.embed[g], h).data
    scores = classifier.W_v @ h + classifier.b_v
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def _head_prob_and_grad(W_v, b_v, i, v):
    """p(c = i | v) under the softmax head, and the gradient of log p in v."""
    scores = W_v @ v + b_v
    z = scores - scores.max()
    e = np.exp(z)
    p = e / e.sum()
    grad = W_v[i] - p @ W_v
    return float(p[i]), grad


def extract_video_embedding(classifier: VideoClassifier, video: int,
                            config: ExtractConfig) -> np.ndarray:
    """Projected gradient ascent on log p(c = video | v) over the rho-ball.

    Starts from v = 0 and halves the step until the candidate does not
    decrease the probability; stops on a small gradient, on step-size
    underflow (boundary optimum), or after ``steps`` iterations.
    """
    config.validate()
    if not 0 <= video < classifier.num_videos:
        raise InputError(f"video index {video} out of range")
    W_v, b_v = classifier.W_v, classifier.b_v
    rho = config.rho
    v = np.zeros(classifier.hidden_dim)
    p, grad = _head_prob_and_grad(W_v, b_v, video, v)
    for _ in range(config.steps):
        gnorm = np.linalg.norm(grad)
        if gnorm < config.grad_tol:
            break
        lr = config.lr
        accepted = False
        while lr > 1e-14:
            cand = v + lr * grad
            norm = np.linalg.norm(cand)
            if norm > rho:
                cand *= rho / norm
            if not np.all(np.isfinite(cand)):
                raise ExtractionError(f"non-finite iterate for video {video}")
            p_new, grad_new = _head_prob_and_grad(W_v, b_v, video, cand)
            if p_new > p:
                v, p, grad = cand, p_new, grad_new
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
    return v


def build_embedding_set(classifier: VideoClassifier, config: ExtractConfig) -> VideoEmbeddingSet:
    """Extract every video's vector; appends the zero no-video row."""
    table = np.zeros((classifier.num_videos + 1, classifier.hidden_dim))
    achieved = []
    for i in range(classifier.num_videos):
        try:
            v = extract_video_embedding(classifier, i, config)
        except ExtractionError as e:
            raise ExtractionError(f"video {i}: {e}") from e
        p_v, _ = _head_prob_and_grad(classifier.W_v, classifier.b_v, i, v)
        p_0, _ = _head_prob_and_grad(classifier.W_v, classifier.b_v, i,
                                     np.zeros(classifier.hidden_dim))
        if p_v < p_0:
            raise ExtractionError(
                f"video {i}: ascent ended below the start probability "
                f"({p_v:.6f} < {p_0:.6f})"
            )
        table[i] = v
        achieved.append(p_v)
    return VideoEmbeddingSet(table=table, rho=config.rho, achieved_prob=achieved)


def save_video_embeddings(embset: VideoEmbeddingSet, path: str):
    serialize.write_model(
        path,
        serialize.KIND_VIDEO_EMBEDDINGS,
        {"num_videos": embset.num_videos, "dim": embset.dim, "rho": embset.rho,
         "achieved_prob": embset.achieved_prob},
        [embset.table],
    )


def load_video_embeddings(path: str) -> VideoEmbeddingSet:
    _, meta, tensors = serialize.read_model(path, serialize.KIND_VIDEO_EMBEDDINGS)
    table = tensors[0]
    if table.shape != (int(meta["num_videos"]) + 1, int(meta["dim"])):
        raise InputError(f"video embedding table shape {table.shape} disagrees with header")
    return VideoEmbeddingSet(table=table, rho=float(meta["rho"]),
                             achieved_prob=list(meta.get("achieved_prob", [])))


def export_video_embeddings_tsv(embset: VideoEmbeddingSet, video_index: dict[str, int],
                                path: str):
    by_idx = {i: vid for vid, i in video_index.items()}
    lines = []
    for i in range(embset.num_videos):
        name = by_idx.get(i, f"video_{i}")
        lines.append(name + "\t" + "\t".join(repr(float(x)) for x in embset.table[i]))
    lines.append("__no_video__\t" + "\t".join(repr(float(x)) for x in embset.table[-1]))
    serialize.atomic_write_text(path, "\n".join(lines) + "\n")
