"""Length-bucketed minibatching and masked recurrent runs over padded batches."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import GruCellParams, gru_step

__all__ = ["bucket_batches", "pad_index_matrix", "masked_gru_last"]


def bucket_batches(lengths, batch_size: int, rng: np.random.Generator | None = None):
    """Split indices 0..N-1 into batches of similar length.

    Indices are stably sorted by length, sliced into contiguous batches, and
    the batch order is shuffled when a generator is given.  Similar lengths
    per batch keep padding waste low.
    """
    lengths = np.asarray(lengths)
    order = np.argsort(lengths, kind="mergesort")
    batches = [order[lo:lo + batch_size] for lo in range(0, order.size, batch_size)]
    if rng is not None and len(batches) > 1:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def pad_index_matrix(seqs, columns: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad integer step sequences into (B, L, columns) plus a (B, L) mask.

    Padded cells hold index 0; the mask zeroes their contribution during the
    recurrent run, so the pad value never affects results.
    """
    B = len(seqs)
    L = max((len(s) for s in seqs), default=0)
    idx = np.zeros((B, L, columns), dtype=np.intp)
    mask = np.zeros((B, L))
    for b, s in enumerate(seqs):
        for t, step in enumerate(s):
            if columns == 1:
                idx[b, t, 0] = step if np.isscalar(step) else step[0]
            else:
                idx[b, t, :] = step
        mask[b, :len(s)] = 1.0
    return idx, mask


def masked_gru_last(cell: GruCellParams, inputs_at, mask: np.ndarray) -> Tensor:
    """Run the cell over a padded batch and return the final hidden state.

    ``inputs_at(t)`` must return the (B, d_in) input tensor for step t.
    Rows finished before step t carry their previous state forward, so an
    all-padding row ends at the zero initial state.
    """
    B, L = mask.shape
    h = ad.tensor(np.zeros((B, cell.hidden_dim)))
    for t in range(L):
        h_new = gru_step(cell, inputs_at(t), h)
        m = mask[:, t:t + 1]
        if np.all(m == 1.0):
            h = h_new
        else:
            h = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
    return h
