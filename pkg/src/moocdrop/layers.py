"""Differentiable layer primitives built on :mod:`moocdrop.autodiff`.

Shape conventions: ``affine`` follows the column convention W (d_out, d_in)
acting on a single vector.  Recurrent weights are stored row-major
(d_in, d_h) so that batched inputs (B, d_in) right-multiply without
transposes, which is the hot path during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, tensor
from .errors import DimensionError

__all__ = [
    "glorot_uniform",
    "affine",
    "linear",
    "GruCellParams",
    "gru_step",
    "cross_entropy_rows",
]


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), shape (fan_out, fan_in)."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def affine(x, W, b) -> Tensor:
    """W @ x + b for a single vector x, with W of shape (d_out, d_in)."""
    x, W, b = tensor(x), tensor(W), tensor(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise DimensionError(
            f"affine expects W 2-D, x and b 1-D; got {W.shape}, {x.shape}, {b.shape}"
        )
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(f"affine shapes inconsistent: W {W.shape}, x {x.shape}, b {b.shape}")
    return ad.matmul(W, x) + b


def linear(x, W, b=None) -> Tensor:
    """x @ W (+ b) with W of shape (d_in, d_out); x may be (d_in,) or (B, d_in)."""
    out = ad.matmul(x, W)
    if b is not None:
        out = out + b
    return out


@dataclass
class GruCellParams:
    """Gate parameters for one recurrent cell.

    Input-to-hidden weights are (d_in, d_h), hidden-to-hidden (d_h, d_h),
    biases (d_h,).  Update gate z, reset gate r, candidate h~.
    """

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_z.shape[1]

    def tensors(self) -> tuple[Tensor, ...]:
        return (
            self.w_z, self.u_z, self.b_z,
            self.w_r, self.u_r, self.b_r,
            self.w_h, self.u_h, self.b_h,
        )

    FIELD_NAMES = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")

    def validate(self):
        d_in, d_h = self.w_z.shape
        expect = {
            "w_z": (d_in, d_h), "w_r": (d_in, d_h), "w_h": (d_in, d_h),
            "u_z": (d_h, d_h), "u_r": (d_h, d_h), "u_h": (d_h, d_h),
            "b_z": (d_h,), "b_r": (d_h,), "b_h": (d_h,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"GRU param {name} has shape {got}, expected {shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_h: int) -> "GruCellParams":
        """Fresh parameters: scaled-uniform weights, zero biases."""
        def w():
            return Tensor(glorot_uniform(rng, d_in, d_h), requires_grad=True)

        def u():
            return Tensor(glorot_uniform(rng, d_h, d_h), requires_grad=True)

        def b():
            return Tensor(np.zeros(d_h), requires_grad=True)

        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b())


def gru_step(params: GruCellParams, x, h) -> Tensor:
    """One recurrent update h' = (1 - z) * h + z * h~.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    h~ = tanh(x W_h + (r * h) U_h + b_h)

    Accepts a single step (x (d_in,), h (d_h,)) or a batch
    (x (B, d_in), h (B, d_h)).
    """
    x, h = tensor(x), tensor(h)
    if x.shape[-1] != params.input_dim or h.shape[-1] != params.hidden_dim:
        raise DimensionError(
            f"gru_step got x {x.shape}, h {h.shape} for cell "
            f"({params.input_dim} -> {params.hidden_dim})"
        )
    z = ad.sigmoid(linear(x, params.w_z, params.b_z) + ad.matmul(h, params.u_z))
    r = ad.sigmoid(linear(x, params.w_r, params.b_r) + ad.matmul(h, params.u_r))
    cand = ad.tanh(linear(x, params.w_h, params.b_h) + ad.matmul(ad.mul(r, h), params.u_h))
    return ad.mul(ad.sub(1.0, z), h) + ad.mul(z, cand)


def cross_entropy_rows(logits, labels) -> Tensor:
    """Per-row -log softmax(logits)[label], fused and numerically stable.

    logits (B, K), labels (B,) integer class ids; returns (B,).
    """
    logits = tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"cross_entropy_rows got logits {logits.shape}, labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    denom = e.sum(axis=1, keepdims=True)
    p = e / denom
    rows = np.arange(labels.shape[0])
    out = np.log(denom[:, 0]) - z[rows, labels]

    def bw(g):
        gz = p * g[:, None]
        gz[rows, labels] -= g
        return ((logits, gz),)

    return ad._node(out, (logits,), bw)
