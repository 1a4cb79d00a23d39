"""Named parameter store and first-order optimizers (SGD, Adam)."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import TrainingDiverged

__all__ = ["ParamStore", "SGD", "Adam", "make_optimizer"]


class ParamStore:
    """Ordered collection of named trainable tensors.

    Every parameter carries a persistent gradient buffer of identical shape;
    the buffers are zeroed after each optimizer step.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step_count = 0

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def register(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not t.requires_grad:
            raise ValueError(f"parameter {name!r} must require gradients")
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values (for best-epoch rollback)."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, t in self._params.items():
            t.data[...] = snap[k]


class SGD:
    def __init__(self, store: ParamStore, lr: float = 1e-3):
        self.store = store
        self.lr = lr

    def step(self):
        for name, p in self.store.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(name, "gradient")
            p.data -= self.lr * g
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged(name, "parameter after update")
        self.store.step_count += 1
        self.store.zero_grad()


class Adam:
    """Adaptive moment estimation with bias correction.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(name, "gradient")
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged(name, "parameter after update")
        self.store.step_count += 1
        self.store.zero_grad()


def make_optimizer(method: str, store: ParamStore, lr: float):
    if method == "adam":
        return Adam(store, lr=lr)
    if method == "sgd":
        return SGD(store, lr=lr)
    raise ValueError(f"unknown optimizer {method!r} (expected 'adam' or 'sgd')")
