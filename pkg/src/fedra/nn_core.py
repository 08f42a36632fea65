"""Dense-layer numerics with low-rank adapters, loss, gradients and SGD.

Matrices are float64 numpy arrays. The layered model itself lives in
:mod:`fedra.model`; the batched stack forward/backward is delegated to
:mod:`fedra.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class NumericError(ArithmeticError):
    """Raised when a loss or parameter becomes non-finite."""


ACTIVATIONS = {"relu": kernels.RELU, "tanh": kernels.TANH}


def activation_code(name: str) -> int:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


@dataclass
class DenseParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class LoraAdapter:
    down: np.ndarray  # (rank, in)
    up: np.ndarray  # (out, rank)
    scale: float = 1.0

    def __post_init__(self):
        self.down = np.asarray(self.down, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if self.down.ndim != 2 or self.up.ndim != 2 or self.up.shape[1] != self.down.shape[0]:
            raise ShapeError(f"adapter rank mismatch: down {self.down.shape}, up {self.up.shape}")
        if self.rank < 1 or self.rank > min(self.down.shape[1], self.up.shape[0]):
            raise ShapeError(f"rank {self.rank} must lie in [1, min(in, out)]")
        # scale 0 is accepted: it switches the adapter off
        if not (np.isfinite(self.scale) and self.scale >= 0):
            raise ValueError(f"adapter scale must be finite and >= 0, got {self.scale}")

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    def delta(self) -> np.ndarray:
        return self.scale * (self.up @ self.down)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rank: int, rng: np.random.Generator,
             scale: float = 1.0, std: float = 0.02) -> "LoraAdapter":
        """Gaussian down factor, zero up factor: the initial delta is exactly zero."""
        if rank < 1 or rank > min(in_dim, out_dim):
            raise ShapeError(f"rank {rank} must lie in [1, min({in_dim}, {out_dim})]")
        return cls(rng.normal(0.0, std, size=(rank, in_dim)), np.zeros((out_dim, rank)), scale)


@dataclass
class GradRecord:
    """Gradients of the mean loss w.r.t. the trainable parameters.

    ``down``/``up`` are stacked over the selected blocks in application order.
    Frozen parameters have no entry.
    """

    down: np.ndarray
    up: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray
    loss: float = float("nan")

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"down": self.down, "up": self.up, "head_weight": self.head_weight, "head_bias": self.head_bias}


def _as_vector(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ShapeError(f"input has trailing dim {x.shape[-1]}, expected {dim}")
    return x


def dense_forward(params: DenseParams, x) -> np.ndarray:
    """``weight @ x + bias``; ``x`` may be a vector or a (batch, in) array."""
    x = _as_vector(x, params.in_dim)
    return x @ params.weight.T + params.bias


def lora_delta_apply(adapter: LoraAdapter, params: DenseParams, x) -> np.ndarray:
    if adapter.down.shape[1] != params.in_dim or adapter.up.shape[0] != params.out_dim:
        raise ShapeError(
            f"adapter ({adapter.up.shape[0]}x{adapter.down.shape[1]}) does not match "
            f"layer ({params.out_dim}x{params.in_dim})"
        )
    x = _as_vector(x, params.in_dim)
    return x @ (params.weight + adapter.delta()).T + params.bias


def activate(z, name: str = "relu") -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Loss and gradient w.r.t. logits for a single example (max-shifted)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ShapeError("logits must be a nonempty vector")
    if not 0 <= label < logits.size:
        raise IndexError(f"label {label} out of range for {logits.size} classes")
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - lse)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return float(lse - shifted[label]), dlogits


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy for a (batch, classes) array."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return lse - shifted[np.arange(len(labels)), labels]


def _batch(model, x, labels):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    labels = np.atleast_1d(np.asarray(labels)).astype(np.intp)
    if x.shape[0] != labels.shape[0]:
        raise ShapeError(f"{x.shape[0]} inputs but {labels.shape[0]} labels")
    return model.project(x), labels


def backward_pass(model, x, labels) -> GradRecord:
    """Gradients of the mean cross-entropy over (x, labels) for adapters and head.

    ``model`` is a :class:`fedra.model.StackModel` or :class:`fedra.model.SubModel`.
    """
    H0, labels = _batch(model, x, labels)
    grads = GradRecord(
        np.zeros_like(model.down), np.zeros_like(model.up),
        np.zeros_like(model.head.weight), np.zeros_like(model.head.bias),
    )
    grads.loss = kernels.forward_backward(
        H0, model.base_weight, model.base_bias, model.down, model.up, model.scale,
        model.act_code, model.head.weight, model.head.bias, labels,
        grads.down, grads.up, grads.head_weight, grads.head_bias,
    )
    return grads


def sgd_step(params: dict[str, np.ndarray], grads, lr: float) -> dict[str, np.ndarray]:
    """In-place ``p -= lr * g`` for every named parameter; returns ``params``."""
    if not lr >= 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if isinstance(grads, GradRecord):
        grads = grads.as_dict()
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, parameter {p.shape}")
        p -= lr * g
    return params


def model_loss(model, x, labels) -> float:
    H0, labels = _batch(model, x, labels)
    logits = kernels.forward_logits(
        H0, model.base_weight, model.base_bias, model.down, model.up, model.scale,
        model.act_code, model.head.weight, model.head.bias,
    )
    return float(np.mean(batch_cross_entropy(logits, labels)))


def finite_diff_gradcheck(model, x, labels, epsilon: float = 1e-5) -> float:
    """Max over trainable scalars of |analytic - central difference| / max(1, |numeric|)."""
    if not 0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    analytic = backward_pass(model, x, labels).as_dict()
    worst = 0.0
    for name, p in model.trainable().items():
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = model_loss(model, x, labels)
            flat[i] = orig - epsilon
            lm = model_loss(model, x, labels)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * epsilon)
            worst = max(worst, abs(ga[i] - numeric) / max(1.0, abs(numeric)))
    return worst
