"""Residual layer stack with per-layer adapters, submodel extraction and evaluation.

Block ``j`` computes ``h + act((W_j + s * U_j D_j) h + b_j)``. With every
parameter of a block set to zero the block is the identity, which is what
makes a submodel equal to the full model with the other blocks zeroed.

Layer indices are 0-based throughout.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .nn_core import (
    DenseParams,
    LoraAdapter,
    ShapeError,
    activation_code,
    batch_cross_entropy,
)


@dataclass
class ResidualBlock:
    """View of one block's parameters; arrays alias the owning stack."""

    base: DenseParams
    adapter: LoraAdapter
    activation: str = "relu"


class LayerStack:
    """Shared storage and forward logic for the global model and submodels.

    Per-block parameters are stacked along axis 0 in application order:
    ``base_weight`` (k, d, d), ``base_bias`` (k, d), ``down`` (k, r, d),
    ``up`` (k, d, r), ``scale`` (k,). ``selected`` holds the global index of
    each stored block.
    """

    def __init__(self, input_proj, base_weight, base_bias, down, up, scale, head,
                 selected, num_layers, activation="relu"):
        self.input_proj = input_proj
        self.base_weight = np.ascontiguousarray(base_weight, dtype=np.float64)
        self.base_bias = np.ascontiguousarray(base_bias, dtype=np.float64)
        self.down = np.ascontiguousarray(down, dtype=np.float64)
        self.up = np.ascontiguousarray(up, dtype=np.float64)
        self.scale = np.ascontiguousarray(scale, dtype=np.float64)
        self.head = head
        self.selected = tuple(int(j) for j in selected)
        self.num_layers = int(num_layers)
        self.activation = activation
        self.act_code = activation_code(activation)
        self._check()

    def _check(self):
        k = len(self.selected)
        d = self.input_proj.out_dim
        r = self.down.shape[1] if self.down.ndim == 3 else 0
        expected = {
            "base_weight": (k, d, d), "base_bias": (k, d),
            "down": (k, r, d), "up": (k, d, r), "scale": (k,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.head.in_dim != d:
            raise ShapeError(f"head expects {self.head.in_dim} features, stack width is {d}")

    @property
    def width(self) -> int:
        return self.input_proj.out_dim

    @property
    def input_dim(self) -> int:
        return self.input_proj.in_dim

    @property
    def num_classes(self) -> int:
        return self.head.out_dim

    @property
    def rank(self) -> int:
        return self.down.shape[1]

    def block(self, pos: int) -> ResidualBlock:
        """Block stored at position ``pos`` (not the global index)."""
        return ResidualBlock(
            DenseParams(self.base_weight[pos], self.base_bias[pos]),
            LoraAdapter(self.down[pos], self.up[pos], float(self.scale[pos])),
            self.activation,
        )

    @property
    def blocks(self) -> list[ResidualBlock]:
        return [self.block(p) for p in range(len(self.selected))]

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"input has {x.shape[1]} features, model expects {self.input_dim}")
        return np.ascontiguousarray(x @ self.input_proj.weight.T + self.input_proj.bias)

    def trainable(self) -> dict[str, np.ndarray]:
        return {"down": self.down, "up": self.up, "head_weight": self.head.weight, "head_bias": self.head.bias}

    def frozen_digest(self) -> str:
        """SHA-256 over the frozen arrays (input projection and base blocks)."""
        h = hashlib.sha256()
        for arr in (self.input_proj.weight, self.input_proj.bias, self.base_weight, self.base_bias):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def digest(self) -> str:
        h = hashlib.sha256(self.frozen_digest().encode())
        for arr in self.trainable().values():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def copy(self):
        return copy.deepcopy(self)


class StackModel(LayerStack):
    """The global model: all ``L`` blocks in order."""

    @property
    def L(self) -> int:
        return self.num_layers

    def adapter_vector(self) -> np.ndarray:
        """All adapter scalars, layer-major: [down_0, up_0, down_1, up_1, ...]."""
        return np.concatenate([np.concatenate([self.down[j].ravel(), self.up[j].ravel()])
                               for j in range(self.L)])

    def layer_mask(self, layers) -> np.ndarray:
        """Binary mask over :meth:`adapter_vector` selecting the given layers."""
        per_layer = self.down[0].size + self.up[0].size
        mask = np.zeros(self.L * per_layer)
        for j in layers:
            mask[j * per_layer:(j + 1) * per_layer] = 1.0
        return mask


class SubModel(LayerStack):
    """A client's copy of the selected blocks plus input projection and head."""


def build_stack_model(L: int, input_dim: int, d: int, classes: int, rank: int = 4,
                      seed: int = 0, activation: str = "relu", scale: float = 1.0,
                      adapter_std: float = 0.02, base_gain: float = 1.0) -> StackModel:
    """Random frozen surrogate of a pre-trained model with zero-delta adapters.

    Input-projection weights are N(0, 1/sqrt(fan_in)) in standard deviation,
    base block weights N(0, base_gain/sqrt(d)); ``base_gain`` < 1 shrinks the
    residual branches relative to the stream. Biases and the head start at zero.
    """
    if L < 1:
        raise ValueError("model needs at least one layer")
    if min(input_dim, d, classes, rank) < 1:
        raise ValueError("all model dimensions must be >= 1")
    if rank > d:
        raise ValueError(f"adapter rank {rank} exceeds width {d}")
    rng = np.random.default_rng(seed)
    input_proj = DenseParams(rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(d, input_dim)), np.zeros(d))
    base_weight = rng.normal(0.0, base_gain / np.sqrt(d), size=(L, d, d))
    down = rng.normal(0.0, adapter_std, size=(L, rank, d))
    head = DenseParams(np.zeros((classes, d)), np.zeros(classes))
    return StackModel(input_proj, base_weight, np.zeros((L, d)), down, np.zeros((L, d, rank)),
                      np.full(L, float(scale)), head, range(L), L, activation)


def _normalize_selection(selection, L: int) -> tuple[int, ...]:
    sel = sorted(set(int(j) for j in selection))
    if not sel:
        raise ValueError("layer selection is empty")
    if sel[0] < 0 or sel[-1] >= L:
        raise IndexError(f"layer selection {sel} out of range for {L} layers")
    return tuple(sel)


def extract_submodel(model: StackModel, selection) -> SubModel:
    """Deep copy of the selected blocks; blocks run in ascending global order."""
    sel = _normalize_selection(selection, model.L)
    idx = list(sel)
    return SubModel(
        copy.deepcopy(model.input_proj),
        model.base_weight[idx].copy(), model.base_bias[idx].copy(),
        model.down[idx].copy(), model.up[idx].copy(), model.scale[idx].copy(),
        copy.deepcopy(model.head), sel, model.L, model.activation,
    )


def masked_full_model(model: StackModel, selection) -> StackModel:
    """Copy of ``model`` with every parameter of blocks outside ``selection`` set to zero."""
    sel = set(_normalize_selection(selection, model.L))
    out = model.copy()
    for j in range(model.L):
        if j not in sel:
            out.base_weight[j] = 0.0
            out.base_bias[j] = 0.0
            out.down[j] = 0.0
            out.up[j] = 0.0
    return out


def features(model: LayerStack, x) -> np.ndarray:
    return kernels.forward_features(model.project(x), model.base_weight, model.base_bias,
                                    model.down, model.up, model.scale, model.act_code)


def forward(model: LayerStack, x) -> np.ndarray:
    """Logits for a vector (returns a vector) or a batch (returns (batch, classes))."""
    single = np.ndim(x) == 1
    logits = kernels.forward_logits(
        model.project(x), model.base_weight, model.base_bias, model.down, model.up,
        model.scale, model.act_code, model.head.weight, model.head.bias,
    )
    return logits[0] if single else logits


def evaluate(model: LayerStack, dataset, batch_size: int = 1024) -> tuple[float, float]:
    """(accuracy, mean cross-entropy); argmax ties go to the lowest class index."""
    X = np.asarray(dataset.features, dtype=np.float64)
    y = np.asarray(dataset.labels).astype(np.intp)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    loss = 0.0
    for start in range(0, len(y), batch_size):
        logits = forward(model, X[start:start + batch_size])
        yb = y[start:start + batch_size]
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        loss += float(np.sum(batch_cross_entropy(logits, yb)))
    return correct / len(y), loss / len(y)


# -- checkpoint text format ---------------------------------------------------

_MAGIC = "fedra-model v1"


def _named_arrays(model: LayerStack) -> dict[str, np.ndarray]:
    return {
        "input_proj.weight": model.input_proj.weight, "input_proj.bias": model.input_proj.bias,
        "base_weight": model.base_weight, "base_bias": model.base_bias,
        "down": model.down, "up": model.up, "scale": model.scale,
        "head.weight": model.head.weight, "head.bias": model.head.bias,
    }


def dumps_model(model: LayerStack) -> str:
    """Structured text: one header line and one value line per named array.

    Values use 17 significant digits so a reload is bit-exact.
    """
    lines = [_MAGIC,
             f"meta num_layers {model.num_layers}",
             f"meta activation {model.activation}",
             "meta selected " + " ".join(str(j) for j in model.selected)]
    for name, arr in _named_arrays(model).items():
        lines.append(f"param {name} {arr.ndim} " + " ".join(str(s) for s in arr.shape))
        lines.append(" ".join(format(v, ".17g") for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LayerStack:
    lines = text.splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not a fedra model checkpoint")
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split(" ")
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
            i += 1
        elif parts[0] == "param":
            ndim = int(parts[2])
            shape = tuple(int(s) for s in parts[3:3 + ndim])
            body = lines[i + 1].split() if i + 1 < len(lines) else []
            values = np.array([float(v) for v in body], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ValueError(f"param {parts[1]}: {values.size} values for shape {shape}")
            arrays[parts[1]] = values.reshape(shape)
            i += 2
        elif not lines[i].strip():
            i += 1
        else:
            raise ValueError(f"unrecognised checkpoint line {i + 1}: {lines[i][:40]!r}")
    L = int(meta["num_layers"])
    selected = tuple(int(j) for j in meta.get("selected", "").split())
    cls = StackModel if selected == tuple(range(L)) else SubModel
    return cls(
        DenseParams(arrays["input_proj.weight"], arrays["input_proj.bias"]),
        arrays["base_weight"], arrays["base_bias"], arrays["down"], arrays["up"], arrays["scale"],
        DenseParams(arrays["head.weight"], arrays["head.bias"]), selected, L, meta["activation"],
    )


def save_model(model: LayerStack, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path) -> LayerStack:
    return loads_model(Path(path).read_text(encoding="utf-8"))
