"""Feed-forward networks: evaluation, masked evaluation and JSON I/O.

Parameter flattening order (fixed; coefficient subsets index into it):
layer by layer, each layer contributing its weight matrix in row-major order
followed by its bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import activations
from .activations import Activation
from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = field(default=activations.IDENTITY)

    def __post_init__(self):
        w = np.array(self.weight, dtype=float, ndmin=2)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or w.shape[0] != b.shape[0]:
            raise ShapeError(f"weight {w.shape} incompatible with bias {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "activation", activations.get(self.activation))

    @property
    def rows(self) -> int:
        return self.weight.shape[0]

    @property
    def cols(self) -> int:
        return self.weight.shape[1]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def __call__(self, x):
        return self.activation(x @ self.weight.T + self.bias)


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("network needs at least one layer")
        for j in range(1, len(layers)):
            if layers[j].cols != layers[j - 1].rows:
                raise ShapeError(
                    f"layer {j + 1} expects {layers[j].cols} inputs, layer {j} gives {layers[j - 1].rows}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].cols

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [layer.rows for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def param_slices(self):
        """Per layer, the (weight, bias) slices into the flat parameter vector."""
        out, start = [], 0
        for layer in self.layers:
            ws = slice(start, start + layer.weight.size)
            bs = slice(ws.stop, ws.stop + layer.bias.size)
            out.append((ws, bs))
            start = bs.stop
        return out

    def flat_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def with_params(self, w) -> "Network":
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {w.shape}")
        layers = []
        for layer, (ws, bs) in zip(self.layers, self.param_slices()):
            layers.append(Layer(w[ws].reshape(layer.weight.shape), w[bs], layer.activation))
        return Network(tuple(layers))

    def __call__(self, x):
        return eval_network(self, x)

    # -- serialization -------------------------------------------------
    def to_json(self) -> dict:
        return {
            "layers": [
                {
                    "rows": l.rows,
                    "cols": l.cols,
                    "weights": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                    "activation": l.activation.to_json(),
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_json(cls, obj) -> "Network":
        layers = []
        for spec in obj["layers"]:
            rows, cols = int(spec["rows"]), int(spec["cols"])
            w = np.asarray(spec["weights"], dtype=float)
            if w.size != rows * cols:
                raise ShapeError(f"layer declares {rows}x{cols} but has {w.size} weights")
            layers.append(Layer(w.reshape(rows, cols), spec["bias"], spec.get("activation", "identity")))
        return cls(tuple(layers))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_json(json.loads(Path(path).read_text()))


def network(*layers) -> Network:
    """Build a network from ``(W, b, activation)`` triples."""
    return Network(tuple(Layer(np.atleast_2d(w), np.atleast_1d(b), act) for w, b, act in layers))


def _as_batch(net: Network, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    xb = np.atleast_2d(x) if x.ndim <= 1 else x
    if x.ndim == 0 or xb.shape[-1] != net.input_dim:
        raise ShapeError(f"input has dimension {xb.shape[-1] if x.ndim else 0}, network expects {net.input_dim}")
    return xb, single


def eval_network(net: Network, x) -> np.ndarray:
    """Evaluate the network at a point (shape (d,)) or a batch (shape (P, d))."""
    return eval_masked(net, None, x)


def eval_masked(net: Network, mask, x) -> np.ndarray:
    """Evaluate with each parameter multiplied by its mask entry.

    Mask entries may be real (expectation replacement uses ``E[f]``).
    ``mask=None`` is the unmasked network.
    """
    h, single = _as_batch(net, x)
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != (net.n_params,):
            raise ShapeError(f"mask has shape {mask.shape}, expected ({net.n_params},)")
    for layer, (ws, bs) in zip(net.layers, net.param_slices()):
        w, b = layer.weight, layer.bias
        if mask is not None:
            w = w * mask[ws].reshape(w.shape)
            b = b * mask[bs]
        h = layer.activation(h @ w.T + b)
    return h[0] if single else h


def eval_masked_batch(net: Network, masks, x) -> np.ndarray:
    """Evaluate a stack of masks, shape (B, n), on points (P, d); returns (B, P, d_L)."""
    masks = np.asarray(masks, dtype=float)
    if masks.ndim != 2 or masks.shape[1] != net.n_params:
        raise ShapeError(f"masks must have shape (B, {net.n_params}), got {masks.shape}")
    h, _ = _as_batch(net, x)
    h = np.broadcast_to(h, (masks.shape[0],) + h.shape)
    for layer, (ws, bs) in zip(net.layers, net.param_slices()):
        w = layer.weight[None] * masks[:, ws].reshape((-1,) + layer.weight.shape)
        b = layer.bias[None] * masks[:, bs]
        h = layer.activation(h @ np.swapaxes(w, 1, 2) + b[:, None, :])
    return h


def hs_norm(w) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.sqrt(np.sum(np.square(np.asarray(w, dtype=float)))))
