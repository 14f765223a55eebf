"""Scalar activation functions with their one-sided derivatives at zero."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("relu", "identity", "leaky_relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class Activation:
    """Elementwise activation.

    ``sigma_minus`` and ``sigma_plus`` are the one-sided derivatives at 0,
    used by the first-layer replacement (zeroth-layer linearization).
    """

    kind: str
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind != "leaky_relu" and self.slope != 0.0:
            raise ValueError("slope only applies to leaky_relu")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "identity":
            return z
        if self.kind == "leaky_relu":
            return np.where(z >= 0.0, z, self.slope * z)
        if self.kind == "tanh":
            return np.tanh(z)
        # sigmoid; clip keeps exp finite for very negative inputs
        return 1.0 / (1.0 + np.exp(-np.clip(z, -700.0, 700.0)))

    @property
    def sigma_minus(self) -> float:
        return {
            "relu": 0.0,
            "identity": 1.0,
            "leaky_relu": self.slope,
            "tanh": 1.0,
            "sigmoid": 0.25,
        }[self.kind]

    @property
    def sigma_plus(self) -> float:
        return {"relu": 1.0, "identity": 1.0, "leaky_relu": 1.0, "tanh": 1.0, "sigmoid": 0.25}[self.kind]

    @property
    def monotone(self) -> bool:
        return self.kind != "leaky_relu" or self.slope >= 0.0

    @property
    def bounded(self) -> bool:
        return self.kind in ("tanh", "sigmoid")

    @property
    def lipschitz(self) -> float:
        return {"relu": 1.0, "identity": 1.0, "tanh": 1.0, "sigmoid": 0.25}.get(
            self.kind, max(1.0, abs(self.slope))
        )

    @property
    def zero_at_origin(self) -> bool:
        return self.kind != "sigmoid"

    def check_zeroth_layer(self):
        """Raise unless usable as the zeroth-layer activation.

        Requires sigma(0) = 0 and sigma_- + sigma_+ != 0.
        """
        from .errors import InadmissibleActivationError

        if not self.zero_at_origin:
            raise InadmissibleActivationError(f"{self.kind}: sigma(0) != 0")
        if self.sigma_minus + self.sigma_plus == 0.0:
            raise InadmissibleActivationError(f"{self.kind}: sigma_- + sigma_+ = 0")

    def to_json(self):
        if self.kind == "leaky_relu":
            return {"kind": self.kind, "slope": self.slope}
        return self.kind

    @classmethod
    def from_json(cls, obj) -> "Activation":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj["kind"], float(obj.get("slope", 0.0)))


RELU = Activation("relu")
IDENTITY = Activation("identity")
TANH = Activation("tanh")
SIGMOID = Activation("sigmoid")


def leaky_relu(slope: float) -> Activation:
    return Activation("leaky_relu", float(slope))


def get(spec) -> Activation:
    """Coerce a name, JSON object or Activation into an Activation."""
    if isinstance(spec, Activation):
        return spec
    return Activation.from_json(spec)
