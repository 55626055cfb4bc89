"""Single-hidden-layer network trained with squared error on one-hot targets.

Loss per sample is J = 1/2 * sum_o (out_o - target_o)^2. Sensitivities follow
the negative-gradient convention: delta1 = -dJ/d(hidden pre-activation) and
delta0 = v1.T @ delta1 = -dJ/dh_bar.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import StateError

_PARAMS = ("v1", "b1", "v2", "b2")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_ACTIVATIONS = {
    # activation, derivative expressed through the activation value
    "sigmoid": (_sigmoid, lambda a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
}


@dataclass
class ClassifierState:
    v1: np.ndarray  # (hidden, inputs)
    b1: np.ndarray  # (hidden,)
    v2: np.ndarray  # (t, hidden)
    b2: np.ndarray  # (t,)
    activation: str = "sigmoid"
    frozen: bool = False

    def __post_init__(self):
        for name in _PARAMS:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        h, d = self.v1.shape
        if self.b1.shape != (h,) or self.v2.shape[1] != h or self.b2.shape != (self.v2.shape[0],):
            raise ValueError("inconsistent classifier parameter shapes")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.frozen:
            self.freeze()

    @property
    def inputs(self) -> int:
        return self.v1.shape[1]

    @property
    def hidden(self) -> int:
        return self.v1.shape[0]

    @property
    def outputs(self) -> int:
        return self.v2.shape[0]

    @classmethod
    def init(cls, inputs: int, hidden: int, outputs: int, rng: np.random.Generator,
             activation: str = "sigmoid") -> "ClassifierState":
        """Uniform weights in +-1/sqrt(fan_in), zero biases."""
        a1, a2 = 1.0 / np.sqrt(inputs), 1.0 / np.sqrt(hidden)
        return cls(
            v1=rng.uniform(-a1, a1, size=(hidden, inputs)),
            b1=np.zeros(hidden),
            v2=rng.uniform(-a2, a2, size=(outputs, hidden)),
            b2=np.zeros(outputs),
            activation=activation,
        )

    def freeze(self) -> "ClassifierState":
        for name in _PARAMS:
            getattr(self, name).setflags(write=False)
        self.frozen = True
        return self

    def copy(self) -> "ClassifierState":
        return ClassifierState(*(getattr(self, n).copy() for n in _PARAMS), activation=self.activation)

    def checksum(self) -> str:
        sha = hashlib.sha256()
        for name in _PARAMS:
            sha.update(getattr(self, name).tobytes())
        return sha.hexdigest()


@dataclass
class BackpropResult:
    loss: float             # mean J over the batch
    grads: dict             # dJ/dparam averaged over the batch
    delta1: np.ndarray      # (hidden,) or (B, hidden)
    delta0: np.ndarray      # (inputs,) or (B, inputs)
    outputs: np.ndarray


def _hidden(state: ClassifierState, h_bar: np.ndarray) -> np.ndarray:
    act, _ = _ACTIVATIONS[state.activation]
    return act(h_bar @ state.v1.T + state.b1)


def forward(state: ClassifierState, h_bar) -> np.ndarray:
    """Network outputs for one input vector or a stack of row vectors."""
    h_bar = np.asarray(h_bar, dtype=np.float64)
    if h_bar.shape[-1] != state.inputs:
        raise ValueError(f"input length {h_bar.shape[-1]} does not match classifier inputs {state.inputs}")
    return _hidden(state, h_bar) @ state.v2.T + state.b2


def predict(state: ClassifierState, h_bar) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(forward(state, h_bar), axis=-1)


def one_hot(labels, t: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (t,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def _check_one_hot(target: np.ndarray, t: int):
    if target.shape[-1] != t:
        raise ValueError(f"target length {target.shape[-1]} != {t} outputs")
    ok = np.all((target == 0) | (target == 1)) and np.all(target.sum(axis=-1) == 1)
    if not ok:
        raise ValueError("target must be one-hot")


def backward(state: ClassifierState, h_bar, target) -> BackpropResult:
    """Loss, exact parameter gradients and sensitivities.

    Accepts a single sample or a batch of rows; gradients and loss are batch
    means while delta1/delta0 keep one row per sample.
    """
    h_bar = np.asarray(h_bar, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    single = h_bar.ndim == 1
    X, Y = np.atleast_2d(h_bar), np.atleast_2d(target)
    if X.shape[1] != state.inputs:
        raise ValueError(f"input length {X.shape[1]} does not match classifier inputs {state.inputs}")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("inputs and targets disagree on batch size")
    _check_one_hot(Y, state.outputs)

    _, dact = _ACTIVATIONS[state.activation]
    a = _hidden(state, X)
    out = a @ state.v2.T + state.b2
    delta2 = Y - out                               # -dJ/d(out)
    delta1 = (delta2 @ state.v2) * dact(a)          # -dJ/d(hidden pre-activation)
    delta0 = delta1 @ state.v1                      # rows of v1.T @ delta1
    B = X.shape[0]
    grads = {
        "v1": -(delta1.T @ X) / B,
        "b1": -delta1.mean(axis=0),
        "v2": -(delta2.T @ a) / B,
        "b2": -delta2.mean(axis=0),
    }
    loss = float(0.5 * np.mean(np.sum(delta2 * delta2, axis=1)))
    if single:
        return BackpropResult(loss, grads, delta1[0], delta0[0], out[0])
    return BackpropResult(loss, grads, delta1, delta0, out)


def sgd_step(state: ClassifierState, h_bar, target, eta_net: float) -> tuple[ClassifierState, float]:
    """One averaged mini-batch step; returns the new state and the batch loss."""
    if state.frozen:
        raise StateError("classifier is frozen")
    h_bar = np.atleast_2d(np.asarray(h_bar, dtype=np.float64))
    if h_bar.shape[0] == 0:
        raise ValueError("empty batch")
    res = backward(state, h_bar, np.atleast_2d(target))
    new = ClassifierState(
        *(getattr(state, n) - eta_net * res.grads[n] for n in _PARAMS),
        activation=state.activation,
    )
    return new, res.loss
