"""Tiny differentiable MLPs and analytic benchmark landscapes.

Both expose the same objective interface the optimizers consume:
``loss_and_grad(w, *batch) -> (loss, grad)`` with ``w`` a flat float64
parameter vector.  MLPs take ``batch = (X, y)``; landscapes are full-batch
objects and take no batch arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from samkit import autodiff as ad
from samkit.errors import ConfigurationError

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("cross-entropy", "squared-error")


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected architecture: layer widths, activation, loss."""

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    loss: str = "cross-entropy"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ConfigurationError("an MLP needs at least an input and an output layer")
        if any(int(w) <= 0 for w in self.layer_widths):
            raise ConfigurationError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]


class Mlp:
    """A dense network over the autodiff core; parameters live in one flat vector.

    The network itself is stateless: every method takes the parameter vector
    explicitly, so optimizers can keep multiple parameter copies around
    without copying the model.
    """

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.shapes: list[tuple[int, ...]] = []
        for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            self.shapes.append((fan_in, fan_out))
            self.shapes.append((fan_out,))
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)

    def init_params(self, seed: int) -> np.ndarray:
        """Uniform weights scaled by 1/sqrt(fan_in); zero biases."""
        rng = np.random.default_rng(seed)
        chunks = []
        for shape in self.shapes:
            if len(shape) == 2:
                bound = 1.0 / math.sqrt(shape[0])
                chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
            else:
                chunks.append(np.zeros(shape))
        return np.concatenate(chunks)

    def _split(self, w: np.ndarray) -> list[np.ndarray]:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.size != self.n_params:
            raise ConfigurationError(
                f"parameter vector has {w.size} entries, expected {self.n_params}"
            )
        out, offset = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(w[offset : offset + size].reshape(shape))
            offset += size
        return out

    def _targets(self, y: np.ndarray, n_rows: int) -> np.ndarray:
        """For the squared-error loss, integer labels become one-hot rows."""
        y = np.asarray(y)
        if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
            onehot = np.zeros((n_rows, self.spec.n_outputs))
            onehot[np.arange(n_rows), y] = 1.0
            return onehot
        return ad.as_tensor(y).reshape(n_rows, self.spec.n_outputs)

    def forward(self, w: np.ndarray, X: np.ndarray, y: np.ndarray):
        """Build the computation record for one batch.

        Returns ``(loss_node, param_nodes, tape)``; call
        :func:`samkit.autodiff.backward` (or ``value_and_grad``) on the loss
        node to consume the record.
        """
        X = ad.as_tensor(X)
        if X.ndim != 2:
            raise ConfigurationError("batch features must be 2-D (n, d)")
        if X.shape[0] == 0:
            raise ConfigurationError("batch must be non-empty")
        if X.shape[1] != self.spec.n_inputs:
            raise ConfigurationError(
                f"batch has {X.shape[1]} features, model expects {self.spec.n_inputs}"
            )
        tape = ad.Tape()
        params = [tape.leaf(p) for p in self._split(w)]
        h = tape.constant(X)
        n_layers = len(self.shapes) // 2
        for layer in range(n_layers):
            weight, bias = params[2 * layer], params[2 * layer + 1]
            h = ad.add(ad.matmul(h, weight), bias)
            if layer < n_layers - 1:
                h = ad.tanh(h) if self.spec.activation == "tanh" else ad.relu(h)
        if self.spec.loss == "cross-entropy":
            loss = ad.softmax_cross_entropy(h, np.asarray(y))
        else:
            loss = ad.squared_error(h, self._targets(y, X.shape[0]))
        return loss, params, tape

    def loss_and_grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray):
        loss_node, params, _ = self.forward(w, X, y)
        value, grads = ad.value_and_grad(loss_node, params)
        return value, np.concatenate([g.ravel() for g in grads])

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        loss_node, _, _ = self.forward(w, X, y)
        return float(ad.check_finite(loss_node.value, "loss"))

    def logits(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass (no tape); used for prediction."""
        X = ad.as_tensor(X)
        params = self._split(w)
        h = X
        n_layers = len(self.shapes) // 2
        for layer in range(n_layers):
            h = h @ params[2 * layer] + params[2 * layer + 1]
            if layer < n_layers - 1:
                h = np.tanh(h) if self.spec.activation == "tanh" else np.maximum(h, 0.0)
        return h

    def predict_proba(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        z = self.logits(w, X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        return self.logits(w, X).argmax(axis=1)

    def accuracy(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(w, X) == np.asarray(y)).mean())


LANDSCAPES = ("quadratic", "scaled-quadratic", "nonconvex-wells")

# nonconvex-wells: 0.5 ||w||^2 + amp * sum_i cos(freq * w_i).  The Hessian is
# diag(1 - amp freq^2 cos(freq w_i)), so its spectral norm is bounded by
# 1 + amp freq^2 in closed form, and w = 0 is a stationary point.
_WELLS_AMP = 0.5
_WELLS_FREQ = 2.0


class AnalyticLandscape:
    """Differentiable test function with closed-form value, gradient, and a
    known gradient-Lipschitz constant ``beta``.

    * ``quadratic``: 0.5 w^T w, beta = 1.
    * ``scaled-quadratic``: 0.5 w^T diag(1, 4, ..., d^2) w, beta = d^2.
    * ``nonconvex-wells``: quadratic plus a bounded sinusoid, beta = 1 + amp freq^2.
    """

    def __init__(self, kind: str, dim: int):
        if kind not in LANDSCAPES:
            raise ConfigurationError(f"unknown landscape {kind!r}")
        if dim < 1:
            raise ConfigurationError("landscape dimension must be positive")
        self.kind = kind
        self.dim = int(dim)
        if kind == "quadratic":
            self._diag = np.ones(self.dim)
            self.beta = 1.0
        elif kind == "scaled-quadratic":
            self._diag = np.arange(1, self.dim + 1, dtype=np.float64) ** 2
            self.beta = float(self.dim) ** 2
        else:
            self._diag = None
            self.beta = 1.0 + _WELLS_AMP * _WELLS_FREQ**2

    def _check(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.size != self.dim:
            raise ConfigurationError(f"expected {self.dim}-dim point, got {w.size}")
        return w

    def value(self, w: np.ndarray) -> float:
        w = self._check(w)
        if self.kind == "nonconvex-wells":
            return float(0.5 * w @ w + _WELLS_AMP * np.cos(_WELLS_FREQ * w).sum())
        return float(0.5 * w @ (self._diag * w))

    def grad(self, w: np.ndarray) -> np.ndarray:
        w = self._check(w)
        if self.kind == "nonconvex-wells":
            return w - _WELLS_AMP * _WELLS_FREQ * np.sin(_WELLS_FREQ * w)
        return self._diag * w

    def stationary_point(self) -> np.ndarray:
        """A point with exactly zero gradient (the origin, for all kinds)."""
        return np.zeros(self.dim)

    def loss_and_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value(w), self.grad(w)
