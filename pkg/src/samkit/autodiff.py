"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A forward pass records every primitive application on a :class:`Tape`.
:func:`backward` replays the tape in reverse creation order (a valid reverse
topological order, since nodes are appended as they are created) and
accumulates vector-Jacobian products into the leaves.  A tape is consumed by
exactly one backward pass.

The primitive set is deliberately small: matmul, broadcasting add, tanh,
relu, mean, and two fused batch losses (softmax cross-entropy and half
squared error).  That is all the MLPs in :mod:`samkit.models` need.  No
higher-order derivatives, no convolutions, no graph rewriting.

Everything is float64.  The trigger statistics downstream compare small
differences of squared gradient norms, and float32 drift is large enough to
flip trigger decisions between otherwise identical runs.

:func:`finite_diff_grad` is the independent central-difference oracle used to
cross-check every backward implementation; it never calls into the tape
machinery.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from samkit.errors import ConfigurationError, NumericError, UsageError


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 array (the only dtype samkit computes in)."""
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains NaN or Inf")
    return arr


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||, 1e-12)``.

    The floor keeps the ratio meaningful at critical points where both
    gradients are nearly zero.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


class Tape:
    """Computation record for a single forward pass.

    Nodes are stored in creation order; the reverse sweep walks them
    backwards.  One tape must not be shared between concurrent passes, but
    distinct tapes are fully independent.
    """

    def __init__(self) -> None:
        self._nodes: list[Node] = []
        self._consumed = False

    def _register(self, node: "Node") -> "Node":
        self._nodes.append(node)
        return node

    def leaf(self, value, requires_grad: bool = True) -> "Node":
        """Create an input node (a parameter if ``requires_grad``)."""
        return self._register(Node(self, as_tensor(value), requires_grad=requires_grad))

    def constant(self, value) -> "Node":
        """Create an input node that never receives a gradient."""
        return self.leaf(value, requires_grad=False)

    @property
    def consumed(self) -> bool:
        return self._consumed


class Node:
    """One recorded value.  ``parents`` holds ``(input, vjp)`` pairs."""

    __slots__ = ("tape", "value", "parents", "requires_grad", "grad")

    def __init__(self, tape: Tape, value: np.ndarray, parents=(), requires_grad: bool = False):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in self.parents)
        self.grad: np.ndarray | None = None

    def item(self) -> float:
        return float(self.value)


def _make(tape: Tape, value: np.ndarray, parents) -> Node:
    return tape._register(Node(tape, value, parents=parents))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ConfigurationError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ConfigurationError(
            f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}"
        )
    value = a.value @ b.value
    parents = (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    )
    return _make(a.tape, value, parents)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum with numpy broadcasting (used for bias terms)."""
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    parents = (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    )
    return _make(a.tape, value, parents)


def tanh(x: Node) -> Node:
    value = np.tanh(x.value)
    return _make(x.tape, value, ((x, lambda g: g * (1.0 - value * value)),))


def relu(x: Node) -> Node:
    value = np.maximum(x.value, 0.0)
    mask = (x.value > 0.0).astype(np.float64)
    return _make(x.tape, value, ((x, lambda g: g * mask),))


def mean(x: Node) -> Node:
    """Mean over all elements, returning a scalar node."""
    value = np.asarray(x.value.mean())
    n = x.value.size
    return _make(x.tape, value, ((x, lambda g: np.full_like(x.value, g / n)),))


def softmax_cross_entropy(logits: Node, labels: np.ndarray) -> Node:
    """Fused mean cross-entropy of row softmax against integer class labels."""
    z = logits.value
    if z.ndim != 2:
        raise ConfigurationError("softmax_cross_entropy expects 2-D logits")
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise ConfigurationError("labels must be one integer per logits row")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ConfigurationError("label outside [0, n_classes)")
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_prob = shifted - np.log(total)
    value = np.asarray(-log_prob[np.arange(n), labels].mean())
    softmax = exp / total

    def vjp(g):
        jac = softmax.copy()
        jac[np.arange(n), labels] -= 1.0
        return (g / n) * jac

    return _make(logits.tape, value, ((logits, vjp),))


def squared_error(pred: Node, target: np.ndarray) -> Node:
    """Fused mean-over-rows half squared error: ``mean_i 0.5 * ||pred_i - target_i||^2``."""
    t = as_tensor(target)
    if pred.value.ndim != 2 or t.shape != pred.value.shape:
        raise ConfigurationError("squared_error expects matching 2-D arrays")
    n = pred.value.shape[0]
    diff = pred.value - t
    value = np.asarray(0.5 * float((diff * diff).sum()) / n)
    return _make(pred.tape, value, ((pred, lambda g: (g / n) * diff),))


def backward(loss: Node) -> None:
    """Reverse sweep from a scalar loss; accumulates ``.grad`` on every node
    that (transitively) requires a gradient.  Consumes the tape."""
    tape = loss.tape
    if tape._consumed:
        raise UsageError("computation record already consumed by a backward pass")
    tape._consumed = True
    if loss.value.size != 1:
        raise ConfigurationError("backward requires a scalar loss")
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape._nodes):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib


def value_and_grad(loss: Node, params: Sequence[Node]) -> tuple[float, list[np.ndarray]]:
    """Run backward and collect per-parameter gradients (zeros where unused)."""
    backward(loss)
    grads = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        grads.append(check_finite(g, "gradient"))
    check_finite(loss.value, "loss")
    return float(loss.value), grads


def finite_diff_grad(
    loss_fn: Callable[[np.ndarray], float], w: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient oracle.

    ``(f(w + h e_i) - f(w - h e_i)) / (2 h)`` per coordinate; ``loss_fn`` must
    be deterministic.  Independent of the tape machinery by design.
    """
    if h <= 0:
        raise ConfigurationError("finite difference step must be positive")
    w = as_tensor(w).ravel()
    grad = np.empty_like(w)
    for i in range(w.size):
        wp = w.copy()
        wp[i] += h
        wm = w.copy()
        wm[i] -= h
        grad[i] = (loss_fn(wp) - loss_fn(wm)) / (2.0 * h)
    return grad
