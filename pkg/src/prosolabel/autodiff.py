"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the handful of operations the annotator needs are implemented, each
as a function building a Tensor whose backward closure scatters the
upstream gradient to its parents.  Gradients accumulate across backward
calls, which is how per-utterance graphs implement batching: the caller
zeroes parameter grads, runs backward(seed=1/B) once per utterance, and
steps.

Forward code deliberately reuses the same numpy expressions as the
inference path (softmax_np, pool_rows, einsum) so a trained model and
the plain-numpy annotator produce bitwise-identical activations.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyMask
from .features import pool_rows, softmax_np


class Tensor:
    """Node in the computation graph: value, grad, and a backward hook."""

    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(self, value, parents=(), backward=None, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.name = name

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=1.0):
        """Reverse sweep from this node, seeding with d(out)/d(out)=seed.

        Parameter grads are accumulated, not overwritten, so repeated
        sweeps over per-utterance graphs sum into one batch gradient.
        """
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        # sweep on clean grads so a repeated backward can't feed a node's
        # stale grad back through the closures; prior grads are restored
        # additively afterwards
        saved = []
        for node in order:
            saved.append(node.grad)
            node.grad = None
        self.accumulate(np.broadcast_to(seed, self.value.shape).astype(np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node, prior in zip(order, saved):
            if prior is not None:
                node.grad = prior if node.grad is None else node.grad + prior


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return Tensor(a.value @ b.value, (a, b), backward, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (P, C) + (C,)."""

    def backward(g):
        x.accumulate(g)
        b.accumulate(g.sum(axis=0))

    return Tensor(x.value + b.value, (x, b), backward, "add_bias")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0.0

    def backward(g):
        x.accumulate(g * mask)

    return Tensor(np.maximum(x.value, 0.0), (x,), backward, "relu")


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-d convolution along rows.

    x is (P, Cin), w is (K, Cin, Cout) with K odd, b is (Cout,).  The
    forward is a sum of K shifted matmuls over a zero-padded copy, the
    fastest expression of this without leaving numpy.
    """
    P = x.value.shape[0]
    K = w.value.shape[0]
    pad = K // 2
    xpad = np.zeros((P + K - 1, x.value.shape[1]))
    xpad[pad : pad + P] = x.value
    out = np.zeros((P, w.value.shape[2]))
    for k in range(K):
        out += xpad[k : k + P] @ w.value[k]
    out += b.value

    def backward(g):
        dxpad = np.zeros_like(xpad)
        dw = np.zeros_like(w.value)
        for k in range(K):
            dw[k] = xpad[k : k + P].T @ g
            dxpad[k : k + P] += g @ w.value[k].T
        x.accumulate(dxpad[pad : pad + P])
        w.accumulate(dw)
        b.accumulate(g.sum(axis=0))

    return Tensor(out, (x, w, b), backward, "conv1d_same")


def softmax_vec(v: Tensor) -> Tensor:
    s = softmax_np(v.value)

    def backward(g):
        v.accumulate(s * (g - float(np.dot(g, s))))

    return Tensor(s, (v,), backward, "softmax_vec")


def weighted_sum(wvec: Tensor, stack: np.ndarray) -> Tensor:
    """Blend a constant (L, T, D) stack with learnable layer weights."""
    stack = np.asarray(stack, dtype=np.float64)

    def backward(g):
        wvec.accumulate(np.einsum("ltd,td->l", stack, g))

    return Tensor(np.einsum("l,ltd->td", wvec.value, stack), (wvec,), backward, "weighted_sum")


def pool_spans(x: Tensor, spans) -> Tensor:
    def backward(g):
        dx = np.zeros_like(x.value)
        for p, (start, end, source) in enumerate(spans):
            if end > start:
                dx[start:end] += g[p] / (end - start)
            else:
                dx[source] += g[p]
        x.accumulate(dx)

    return Tensor(pool_rows(x.value, spans), (x,), backward, "pool_spans")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    width = a.value.shape[1]

    def backward(g):
        a.accumulate(g[:, :width])
        b.accumulate(g[:, width:])

    return Tensor(np.concatenate([a.value, b.value], axis=1), (a, b), backward, "concat_cols")


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, rows: np.ndarray) -> Tensor:
    """Mean cross-entropy over the selected rows only.

    Rows outside `rows` contribute nothing to the value or the gradient,
    so perturbing them cannot change the loss even in the last bit.
    """
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise EmptyMask("cross-entropy over zero rows")
    targets = np.asarray(targets, dtype=np.intp)
    sub = logits.value[rows]
    m = sub.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sub - m).sum(axis=1))
    picked = sub[np.arange(rows.size), targets[rows]]
    n = rows.size

    def backward(g):
        probs = np.exp(sub - m)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), targets[rows]] -= 1.0
        dl = np.zeros_like(logits.value)
        dl[rows] = probs * (float(g) / n)
        logits.accumulate(dl)

    return Tensor((lse - picked).mean(), (logits,), backward, "masked_cross_entropy")


def add_n(terms) -> Tensor:
    terms = list(terms)

    def backward(g):
        for t in terms:
            t.accumulate(g)

    return Tensor(sum(t.value for t in terms), tuple(terms), backward, "add_n")
