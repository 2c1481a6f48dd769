"""Reverse-mode gradient tape over the handful of ops the GCN needs.

Supported ops: dense matmul, sparse-dense product, per-row concatenation,
rectifier, bias add and mean absolute error. Kinks use the zero convention:
relu'(0) = 0 and d|x|/dx at 0 = 0.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Node:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g


class Tape:
    """Records nodes in creation order; :meth:`backward` replays them reversed."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def param(self, value, name=None) -> Node:
        return self._record(Node(np.asarray(value, dtype=np.float64), requires_grad=True, name=name))

    def const(self, value, name=None) -> Node:
        return self._record(Node(value, name=name))

    def matmul(self, a: Node, b: Node) -> Node:
        def backward(out):
            a._accumulate(out.grad @ b.value.T)
            b._accumulate(a.value.T @ out.grad)

        return self._record(Node(a.value @ b.value, (a, b), backward))

    def spmm(self, s: sp.spmatrix, a: Node) -> Node:
        """Constant sparse matrix times a dense node."""
        st = s.T.tocsr()

        def backward(out):
            a._accumulate(st @ out.grad)

        return self._record(Node(s @ a.value, (a,), backward))

    def concat(self, a: Node, b: Node) -> Node:
        """Row-wise ``[a, b]``: vertex ``i`` gets its ``a`` row followed by its ``b`` row."""
        split = a.value.shape[1]

        def backward(out):
            a._accumulate(out.grad[:, :split])
            b._accumulate(out.grad[:, split:])

        return self._record(Node(np.concatenate([a.value, b.value], axis=1), (a, b), backward))

    def relu(self, a: Node) -> Node:
        mask = a.value > 0

        def backward(out):
            a._accumulate(out.grad * mask)

        return self._record(Node(np.where(mask, a.value, 0.0), (a,), backward))

    def add_bias(self, a: Node, b: Node) -> Node:
        def backward(out):
            a._accumulate(out.grad)
            g = out.grad
            # reduce broadcast axes back to the bias shape
            while g.ndim > np.ndim(b.value):
                g = g.sum(axis=0)
            for axis, size in enumerate(np.shape(b.value)):
                if size == 1 and g.shape[axis] != 1:
                    g = g.sum(axis=axis, keepdims=True)
            b._accumulate(g)

        return self._record(Node(a.value + b.value, (a, b), backward))

    def l1_mean(self, pred: Node, target: np.ndarray) -> Node:
        """``mean(|target - pred|)`` over all entries; target is a constant."""
        target = np.asarray(target, dtype=np.float64).reshape(pred.value.shape)
        diff = pred.value - target
        n = diff.size

        def backward(out):
            pred._accumulate(out.grad * np.sign(diff) / n)

        return self._record(Node(np.abs(diff).mean(), (pred,), backward))

    def backward(self, out: Node) -> None:
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value, dtype=np.float64)
        for node in reversed(self.nodes):
            if node.backward_fn is not None and node.grad is not None and node.requires_grad:
                node.backward_fn(node)
