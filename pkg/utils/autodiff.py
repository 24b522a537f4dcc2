"""
Reverse-mode differentiation over dense float64 buffers.

Only the operations the hierarchical attention network needs are provided.
Parameters are leaf ``Value`` objects that live across passes; every
intermediate node is recorded on an explicit ``Tape`` which is discarded
after its backward pass.
"""
from typing import Callable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from utils.errors import EmptySupportError, IndexOutOfRangeError, ShapeError

DTYPE = np.float64

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], float]


class Value:
    """A node of the computation graph: data buffer, gradient buffer and op record."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "name", "meta", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        op: str = "leaf",
        parents: Tuple["Value", ...] = (),
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self.name = name
        self.meta = None
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name='{self.name}'" if self.name else ""
        return f"<Value(op={self.op}{label}, shape={self.shape}, requires_grad={self.requires_grad})>"


def parameter(data: ArrayLike, name: Optional[str] = None) -> Value:
    """Create a trainable leaf."""
    return Value(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def clear_grads(leaves: Sequence[Value]) -> None:
    for leaf in leaves:
        leaf.grad.fill(0.0)


def _accumulate(node: Value, grad: np.ndarray) -> None:
    if node.requires_grad:
        node.grad += grad


def _same_shape(op: str, x: Value, y: Value) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


class Tape:
    """
    Records every node produced during one forward pass in creation order.

    Creation order is a topological order, so replaying the list backwards
    visits a node only after all of its consumers.
    """

    def __init__(self):
        self.nodes: List[Value] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _emit(
        self,
        op: str,
        data: np.ndarray,
        parents: Tuple[Value, ...],
        backward: Callable[[np.ndarray], None],
    ) -> Value:
        out = Value(data, op=op, parents=parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._backward = backward
        self.nodes.append(out)
        return out

    def constant(self, data: ArrayLike) -> Value:
        out = Value(data, op="const")
        self.nodes.append(out)
        return out

    # Linear algebra

    def matmul(self, a: Value, b: Value) -> Value:
        """[m×k]·[k×n] -> [m×n]; a 1-D right operand is treated as a column [k] -> [m]."""
        if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

        def backward(g: np.ndarray) -> None:
            if b.data.ndim == 1:
                _accumulate(a, np.outer(g, b.data))
            else:
                _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

        return self._emit("matmul", a.data @ b.data, (a, b), backward)

    def transpose(self, a: Value) -> Value:
        if a.data.ndim != 2:
            raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
        return self._emit("transpose", a.data.T.copy(), (a,), lambda g: _accumulate(a, g.T))

    def add_bias(self, x: Value, b: Value) -> Value:
        if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
            raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")

        def backward(g: np.ndarray) -> None:
            _accumulate(x, g)
            _accumulate(b, g.sum(axis=0))

        return self._emit("add_bias", x.data + b.data, (x, b), backward)

    # Elementwise

    def elem_add(self, x: Value, y: Value) -> Value:
        _same_shape("elem_add", x, y)

        def backward(g: np.ndarray) -> None:
            _accumulate(x, g)
            _accumulate(y, g)

        return self._emit("elem_add", x.data + y.data, (x, y), backward)

    def elem_mul(self, x: Value, y: Value) -> Value:
        _same_shape("elem_mul", x, y)

        def backward(g: np.ndarray) -> None:
            _accumulate(x, g * y.data)
            _accumulate(y, g * x.data)

        return self._emit("elem_mul", x.data * y.data, (x, y), backward)

    def scale(self, x: Value, factor: float) -> Value:
        return self._emit("scale", x.data * factor, (x,), lambda g: _accumulate(x, g * factor))

    def tanh(self, x: Value) -> Value:
        y = np.tanh(x.data)
        return self._emit("tanh", y, (x,), lambda g: _accumulate(x, g * (1.0 - y * y)))

    def sigmoid(self, x: Value) -> Value:
        # tanh form never overflows and gives exactly 0.5 at zero
        y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
        return self._emit("sigmoid", y, (x,), lambda g: _accumulate(x, g * y * (1.0 - y)))

    # Structural

    def concat_cols(self, x: Value, y: Value) -> Value:
        """Concatenate along the last axis: [m×a],[m×b] -> [m×(a+b)]; vectors [a],[b] -> [a+b]."""
        if x.data.ndim != y.data.ndim or x.shape[:-1] != y.shape[:-1]:
            raise ShapeError(f"concat_cols: cannot concatenate {x.shape} and {y.shape}")
        split = x.shape[-1]

        def backward(g: np.ndarray) -> None:
            _accumulate(x, g[..., :split])
            _accumulate(y, g[..., split:])

        return self._emit("concat_cols", np.concatenate([x.data, y.data], axis=-1), (x, y), backward)

    def chunk(self, x: Value, parts: int) -> List[Value]:
        """Split a vector into equal consecutive pieces."""
        if x.data.ndim != 1 or x.shape[0] % parts:
            raise ShapeError(f"chunk: cannot split {x.shape} into {parts} parts")
        width = x.shape[0] // parts
        pieces = []
        for k in range(parts):
            lo, hi = k * width, (k + 1) * width

            def backward(g: np.ndarray, lo: int = lo, hi: int = hi) -> None:
                if x.requires_grad:
                    x.grad[lo:hi] += g

            pieces.append(self._emit("chunk", x.data[lo:hi].copy(), (x,), backward))
        return pieces

    def reshape(self, x: Value, shape: Tuple[int, ...]) -> Value:
        try:
            data = x.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}")
        return self._emit("reshape", data.copy(), (x,), lambda g: _accumulate(x, g.reshape(x.shape)))

    def stack_rows(self, rows: Sequence[Value]) -> Value:
        """Stack equally sized vectors [d] into a matrix [L×d]."""
        if not rows:
            raise ShapeError("stack_rows: no rows to stack")
        for row in rows:
            if row.data.ndim != 1 or row.shape != rows[0].shape:
                raise ShapeError(f"stack_rows: shape mismatch {rows[0].shape} vs {row.shape}")

        def backward(g: np.ndarray) -> None:
            for i, row in enumerate(rows):
                _accumulate(row, g[i])

        return self._emit("stack_rows", np.stack([r.data for r in rows]), tuple(rows), backward)

    def gather_rows(self, table: Value, ids: Sequence[int]) -> Value:
        """Look up rows of ``table``; gradients are scattered back additively."""
        if table.data.ndim != 2:
            raise ShapeError(f"gather_rows: expected a table, got shape {table.shape}")
        index = np.asarray(ids, dtype=np.int64).reshape(-1)
        rows = table.shape[0]
        for i in index:
            if i < 0 or i >= rows:
                raise IndexOutOfRangeError(f"gather_rows: id {int(i)} out of range for table with {rows} rows")

        def backward(g: np.ndarray) -> None:
            if table.requires_grad:
                np.add.at(table.grad, index, g)

        return self._emit("gather_rows", table.data[index], (table,), backward)

    def weighted_sum(self, h: Value, w: Value) -> Value:
        """Σ_j w[j]·H[j] for H [L×d], w [L] -> [d]."""
        if h.data.ndim != 2 or w.data.ndim != 1 or h.shape[0] != w.shape[0]:
            raise ShapeError(f"weighted_sum: cannot weight {h.shape} by {w.shape}")

        def backward(g: np.ndarray) -> None:
            _accumulate(h, np.outer(w.data, g))
            _accumulate(w, h.data @ g)

        return self._emit("weighted_sum", w.data @ h.data, (h, w), backward)

    def sum(self, x: Value) -> Value:
        return self._emit("sum", np.asarray(x.data.sum()), (x,), lambda g: _accumulate(x, np.full(x.shape, g)))

    # Normalization and loss

    def masked_softmax(self, scores: Value, mask: Sequence[bool]) -> Value:
        support = np.asarray(mask, dtype=bool)
        if scores.data.ndim != 1 or support.shape != scores.shape:
            raise ShapeError(f"masked_softmax: scores {scores.shape} vs mask {support.shape}")
        if not support.any():
            raise EmptySupportError()
        shifted = scores.data[support] - scores.data[support].max()
        exps = np.zeros_like(scores.data)
        exps[support] = np.exp(shifted)
        y = exps / exps.sum()

        def backward(g: np.ndarray) -> None:
            _accumulate(scores, y * (g - np.dot(g, y)))

        out = self._emit("masked_softmax", y, (scores,), backward)
        out.meta = support
        return out

    def softmax(self, scores: Value) -> Value:
        return self.masked_softmax(scores, np.ones(scores.shape, dtype=bool))

    def cross_entropy(self, p: Value, gold: int) -> Value:
        """-log p[gold]; computed through log-sum-exp when p comes straight from a softmax."""
        if p.data.ndim != 1:
            raise ShapeError(f"cross_entropy: expected a probability vector, got shape {p.shape}")
        classes = p.shape[0]
        if not 0 <= gold < classes:
            raise IndexOutOfRangeError(f"cross_entropy: gold class {gold} out of range for {classes} classes")

        if p.op == "masked_softmax" and p.meta[gold]:
            scores, support = p.parents[0], p.meta
            kept = scores.data[support]
            top = kept.max()
            lse = top + np.log(np.exp(kept - top).sum())
            onehot = np.zeros_like(p.data)
            onehot[gold] = 1.0

            def fused(g: np.ndarray) -> None:
                _accumulate(scores, g * (p.data - onehot))

            return self._emit("cross_entropy", np.asarray(lse - scores.data[gold]), (scores,), fused)

        prob = p.data[gold]
        with np.errstate(divide="ignore"):
            loss = -np.log(prob)

        def backward(g: np.ndarray) -> None:
            if p.requires_grad:
                p.grad[gold] -= g / prob

        return self._emit("cross_entropy", np.asarray(loss), (p,), backward)

    # Reverse pass

    def backward(self, root: Value) -> None:
        """
        Propagate d(root)/d(node) to every node on this tape.

        Intermediate gradients are reset first; leaf gradients accumulate, so
        calling twice without ``clear_grads`` doubles them.
        """
        if root.size != 1:
            raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
        for node in self.nodes:
            if node._backward is not None:
                node.grad.fill(0.0)
        root.grad += 1.0
        for node in reversed(self.nodes):
            if node._backward is not None:
                node._backward(node.grad)
