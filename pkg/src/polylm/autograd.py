"""Tape-based reverse-mode differentiation over dense 2-D arrays.

Every value is a 2-D :class:`Tensor`.  A :class:`Tape` owns the primitive
operations; each call computes the forward value immediately and, when any
input requires a gradient, records a closure that propagates the output
gradient back to its inputs.  :meth:`Tape.backward` replays the records in
reverse order.

Also holds the two optimizer primitives, :func:`clip_global_norm` and
:func:`sgd_step`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _grad_buffer(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Records primitive operations for one forward/backward pass.

    A tape is meant to be built for a single mini-batch and thrown away
    afterwards.  ``train`` switches dropout on; ``rng`` supplies the dropout
    masks.  With ``record=False`` nothing is kept for the reverse pass, which
    is what evaluation wants.
    """

    def __init__(self, train: bool = False, rng: np.random.Generator | None = None, record: bool = True):
        self.train = train
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.record = record
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self._records)

    def _out(self, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
        needs = self.record and any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=needs)
        if needs:
            self._records.append((out, backward))
        return out

    # ---- linear algebra -------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
        """``a @ b`` or ``a @ b.T``."""
        bd = b.data.T if transpose_b else b.data
        if a.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: {a.shape} x {bd.shape}{' (b transposed)' if transpose_b else ''}")

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g @ bd.T)
            if b.requires_grad:
                gb = a.data.T @ g
                _accumulate(b, gb.T if transpose_b else gb)

        return self._out(a.data @ bd, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add: {a.shape} vs {b.shape}")

        def backward(g: np.ndarray) -> None:
            _accumulate(a, g)
            _accumulate(b, g)

        return self._out(a.data + b.data, (a, b), backward)

    def add_bias(self, a: Tensor, bias: Tensor) -> Tensor:
        """Add a ``1 x n`` row to every row of ``a``."""
        if bias.shape[0] != 1 or bias.shape[1] != a.shape[1]:
            raise ShapeError(f"add_bias: {a.shape} with bias {bias.shape}")

        def backward(g: np.ndarray) -> None:
            _accumulate(a, g)
            if bias.requires_grad:
                _accumulate(bias, g.sum(axis=0, keepdims=True))

        return self._out(a.data + bias.data, (a, bias), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul: {a.shape} vs {b.shape}")

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g * b.data)
            if b.requires_grad:
                _accumulate(b, g * a.data)

        return self._out(a.data * b.data, (a, b), backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * c)

        return self._out(a.data * c, (a,), backward)

    def sum(self, a: Tensor) -> Tensor:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, np.broadcast_to(g, a.shape))

        return self._out(a.data.sum().reshape(1, 1), (a,), backward)

    # ---- elementwise nonlinearities --------------------------------------

    def sigmoid(self, a: Tensor) -> Tensor:
        y = _sigmoid(a.data)

        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * y * (1.0 - y))

        return self._out(y, (a,), backward)

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.data)

        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * (1.0 - y * y))

        return self._out(y, (a,), backward)

    # ---- structural -----------------------------------------------------

    def concat_rows(self, parts: Sequence[Tensor]) -> Tensor:
        """Stack tensors with equal column counts on top of each other."""
        if not parts:
            raise ShapeError("concat_rows: no inputs")
        cols = parts[0].shape[1]
        if any(p.shape[1] != cols for p in parts):
            raise ShapeError(f"concat_rows: column mismatch {[p.shape for p in parts]}")
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def backward(g: np.ndarray) -> None:
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    _accumulate(p, g[lo:hi])

        return self._out(np.concatenate([p.data for p in parts], axis=0), parts, backward)

    def slice(self, a: Tensor, rows: slice = slice(None), cols: slice = slice(None)) -> Tensor:
        if not isinstance(rows, slice) or not isinstance(cols, slice):
            raise ShapeError("slice: rows and cols must be slice objects")
        out = a.data[rows, cols]
        if out.size == 0:
            raise ShapeError(f"slice: empty result from {a.shape}[{rows}, {cols}]")

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _grad_buffer(a)[rows, cols] += g

        return self._out(np.array(out), (a,), backward)

    def embedding(self, table: Tensor, ids) -> Tensor:
        """Gather rows of ``table``; repeated ids accumulate gradient."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError(f"embedding: ids outside [0, {table.shape[0]})")

        def backward(g: np.ndarray) -> None:
            if table.requires_grad:
                np.add.at(_grad_buffer(table), ids, g)

        return self._out(table.data[ids], (table,), backward)

    def dropout(self, a: Tensor, p: float) -> Tensor:
        """Inverted dropout; identity outside training or when ``p == 0``."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        if not self.train or p == 0.0:
            return a
        keep = (self.rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)

        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * keep)

        return self._out(a.data * keep, (a,), backward)

    def softmax_xent(self, logits: Tensor, targets, mask=None) -> Tensor:
        """Summed cross-entropy of row-wise softmax against integer targets.

        Rows where ``mask`` is false contribute nothing, neither to the value
        nor to the gradient.  Returns a ``1 x 1`` tensor.
        """
        n, c = logits.shape
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        if targets.shape[0] != n:
            raise ShapeError(f"softmax_xent: {n} rows but {targets.shape[0]} targets")
        weight = np.ones(n, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype).reshape(-1)
        if weight.shape[0] != n:
            raise ShapeError(f"softmax_xent: {n} rows but mask of {weight.shape[0]}")
        safe_t = np.where(weight > 0, targets, 0)
        if np.any((safe_t < 0) | (safe_t >= c)):
            raise ShapeError(f"softmax_xent: targets outside [0, {c})")
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        nll = logsum - z[np.arange(n), safe_t]
        value = np.asarray((nll * weight).sum(), dtype=logits.dtype).reshape(1, 1)

        def backward(g: np.ndarray) -> None:
            probs = np.exp(z - logsum[:, None])
            probs[np.arange(n), safe_t] -= 1.0
            _accumulate(logits, probs * (weight * g[0, 0])[:, None])

        return self._out(value, (logits,), backward)

    # ---- reverse pass ---------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(.) into ``.grad`` of every recorded input.

        Gradients are summed into existing ``.grad`` arrays, so callers reset
        parameters between batches (see :func:`zero_grads`).
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"backward: loss must be 1x1, got {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("backward: loss does not depend on any parameter")
        # intermediates hold their incoming gradient in .grad until consumed
        for out, _ in self._records:
            out.grad = None
        loss.grad = np.ones((1, 1), dtype=loss.dtype)
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)
                out.grad = None
        self._records.clear()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients jointly so their combined L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the norm observed before
    clipping.  Arrays are scaled in place.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= g.dtype.type(factor)
    return list(grads), norm


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """Plain SGD, ``p <- p - lr * g`` in place."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if len(params) != len(grads):
        raise ShapeError(f"sgd_step: {len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"sgd_step: param {p.name or '?'} {p.shape} vs grad {g.shape}")
        if lr:
            p.data -= p.data.dtype.type(lr) * g
