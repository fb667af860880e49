"""Reverse-mode automatic differentiation on dense float64 arrays.

The engine is deliberately small: a handful of operations, an explicit
:class:`Tape` that records op outputs in execution order, and a
:func:`backward` that replays the tape strictly in reverse.  There is no
general broadcasting; the only shape mixing allowed is a bias row added to
every row of a matrix (:func:`bias_add`) and per-row scaling by a column
vector (:func:`scale_rows`).  Everything else requires exact shape matches
and raises :class:`~anticipation.errors.DimensionError` otherwise.

Gradient propagation rules:

* ops record onto the innermost active tape, and only when the result
  requires a gradient;
* with no tape active, ops still compute values but record nothing, which
  makes evaluation-mode forward passes cheap;
* :func:`backward` accumulates into ``.grad``; repeated calls without
  clearing the grads add up, one loss-unit per call.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Context manager recording op outputs in execution order."""

    def __init__(self) -> None:
        self.records: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A float64 array with an optional accumulated gradient.

    Tensor data is treated as immutable once it has been consumed by an op;
    the only sanctioned in-place mutation is the parameter update performed
    by :func:`sgd_step` after the tape of the step has been discarded.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grads_fn", "_tape")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grads_fn: Callable[[np.ndarray], tuple] | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grads_fn) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        out._parents = parents
        out._grads_fn = grads_fn
        out._tape = tape
        tape.records.append(out)
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a, b) -> Tensor:
    """Strict 2-D matrix product ``[m,k] @ [k,n] -> [m,n]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grads(g):
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, (a, b), grads)


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D operand, got {x.shape}")
    return _node(x.data.T.copy(), (x,), lambda g: (g.T,))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, c: float) -> Tensor:
    """Multiply every entry by the python scalar ``c``."""
    x = _as_tensor(x)
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,))


def bias_add(x, b) -> Tensor:
    """Add the 1-D bias ``b`` to every row of the 2-D ``x``."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"bias_add needs [m,n] and [n], got {x.shape} and {b.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def scale_rows(x, s) -> Tensor:
    """Scale row ``i`` of the 2-D ``x`` by the column vector entry ``s[i, 0]``."""
    x, s = _as_tensor(x), _as_tensor(s)
    if x.ndim != 2 or s.shape != (x.shape[0], 1):
        raise DimensionError(f"scale_rows needs [m,n] and [m,1], got {x.shape} and {s.shape}")
    xd, sd = x.data, s.data
    return _node(xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=1, keepdims=True)))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    # Two-branch form keeps exp() arguments non-positive for stability.
    out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                   np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0
    return _node(out, (x,), lambda g: (g * mask,))


def softmax(x) -> Tensor:
    """Numerically stable softmax over the last axis of a 1-D or 2-D tensor."""
    x = _as_tensor(x)
    if x.ndim not in (1, 2) or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty 1-D or 2-D operand, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grads(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (x,), grads)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("concat of an empty sequence")
    nd = parts[0].ndim
    if axis < 0 or axis >= nd:
        raise DimensionError(f"concat axis {axis} invalid for {nd}-D operands")
    for p in parts[1:]:
        if p.ndim != nd:
            raise DimensionError(f"concat rank mismatch: {parts[0].shape} vs {p.shape}")
        for ax in range(nd):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise DimensionError(f"concat off-axis mismatch: {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grads(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), grads)


def slice_cols(x, lo: int, hi: int) -> Tensor:
    """Columns ``lo:hi`` of a 2-D tensor."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"slice_cols needs a 2-D operand, got {x.shape}")
    n = x.shape[1]
    if not (0 <= lo < hi <= n):
        raise DimensionError(f"slice_cols range [{lo},{hi}) invalid for {n} columns")
    xd = x.data

    def grads(g):
        gx = np.zeros_like(xd)
        gx[:, lo:hi] = g
        return (gx,)

    return _node(xd[:, lo:hi].copy(), (x,), grads)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: keep with probability ``1-p`` and scale kept entries.

    In evaluation mode the input tensor is returned unchanged (the identity,
    not a copy), so eval passes spend nothing here.
    """
    x = _as_tensor(x)
    if not (0.0 <= p < 1.0):
        raise ParameterError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode requires an rng")
    factor = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * factor, (x,), lambda g: (g * factor,))


def cross_entropy(scores, target: int) -> Tensor:
    """Negative log softmax probability of ``target`` for a 1-D score vector."""
    scores = _as_tensor(scores)
    if scores.ndim != 1:
        raise DimensionError(f"cross_entropy needs a 1-D score vector, got {scores.shape}")
    n = scores.shape[0]
    target = int(target)
    if not (0 <= target < n):
        raise IndexError(f"cross_entropy target {target} out of range for {n} classes")
    z = scores.data - scores.data.max()
    lse = np.log(np.exp(z).sum())
    probs = np.exp(z - lse)

    def grads(g):
        gz = probs.copy()
        gz[target] -= 1.0
        return (gz * g,)

    return _node(np.asarray(lse - z[target]), (scores,), grads)


def cross_entropy_rows(scores, targets) -> Tensor:
    """Mean negative log softmax probability over the rows of ``scores``."""
    scores = _as_tensor(scores)
    if scores.ndim != 2:
        raise DimensionError(f"cross_entropy_rows needs [B,n] scores, got {scores.shape}")
    b, n = scores.shape
    targets = np.asarray(targets)
    if targets.shape != (b,):
        raise DimensionError(f"targets shape {targets.shape} does not match batch {b}")
    targets = targets.astype(np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= n):
        raise IndexError(f"cross_entropy_rows target out of range for {n} classes")
    z = scores.data - scores.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    probs = np.exp(z - lse[:, None])
    rows = np.arange(b)

    def grads(g):
        gz = probs.copy()
        gz[rows, targets] -= 1.0
        return (gz * (float(g) / b),)

    return _node(np.asarray((lse - z[rows, targets]).mean()), (scores,), grads)


def tsum(x) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    x = _as_tensor(x)
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (g * np.ones_like(x.data),))


# ---------------------------------------------------------------------------
# backward pass and parameter update


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every contributing tensor.

    The loss must be a scalar recorded on a tape.  The tape is walked in
    strict reverse execution order; recording order guarantees every node is
    visited only after all of its consumers.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError("backward needs a scalar loss tensor")
    if loss._tape is None:
        raise ContractError("loss was not recorded on a tape")
    pending: dict[int, tuple[Tensor, np.ndarray]] = {
        id(loss): (loss, np.ones((), dtype=np.float64))
    }
    for node in reversed(loss._tape.records):
        entry = pending.pop(id(node), None)
        if entry is None:
            continue
        _, g = entry
        _accumulate(node, g)
        if node._grads_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grads_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                kept, acc = pending[key]
                pending[key] = (kept, acc + pg)
            else:
                pending[key] = (parent, pg)
    # Whatever is left are leaves (inputs and parameters).
    for t, g in pending.values():
        _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g


class Parameter:
    """A trainable tensor plus its SGD momentum buffer."""

    __slots__ = ("value", "momentum_buffer")

    def __init__(self, data) -> None:
        self.value = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.momentum_buffer = np.zeros_like(self.value.data)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.data.shape


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float) -> None:
    """One SGD-with-momentum update; clears gradients afterwards.

    buffer <- momentum * buffer + grad ; value <- value - lr * buffer
    """
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if not (0.0 <= momentum < 1.0):
        raise ParameterError(f"momentum must satisfy 0 <= m < 1, got {momentum}")
    params = list(params)
    for p in params:
        if p.value.grad is None:
            raise ContractError("sgd_step found a parameter with no gradient")
    for p in params:
        p.momentum_buffer *= momentum
        p.momentum_buffer += p.value.grad
        p.value.data -= lr * p.momentum_buffer
        p.value.grad = None


def zero_grads(tensors: Iterable) -> None:
    for t in tensors:
        if isinstance(t, Parameter):
            t.value.grad = None
        else:
            t.grad = None


# ---------------------------------------------------------------------------
# finite-difference verification


def gradient_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], *,
                   eps: float = 1e-4, rng: np.random.Generator | None = None,
                   max_probes_per_tensor: int | None = None) -> dict:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the forward pass from the current contents of
    ``tensors`` and return a scalar loss; it is re-evaluated with entries
    perturbed in place, so it has to be deterministic.  Relative error per
    probed coordinate uses ``max(|analytic|, |numeric|, 1e-8)`` in the
    denominator.  Returns a dict with ``max_rel_err``, ``n_probes`` and the
    list of failing coordinates at the 1e-3 threshold.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    zero_grads(tensors)
    with Tape():
        loss = fn()
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            raise ContractError("gradient_check needs fn() to return a scalar tensor")
        backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    zero_grads(tensors)
    max_rel = 0.0
    n_probes = 0
    failures = []
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        a_flat = analytic[ti].reshape(-1)
        idx = np.arange(flat.size)
        if max_probes_per_tensor is not None and flat.size > max_probes_per_tensor:
            if rng is None:
                raise ParameterError("subsampled probing requires an rng")
            idx = rng.choice(flat.size, size=max_probes_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            rel = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
            n_probes += 1
            if rel >= 1e-3:
                failures.append((ti, int(i), float(a_flat[i]), float(numeric), float(rel)))
    return {"max_rel_err": max_rel, "n_probes": n_probes, "failures": failures}
