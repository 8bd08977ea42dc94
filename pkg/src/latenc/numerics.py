"""Dense-tensor compute core with reverse-mode differentiation.

A ``Tensor`` wraps a NumPy array and records the ops that produced it;
``Tensor.backward`` replays the tape in reverse topological order,
accumulating into ``.grad``.  Only the ops the lattice encoder needs are
implemented.  Precision is carried by the underlying arrays: float64 for
gradient checks and oracle tests, float32 for training.

Also here: row softmax, layer norm, cross entropy, an Adam optimizer with
inverse-square-root warmup and gradient accumulation, a central-difference
gradient checker, and the flat-binary checkpoint format.
"""

import json
import struct
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NumericsError(ValueError):
    """Invalid numeric inputs (bad shapes, masks, targets, non-finite loss)."""


# ---------------------------------------------------------------- tensor core


class Tensor:
    """A dense array plus the bookkeeping for reverse-mode differentiation.

    ``data`` is a NumPy array; ``grad`` is a same-shape accumulator filled
    in by ``backward``.  Ops build a DAG through ``_parents``; each node's
    ``_backward`` pushes its output gradient to its parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node; seeds ones for a scalar loss."""
        if grad is None:
            if self.data.size != 1:
                raise NumericsError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; the heavy lifting lives in the module-level ops

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NumericsError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def parameter(data: np.ndarray, requires_grad: bool = True) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=requires_grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of NumPy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(data, parents, backward) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=tuple(p for p in parents if p.requires_grad),
        _backward=backward if requires else None,
    )


# ------------------------------------------------------------- basic ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = float(b)

        def backward_scalar(g):
            a._accumulate(g * s)

        return _node(a.data * s, (a,), backward_scalar)
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; also handles stacked (batched) operands like NumPy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise NumericsError("matmul operands must be at least 2-D")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old_shape = x.shape

    def backward(g):
        x._accumulate(g.reshape(old_shape))

    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        x._accumulate(g.transpose(inverse))

    return _node(x.data.transpose(axes), (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0

    def backward(g):
        x._accumulate(g * positive)

    return _node(np.where(positive, x.data, 0.0), (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _node(out_data, (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Look rows of a (R, d) table up by an integer index array.

    Output shape is ``indices.shape + (d,)``; the backward pass scatter-adds
    into the table, so repeated indices accumulate.
    """
    table = as_tensor(table)
    if table.data.ndim != 2:
        raise NumericsError("gather_rows expects a 2-D table")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise NumericsError("gather indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise NumericsError("gather index out of range")
    width = table.data.shape[1]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, width))

    return _node(table.data[idx], (table,), backward)


# -------------------------------------------------------- neural building blocks


def softmax_rows(logits, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis, stabilized by row-max subtraction.

    ``mask`` (broadcastable boolean, True = keep) zeroes entries exactly;
    a fully masked row is an error.
    """
    x = as_tensor(logits)
    data = x.data
    if not np.all(np.isfinite(data)):
        raise NumericsError("softmax input must be finite")
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not keep.any(axis=-1).all():
            raise NumericsError("softmax row is fully masked")
        shifted = np.where(keep, data, -np.inf)
        shifted = shifted - shifted.max(axis=-1, keepdims=True)
        e = np.where(keep, np.exp(shifted), 0.0)
    else:
        shifted = data - data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        # d softmax: p * (g - sum(g * p)); masked entries stay exactly zero
        inner = (g * probs).sum(axis=-1, keepdims=True)
        x._accumulate(probs * (g - inner))

    return _node(probs, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Uses the population variance.  ``gain`` and ``bias`` have the width of
    the last axis.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise NumericsError("gain/bias must match the normalized width")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_sigma
    out_data = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            ghat = g * gain.data
            m1 = ghat.mean(axis=-1, keepdims=True)
            m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((ghat - m1 - xhat * m2) * inv_sigma)

    return _node(out_data, (x, gain, bias), backward)


def cross_entropy(
    logits,
    target,
    ignore_index: int | None = None,
) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    ``logits`` has shape (..., V) and ``target`` shape (...); a bare vector
    with a scalar target is the degenerate case, whose gradient is exactly
    ``softmax(logits) - one_hot(target)``.  Positions equal to
    ``ignore_index`` contribute nothing.
    """
    x = as_tensor(logits)
    v = x.data.shape[-1]
    targets = np.asarray(target)
    if targets.shape != x.data.shape[:-1]:
        raise NumericsError(
            f"target shape {targets.shape} does not match logits {x.data.shape}"
        )
    counted = np.ones(targets.shape, dtype=bool)
    if ignore_index is not None:
        counted = targets != ignore_index
    if not counted.any():
        raise NumericsError("no targets to score")
    checked = targets[counted]
    if checked.size and (checked.min() < 0 or checked.max() >= v):
        raise NumericsError(f"target out of range [0,{v})")

    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    safe = np.where(counted, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    count = int(counted.sum())
    loss = -(picked * counted).sum() / count

    def backward(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
        grad = (probs - onehot) * counted[..., None] / count
        x._accumulate(grad * g)

    out = _node(np.asarray(loss, dtype=x.dtype), (x,), backward)
    return out


# ----------------------------------------------------------------- dropout

_DROPOUT_ENABLED = True


def set_dropout_enabled(flag: bool) -> None:
    """Global deterministic-off switch; tests and eval paths disable dropout."""
    global _DROPOUT_ENABLED
    _DROPOUT_ENABLED = bool(flag)


def dropout_enabled() -> bool:
    return _DROPOUT_ENABLED


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout with a caller-supplied generator.

    Identity when the rate is zero, no generator is given, or the global
    switch is off.
    """
    if not 0.0 <= rate < 1.0:
        raise NumericsError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0 or rng is None or not _DROPOUT_ENABLED:
        return as_tensor(x)
    x = as_tensor(x)
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.shape) >= rate) * scale

    def backward(g):
        x._accumulate(g * mask)

    return _node(x.data * mask, (x,), backward)


# -------------------------------------------------------------------- Adam


@dataclass
class OptimizerConfig:
    """Adam hyperparameters plus schedule and accumulation knobs.

    ``warmup_steps`` of 0 means a constant rate; otherwise the rate ramps
    linearly for ``warmup_steps`` updates and decays as 1/sqrt(step) after,
    peaking at ``learning_rate``.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    warmup_steps: int = 0
    grad_accum_steps: int = 1

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise NumericsError("betas must be in [0,1)")
        if self.epsilon <= 0:
            raise NumericsError("epsilon must be > 0")
        if self.grad_accum_steps < 1:
            raise NumericsError("grad_accum_steps must be >= 1")

    def rate_at(self, step: int) -> float:
        if step < 1:
            raise NumericsError("step must be >= 1")
        if self.warmup_steps <= 0:
            return self.learning_rate
        w = float(self.warmup_steps)
        return self.learning_rate * np.sqrt(w) * min(step**-0.5, step * w**-1.5)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: Mapping[str, tuple[np.ndarray, np.ndarray]] | None,
    config: OptimizerConfig,
    step: int,
) -> tuple[dict[str, np.ndarray], dict[str, tuple[np.ndarray, np.ndarray]]]:
    """One bias-corrected Adam update; pure, returns new params and state."""
    if step < 1:
        raise NumericsError("step must be >= 1")
    lr = config.rate_at(step)
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    new_params: dict[str, np.ndarray] = {}
    new_state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name in params:
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise NumericsError(f"{name}: gradient shape {g.shape} != {p.shape}")
        m_prev, v_prev = (
            state[name]
            if state is not None and name in state
            else (np.zeros_like(p), np.zeros_like(p))
        )
        m = b1 * m_prev + (1.0 - b1) * g
        v = b2 * v_prev + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state[name] = (m, v)
    return new_params, new_state


class Adam:
    """In-place Adam over a named parameter dict, with gradient accumulation.

    ``step`` applies an update only every ``grad_accum_steps`` calls;
    accumulated gradients are averaged, and ``.grad`` is cleared after an
    applied update.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.updates = 0
        self._pending = 0

    def step(self, params: Mapping[str, Tensor]) -> bool:
        self._pending += 1
        if self._pending < self.config.grad_accum_steps:
            return False
        scale = 1.0 / self._pending
        arrays = {name: params[name].data for name in params}
        grads = {
            name: (params[name].grad if params[name].grad is not None
                   else np.zeros_like(params[name].data)) * scale
            for name in params
        }
        new_params, self.state = adam_step(
            arrays, grads, self.state, self.config, self.updates + 1
        )
        for name, p in params.items():
            p.data[...] = new_params[name]
            p.grad = None
        self.updates += 1
        self._pending = 0
        return True


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------- gradient checking


def grad_check_groups(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords_per_group: int = 64,
    seed: int = 0,
) -> dict[str, float]:
    """Central-difference check of every parameter group's gradient.

    ``loss_fn`` must be deterministic (dropout off) and is re-evaluated
    with single coordinates perturbed by +/- eps.  Groups larger than the
    cap are checked on a seeded random coordinate sample.  Returns the max
    relative error per group, with |a - n| / max(|a|, |n|, 1e-8).
    """
    loss = loss_fn(params)
    if loss.data.size != 1 or not np.isfinite(loss.data).all():
        raise NumericsError("loss must be a finite scalar")
    zero_grads(params)
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    zero_grads(params)

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        if size <= max_coords_per_group:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords_per_group, replace=False))
        worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + eps
            f_plus = float(loss_fn(params).data)
            flat[c] = original - eps
            f_minus = float(loss_fn(params).data)
            flat[c] = original
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError(f"non-finite loss while perturbing {name}")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[c])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        errors[name] = worst
    return errors


def grad_check(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords_per_group: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error over all checked coordinates of all groups."""
    errors = grad_check_groups(loss_fn, params, eps, max_coords_per_group, seed)
    return max(errors.values()) if errors else 0.0


# ------------------------------------------------------------- checkpoints

_PRECISIONS = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named tensors as little-endian flat binary with a JSON header.

    Entries are sorted by name so identical contents give identical bytes.
    """
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        precision = str(arr.dtype)
        if precision not in _PRECISIONS:
            raise NumericsError(f"{name}: unsupported precision {precision}")
        raw = np.ascontiguousarray(arr.astype(_PRECISIONS[precision])).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "precision": precision,
                "offset": len(payload),
            }
        )
        payload.extend(raw)
    header = json.dumps({"version": 1, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    out: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = np.dtype(_PRECISIONS[entry["precision"]])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(entry["precision"])
    return out
