"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Define-by-run tape: every operation returns a :class:`Tensor` that remembers
its parents and a closure that routes the output gradient back to them.
The op set is exactly what the filter-prediction and gap-filling networks
need: dense layers, LSTM sequences (fused, with hand-derived BPTT), elementwise
arithmetic with broadcasting, reductions, dropout, L2 loss and an
adaptive-moment optimizer.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # Operator sugar; every dunder delegates to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents=parents, backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# Elementwise and linear algebra ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    return _node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def backward(g):
        a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        b.accumulate(_unbroadcast(-g * out / b.data, b.data.shape))

    return _node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a.accumulate(-g)

    return _node(-a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = a.data @ b.data

    def backward(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return _node(out, (a, b), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        a.accumulate(g * out)

    return _node(out, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out * out))

    return _node(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accumulate(g * out * (1.0 - out))

    return _node(out, (a,), backward)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _node(out, (a,), backward)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    size = a.data.size
    out = a.data.mean()

    def backward(g):
        a.accumulate(np.full(a.data.shape, float(g) / size))

    return _node(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    original = a.data.shape

    def backward(g):
        a.accumulate(g.reshape(original))

    return _node(a.data.reshape(shape), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t.accumulate(piece)

    return _node(out, tuple(tensors), backward)


def getitem(a, key) -> Tensor:
    a = _as_tensor(a)
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        a.accumulate(full)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------------------
# Network layers
# ---------------------------------------------------------------------------


def dense(x, weights, bias, activation: str = "identity") -> Tensor:
    """Fully-connected layer: activation(x @ W + b) on a (B, I) input."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if x.data.ndim != 2:
        raise ValueError("dense expects a 2-D input")
    if x.data.shape[1] != weights.data.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input width {x.data.shape[1]} vs "
            f"weights {weights.data.shape}"
        )
    z = x.data @ weights.data + bias.data
    if activation == "tanh":
        out = np.tanh(z)
    elif activation == "exp":
        out = np.exp(z)
    elif activation == "identity":
        out = z
    else:
        raise ValueError(f"unknown activation {activation!r}")

    def backward(g):
        if activation == "tanh":
            dz = g * (1.0 - out * out)
        elif activation == "exp":
            dz = g * out
        else:
            dz = g
        x.accumulate(dz @ weights.data.T)
        weights.accumulate(x.data.T @ dz)
        bias.accumulate(dz.sum(axis=0))

    return _node(out, (x, weights, bias), backward)


def input_dropout(
    x, p: float, rng: Optional[np.random.Generator] = None, training: bool = True
) -> Tensor:
    """Inverted dropout: zero each element with probability p, scale survivors
    by 1/(1-p). Identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))


def _gate_sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_sequence(x, wx, wh, bias, reverse: bool = False) -> Tensor:
    """Run an LSTM over a (T, B, I) sequence, returning hidden states (T, B, H).

    Gate layout along the last weight axis is [input, forget, output, cell].
    Initial hidden and cell states are zero. With ``reverse`` the recurrence
    consumes the sequence back-to-front and outputs are re-reversed, so
    ``out[t]`` always corresponds to ``x[t]``.

    The whole sequence is one tape node with a hand-derived backward pass;
    input projections and weight gradients are batched over time.
    """
    x, wx, wh, bias = _as_tensor(x), _as_tensor(wx), _as_tensor(wh), _as_tensor(bias)
    if x.data.ndim != 3:
        raise ValueError("lstm_sequence expects (T, B, I) input")
    seq_len, batch, in_width = x.data.shape
    hidden = wh.data.shape[0]
    if wx.data.shape != (in_width, 4 * hidden) or wh.data.shape != (hidden, 4 * hidden):
        raise ValueError(
            f"lstm weight shapes {wx.data.shape}/{wh.data.shape} do not match "
            f"input width {in_width} and hidden size {hidden}"
        )
    if bias.data.shape != (4 * hidden,):
        raise ValueError("lstm bias must have shape (4*hidden,)")

    xp = (x.data.reshape(seq_len * batch, in_width) @ wx.data).reshape(
        seq_len, batch, 4 * hidden
    ) + bias.data
    order = range(seq_len - 1, -1, -1) if reverse else range(seq_len)
    order = list(order)

    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    outputs = np.empty((seq_len, batch, hidden))
    gate_i = np.empty((seq_len, batch, hidden))
    gate_f = np.empty((seq_len, batch, hidden))
    gate_o = np.empty((seq_len, batch, hidden))
    gate_g = np.empty((seq_len, batch, hidden))
    cell_tanh = np.empty((seq_len, batch, hidden))
    h_prev = np.empty((seq_len, batch, hidden))
    c_prev = np.empty((seq_len, batch, hidden))

    for t in order:
        z = xp[t] + h @ wh.data
        gi = _gate_sigmoid(z[:, :hidden])
        gf = _gate_sigmoid(z[:, hidden : 2 * hidden])
        go = _gate_sigmoid(z[:, 2 * hidden : 3 * hidden])
        gg = np.tanh(z[:, 3 * hidden :])
        h_prev[t] = h
        c_prev[t] = c
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        gate_i[t], gate_f[t], gate_o[t], gate_g[t] = gi, gf, go, gg
        cell_tanh[t] = tc
        outputs[t] = h

    def backward(g):
        dz_all = np.empty((seq_len, batch, 4 * hidden))
        dh = np.zeros((batch, hidden))
        dc = np.zeros((batch, hidden))
        for t in reversed(order):
            dht = g[t] + dh
            gi, gf, go, gg = gate_i[t], gate_f[t], gate_o[t], gate_g[t]
            tc = cell_tanh[t]
            do = dht * tc
            dc = dc + dht * go * (1.0 - tc * tc)
            di = dc * gg
            dg = dc * gi
            df = dc * c_prev[t]
            dz = dz_all[t]
            dz[:, :hidden] = di * gi * (1.0 - gi)
            dz[:, hidden : 2 * hidden] = df * gf * (1.0 - gf)
            dz[:, 2 * hidden : 3 * hidden] = do * go * (1.0 - go)
            dz[:, 3 * hidden :] = dg * (1.0 - gg * gg)
            dc = dc * gf
            dh = dz @ wh.data.T
        flat_dz = dz_all.reshape(seq_len * batch, 4 * hidden)
        wx.accumulate(x.data.reshape(seq_len * batch, in_width).T @ flat_dz)
        wh.accumulate(h_prev.reshape(seq_len * batch, hidden).T @ flat_dz)
        bias.accumulate(flat_dz.sum(axis=0))
        x.accumulate((flat_dz @ wx.data.T).reshape(seq_len, batch, in_width))

    return _node(outputs, (x, wx, wh, bias), backward)


def bidirectional(x, fwd_params, bwd_params) -> Tensor:
    """Concatenate forward and backward LSTM passes along the feature axis.

    Each params argument is a (wx, wh, bias) triple. Output is (T, B, 2H).
    """
    fwd_wx, fwd_wh, fwd_b = fwd_params
    bwd_wx, bwd_wh, bwd_b = bwd_params
    if _as_tensor(fwd_wh).data.shape != _as_tensor(bwd_wh).data.shape:
        raise ValueError("forward/backward hidden sizes differ")
    fwd = lstm_sequence(x, fwd_wx, fwd_wh, fwd_b, reverse=False)
    bwd = lstm_sequence(x, bwd_wx, bwd_wh, bwd_b, reverse=True)
    return concat([fwd, bwd], axis=2)


def l2_loss(prediction, target) -> Tensor:
    """Mean squared difference over all elements."""
    prediction, target = _as_tensor(prediction), _as_tensor(target)
    if prediction.data.shape != target.data.shape:
        raise ValueError(
            f"shape mismatch: {prediction.data.shape} vs {target.data.shape}"
        )
    diff = sub(prediction, target)
    return mean(mul(diff, diff))


# ---------------------------------------------------------------------------
# Backward pass and parameters
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the tape; loss must be scalar."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class ParamStore:
    """Named parameter tensors plus optimizer state (first/second moments)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        tensor = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def freeze(self) -> None:
        for tensor in self._params.values():
            tensor.data.setflags(write=False)

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for name, tensor in self._params.items():
            other.add(name, tensor.data.copy())
        return other


@dataclasses.dataclass(frozen=True)
class AdamSettings:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(store: ParamStore, settings: AdamSettings = AdamSettings()) -> None:
    """One adaptive-moment update with bias correction; clears gradients."""
    store.step_count += 1
    t = store.step_count
    lr, b1, b2, eps = (
        settings.learning_rate,
        settings.beta1,
        settings.beta2,
        settings.epsilon,
    )
    for name, tensor in store._params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = store._m[name]
        v = store._v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        tensor.grad = None


def grad_check(
    loss_fn: Callable[[], Tensor],
    store: ParamStore,
    epsilon: float = 1e-5,
    samples_per_param: int = 4,
    rng: Optional[np.random.Generator] = None,
    atol: float = 1e-6,
) -> dict[str, float]:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` must rebuild the graph on every call (define-by-run style).
    Returns the max relative error seen per parameter tensor, over
    ``samples_per_param`` randomly chosen entries each. Entries whose
    gradient magnitude falls below ``atol`` are held to absolute accuracy
    instead (central differences bottom out at roundoff ~|loss|*u/epsilon).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    store.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in store.items()
    }
    report: dict[str, float] = {}
    for name, tensor in store.items():
        data = tensor.data
        writable = data.flags.writeable
        data.setflags(write=True)
        flat = data.reshape(-1)
        worst = 0.0
        n = min(samples_per_param, flat.size)
        indices = rng.choice(flat.size, size=n, replace=False)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + epsilon
            plus = float(loss_fn().data)
            flat[idx] = original - epsilon
            minus = float(loss_fn().data)
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            exact = analytic[name].reshape(-1)[idx]
            scale = max(abs(numeric), abs(exact), atol)
            worst = max(worst, abs(numeric - exact) / scale)
        data.setflags(write=writable)
        report[name] = worst
    store.zero_grad()
    return report
