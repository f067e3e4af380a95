"""Dense tensors with reverse-mode autodiff, a few layers, and Adam.

Everything is numpy underneath. A :class:`Tensor` records the op that made it
and a closure that pushes its gradient to its parents; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    def __init__(self, data, requires_grad=False, parents=(), backward=None, op=""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op

    # -- basics ------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tracked tensor")

        order, seen = [], set()
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype or DTYPE)
    return Tensor(arr)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _make(data, parents, backward, op):
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, True, tuple(parents), backward, op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def index(a: Tensor, idx) -> Tensor:
    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward, "index")


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


# ---------------------------------------------------------------------------
# linear algebra and layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        # frozen operands (weights during latent optimization) get no gradient
        lambda g: (g @ b.data.T if a.requires_grad else None,
                   a.data.T @ g if b.requires_grad else None),
        "matmul",
    )


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError("embedding: id out of range")

    def backward(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return _make(weight.data[ids], (weight,), backward, "embedding")


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalisation over axis 0.

    In training mode the batch statistics are used and the running buffers
    (numpy arrays) are updated in place; in eval mode the buffers are used.
    """
    if x.data.ndim != 2 or x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batchnorm: shape mismatch {x.shape} vs {gamma.shape}")
    if not training:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x.data - running_mean) * inv
        out = xhat * gamma.data + beta.data
        return _make(
            out,
            (x, gamma, beta),
            lambda g: (g * gamma.data * inv, (g * xhat).sum(0), g.sum(0)),
            "batchnorm_eval",
        )
    n = x.shape[0]
    if n < 2:
        raise ValueError("batchnorm in training mode needs a batch of at least 2")
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    running_mean *= 1 - momentum
    running_mean += momentum * mu
    running_var *= 1 - momentum
    running_var += momentum * var * n / (n - 1)

    def backward(g):
        dxhat = g * gamma.data
        dx = (inv / n) * (n * dxhat - dxhat.sum(0) - xhat * (dxhat * xhat).sum(0))
        return (dx, (g * xhat).sum(0), g.sum(0))

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "batchnorm")


def softmax(x: Tensor, axis=-1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    y = np.exp(out)

    def backward(g):
        return (g - y * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def gaussian_sample(mu: Tensor, sigma: Tensor, eps) -> Tensor:
    """Reparameterised draw ``mu + sigma * eps`` with fixed noise ``eps``."""
    return add(mu, mul(sigma, as_tensor(np.asarray(eps, dtype=mu.dtype))))


def one_hot_nll(log_probs: Tensor, targets) -> Tensor:
    """Per-sample negative log-likelihood ``-sum_i log y[i, t_i]``.

    ``log_probs`` has shape (batch, n, d); ``targets`` holds symbol ids of
    shape (batch, n). Returns shape (batch,).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.data.ndim != 3 or targets.shape != log_probs.shape[:2]:
        raise ValueError(f"one_hot_nll: shape mismatch {log_probs.shape} vs {targets.shape}")
    b_idx = np.arange(targets.shape[0])[:, None]
    p_idx = np.arange(targets.shape[1])[None, :]
    picked = log_probs.data[b_idx, p_idx, targets]

    def backward(g):
        out = np.zeros_like(log_probs.data)
        out[b_idx, p_idx, targets] = -g[:, None]
        return (out,)

    return _make(-picked.sum(axis=1), (log_probs,), backward, "one_hot_nll")


def gaussian_kl(mu: Tensor, sigma: Tensor) -> Tensor:
    """Per-sample KL(N(mu, sigma^2) || N(0, 1)), summed over the last axis."""
    if mu.shape != sigma.shape:
        raise ValueError(f"gaussian_kl: shape mismatch {mu.shape} vs {sigma.shape}")
    if np.any(sigma.data <= 0):
        raise ValueError("gaussian_kl: sigma must be positive (log of non-positive)")
    s = sigma.data
    kl = -0.5 * (1 + np.log(s * s) - mu.data**2 - s * s)

    def backward(g):
        g = np.expand_dims(g, -1)
        return (g * mu.data, g * (s - 1.0 / s))

    return _make(kl.sum(axis=-1), (mu, sigma), backward, "gaussian_kl")


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(np.asarray(target, dtype=pred.dtype))
    return mean(square(pred - target))


# ---------------------------------------------------------------------------
# layers


class Module:
    """Container with named parameters and buffers."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, list):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{k}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")
            elif isinstance(value, list):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state(self) -> dict:
        out = {k: v.data for k, v in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def train(self, mode: bool = True):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=DTYPE):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = parameter(rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype))
        self.bias = parameter(rng.uniform(-bound, bound, n_out).astype(dtype))

    def __call__(self, x):
        return matmul(x, self.weight) + self.bias


class BatchNorm(Module):
    def __init__(self, n, dtype=DTYPE, momentum=0.1):
        self.gamma = parameter(np.ones(n, dtype=dtype))
        self.beta = parameter(np.zeros(n, dtype=dtype))
        self.running_mean = np.zeros(n, dtype=dtype)
        self.running_var = np.ones(n, dtype=dtype)
        self.momentum = momentum

    def __call__(self, x):
        return batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                         self.training, self.momentum)


class Embedding(Module):
    def __init__(self, n, dim, rng, dtype=DTYPE):
        self.weight = parameter(rng.standard_normal((n, dim)).astype(dtype))

    def __call__(self, ids):
        return embedding(self.weight, ids)


class MLPBlock(Module):
    """Linear -> BatchNorm -> ReLU."""

    def __init__(self, n_in, n_out, rng, dtype=DTYPE):
        self.linear = Linear(n_in, n_out, rng, dtype)
        self.norm = BatchNorm(n_out, dtype)

    def __call__(self, x):
        return relu(self.norm(self.linear(x)))


def cast_module(module: Module, dtype) -> Module:
    """Cast parameters and buffers in place (used for float64 gradient checks)."""
    for name, value in vars(module).items():
        if isinstance(value, Tensor):
            value.data = value.data.astype(dtype)
        elif isinstance(value, np.ndarray):
            setattr(module, name, value.astype(dtype))
        elif isinstance(value, Module):
            cast_module(value, dtype)
        elif isinstance(value, list):
            for item in value:
                if isinstance(item, Module):
                    cast_module(item, dtype)
    return module


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    params = list(params)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("Adam state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise ValueError("adam_step: parameter has no gradient")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    # lr * (m / c1) / (sqrt(v / c2) + eps), with the corrections folded into
    # two scalars so each parameter costs a handful of in-place passes
    step_size = state.lr * math.sqrt(c2) / c1
    eps = state.eps * math.sqrt(c2)
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.data.shape:
            raise ValueError("Adam moment shape does not match parameter")
        g = p.grad
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        sq = g * g
        sq *= 1 - state.beta2
        v += sq
        denom = np.sqrt(v)
        denom += eps
        np.divide(m, denom, out=denom)
        denom *= step_size
        p.data -= denom


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)
