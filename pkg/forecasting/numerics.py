"""Deterministic float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active ``Tape`` of the current thread when
at least one input requires a gradient. Outside a tape nothing is recorded, so
evaluation passes carry no bookkeeping cost::

    with Tape() as tape:
        loss = mse_loss(model.forward(x), y)
    tape.backward(loss)
    optimizer.step()

Every op checks shapes explicitly and raises ``DimensionError`` naming the
offending axes. A forward result containing NaN or Inf raises
``NumericalError``.
"""
import hashlib
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DimensionError, NumericalError, OracleError

DTYPE = np.float64

_local = threading.local()


class Tensor:
    """n-dimensional float64 array with an optional gradient."""

    __slots__ = ('data', 'requires_grad', 'grad', 'name')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, array):
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = False
        tensor.grad = None
        tensor.name = None
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.size != 1:
            raise DimensionError(f'item() needs a single value, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad):
        if grad.shape != self.data.shape:
            raise DimensionError(f'gradient shape {grad.shape} does not match tensor shape {self.data.shape}')
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE)
        else:
            self.grad += grad

    def __repr__(self):
        label = f' {self.name!r}' if self.name else ''
        return f'Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})'

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: object
    op: str


class Tape:
    """Ordered record of differentiable operations, confined to one thread.

    Nodes are appended as operations execute, so inputs always precede the
    node that consumes them; ``backward`` walks the list once, in reverse.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_local, 'tapes', None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tapes.pop()
        return False

    def record(self, inputs, output, backward, op):
        self.nodes.append(Node(inputs, output, backward, op))

    def backward(self, loss):
        if loss.size != 1:
            raise DimensionError(f'backward needs a scalar loss, got shape {loss.shape}')
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            upstream = node.output.grad
            if upstream is None:
                continue
            grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, grads):
                if grad is not None and tensor.requires_grad:
                    tensor.accumulate_grad(grad)


def active_tape():
    stack = getattr(_local, 'tapes', None)
    return stack[-1] if stack else None


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(array, inputs, backward, op):
    if not np.all(np.isfinite(array)):
        raise NumericalError(f'{op} produced non-finite values')
    out = Tensor._wrap(array)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward, op)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f'{op}: shapes {a.shape} and {b.shape} do not broadcast') from None


# Elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, 'add')


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'sub')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, 'sub')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'mul')

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, 'mul')


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'div')

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), backward, 'div')


def square(x):
    return mul(x, x)


# Shape manipulation

def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f'reshape: cannot view {x.shape} as {shape}') from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, 'reshape')


def transpose(x, axes):
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f'transpose: axes {axes} are not a permutation of {x.ndim} dims')
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _result(x.data.transpose(axes), (x,), backward, 'transpose')


def swapaxes(x, axis1, axis2):
    axes = list(range(x.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(x, axes)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise DimensionError(f'concat along axis {axis}: shapes {ref.shape} and {t.shape} disagree off-axis')
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[(slice(None),) * axis + (slice(offsets[i], offsets[i + 1]),)]
            for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, 'concat')


def take(x, index):
    """Basic (slice / integer) indexing."""
    out = x.data[index]

    def backward(g):
        grad = np.zeros_like(x.data)
        grad[index] += g
        return (grad,)

    return _result(np.array(out, dtype=DTYPE), (x,), backward, 'take')


# Reductions

def sum_(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out, dtype=DTYPE), (x,), backward, 'sum')


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(x.shape[a] for a in axes)
    if count == 0:
        raise DimensionError(f'mean over an empty axis of shape {x.shape}')
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f'matmul: inner axes disagree, {a.shape} @ {b.shape}')
    if a.ndim == 1:
        row = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(row, row.shape[1:])

    if b.ndim == 1:
        def backward(g):
            grad_a = g[..., None] * b.data
            grad_b = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return _unbroadcast(grad_a, a.shape), grad_b
    else:
        def backward(g):
            grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward, 'matmul')


def linear(x, weight, bias=None):
    """Row-vector affine map ``x @ weight + bias``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# Nonlinearities and normalization

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """Tanh-approximated GELU, the smooth ramp used after conv and FFN layers."""
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner),)

    return _result(out, (x,), backward, 'gelu')


def softmax_last(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, 'softmax')


def layer_norm(x, gamma, beta, eps=1e-5):
    width = x.shape[-1] if x.ndim else 0
    if width == 0:
        raise DimensionError('layer_norm: last axis has size 0')
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(f'layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match last axis {width}')
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(x.ndim - 1))
        grad_gamma = (g * xhat).sum(axis=lead)
        grad_beta = g.sum(axis=lead)
        gx_hat = g * gamma.data
        grad_x = inv / width * (
            width * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta

    return _result(out, (x, gamma, beta), backward, 'layer_norm')


def dropout(x, rate, rng=None, training=True):
    """Inverted dropout; identity when evaluating, at rate 0 or without an RNG stream."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f'dropout rate must be in [0, 1), got {rate}')
    if not training or rate == 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), backward, 'dropout')


# Convolution

def conv1d(x, kernels, bias, padding=0, dilation=1):
    """1-D convolution over the last axis of ``x[..., C_in, L]``.

    ``padding`` is either symmetric (int) or ``(left, right)``; causal
    convolution pads only on the left.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if kernels.ndim != 3:
        raise DimensionError(f'conv1d: kernels must be C_out x C_in x W, got {kernels.shape}')
    c_out, c_in, width = kernels.shape
    if x.ndim < 2 or x.shape[-2] != c_in:
        raise DimensionError(f'conv1d: input channel axis {x.shape[-2:] if x.ndim >= 2 else x.shape} != kernel C_in {c_in}')
    if bias.shape != (c_out,):
        raise DimensionError(f'conv1d: bias {bias.shape} != kernel C_out {c_out}')
    left, right = (padding, padding) if isinstance(padding, int) else padding
    length = x.shape[-1]
    span = (width - 1) * dilation + 1
    padded_len = length + left + right
    if span > padded_len:
        raise ConfigurationError(f'conv1d: kernel span {span} exceeds padded input length {padded_len}')
    out_len = padded_len - span + 1

    pad_spec = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x.data, pad_spec)
    windows = [slice(w * dilation, w * dilation + out_len) for w in range(width)]

    out = np.zeros(x.shape[:-2] + (c_out, out_len), dtype=DTYPE)
    for w, window in enumerate(windows):
        out += np.matmul(kernels.data[:, :, w], xp[..., window])
    out += bias.data[:, None]

    def backward(g):
        grad_xp = np.zeros_like(xp)
        grad_k = np.zeros_like(kernels.data)
        for w, window in enumerate(windows):
            grad_xp[..., window] += np.matmul(kernels.data[:, :, w].T, g)
            grad_k[:, :, w] = np.matmul(g, np.swapaxes(xp[..., window], -1, -2)).reshape(-1, c_out, c_in).sum(axis=0)
        grad_b = g.reshape(-1, c_out, out_len).sum(axis=(0, 2))
        return grad_xp[..., left:left + length], grad_k, grad_b

    return _result(out, (x, kernels, bias), backward, 'conv1d')


# Attention

def split_heads(x, heads):
    *lead, tokens, width = x.shape
    return swapaxes(reshape(x, (*lead, tokens, heads, width // heads)), -3, -2)


def merge_heads(x):
    *lead, heads, tokens, head_dim = x.shape
    return reshape(swapaxes(x, -3, -2), (*lead, tokens, heads * head_dim))


def multi_head_attention(x, params, heads):
    """Unmasked scaled dot-product self-attention over ``x[..., K, D]``.

    ``params`` maps ``w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o`` to tensors;
    projection weights are D x D in row-vector convention.
    """
    width = x.shape[-1]
    if heads < 1 or width % heads:
        raise ConfigurationError(f'attention width {width} is not divisible by {heads} heads')
    q = split_heads(linear(x, params['w_q'], params['b_q']), heads)
    k = split_heads(linear(x, params['w_k'], params['b_k']), heads)
    v = split_heads(linear(x, params['w_v'], params['b_v']), heads)
    scores = mul(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(width // heads))
    context = matmul(softmax_last(scores), v)
    return linear(merge_heads(context), params['w_o'], params['b_o'])


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f'mse_loss: prediction {pred.shape} != target {target.shape}')
    return mean(square(sub(pred, target)))


# Parameters

class ParameterSet:
    """Ordered, named parameter tensors of one model component."""

    def __init__(self):
        self._params = {}
        self.frozen = False

    def add(self, name, array):
        if name in self._params:
            raise ConfigurationError(f'duplicate parameter name {name!r}')
        tensor = Tensor(array, requires_grad=not self.frozen, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def scope(self, prefix):
        """Mapping view of the parameters under ``prefix.``, keyed by the remaining name."""
        start = len(prefix) + 1
        return {name[start:]: t for name, t in self._params.items() if name.startswith(prefix + '.')}

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def num_values(self):
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for tensor in self._params.values():
            tensor.grad = None

    def freeze(self):
        self.frozen = True
        for tensor in self._params.values():
            tensor.requires_grad = False
            tensor.grad = None

    def state_dict(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ConfigurationError(
                f'parameter names disagree: missing {sorted(missing)}, unexpected {sorted(unexpected)}'
            )
        for name, tensor in self._params.items():
            array = np.asarray(state[name], dtype=DTYPE)
            if array.shape != tensor.shape:
                raise DimensionError(f'parameter {name!r}: stored shape {array.shape} != model shape {tensor.shape}')
            tensor.data = array.copy()

    def fingerprint(self):
        digest = hashlib.sha256()
        for name, tensor in self._params.items():
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()


def glorot(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


# Optimizer

@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(named_params, state):
    """One AdamW update with decoupled weight decay, in place on ``tensor.data``.

    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, tensor in named_params:
        if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
            raise NumericalError(f'non-finite gradient for parameter {name!r}')
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, tensor in named_params:
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * tensor.data)
    return state


class AdamW:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        if lr <= 0:
            raise ConfigurationError(f'learning rate must be positive, got {lr}')
        if isinstance(params, ParameterSet):
            params = params.named_parameters()
        self.named_params = [(n, t) for n, t in params if t.requires_grad]
        self.state = AdamWState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)

    def zero_grad(self):
        for _, tensor in self.named_params:
            tensor.grad = None

    def step(self):
        adamw_step(self.named_params, self.state)


# Verification oracle

def grad_check(fn, inputs, epsilon=1e-5):
    """Max relative error between tape gradients and central finite differences.

    ``fn`` takes no arguments and returns a scalar Tensor computed from
    ``inputs``; entries of ``inputs`` are perturbed in place and restored.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigurationError(f'grad_check epsilon must be in [1e-7, 1e-3], got {epsilon}')
    saved_flags = [t.requires_grad for t in inputs]
    for tensor in inputs:
        tensor.data = np.ascontiguousarray(tensor.data)
        tensor.requires_grad = True
        tensor.grad = None
    try:
        with Tape() as tape:
            loss = fn()
        tape.backward(loss)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

        base = fn().item()
        if fn().item() != base or loss.item() != base:
            raise OracleError('function under grad_check is not deterministic')

        worst = 0.0
        for tensor, grad in zip(inputs, analytic):
            flat = tensor.data.reshape(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + epsilon
                plus = fn().item()
                flat[i] = original - epsilon
                minus = fn().item()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * epsilon)
                a = flat_grad[i]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
        return worst
    finally:
        for tensor, flag in zip(inputs, saved_flags):
            tensor.requires_grad = flag
            tensor.grad = None
