"""
Dense float64 tensors with reverse-mode automatic differentiation.

Operations always evaluate eagerly.  They are additionally recorded on a
:class:`Tape` while one is active::

    with Tape() as tape:
        loss = tc.sum(tc.mul(x, x))
    grads = tc.backward(tape, loss)

Outside of a tape every operation runs in inference mode and nothing is
recorded.  A tape belongs to the context (thread / task) that entered it.
"""
from __future__ import annotations

import contextvars
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .exceptions import (
    AutogradError,
    DomainError,
    ShapeError,
)


_ACTIVE_TAPE = contextvars.ContextVar('uscnet_active_tape', default=None)

GELU_COEFFICIENT = 0.044715
GELU_SCALE = math.sqrt(2.0 / math.pi)


class Tensor(object):
    __slots__ = ('data', 'requires_grad', 'node', 'tape', 'name')
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, order='C')
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.tape = None
        self.name = name

    @classmethod
    def _wrap(cls, data):
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(data, dtype=np.float64)
        tensor.requires_grad = False
        tensor.node = None
        tensor.tape = None
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

    def item(self):
        if self.data.size != 1:
            raise ShapeError("Only single element tensors convert to a scalar", shape=self.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor._wrap(self.data)

    def __repr__(self):
        return "Tensor(shape={0}, requires_grad={1})".format(self.shape, self.requires_grad)

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


class TapeNode(object):
    __slots__ = ('kind', 'inputs', 'vjp', 'shape')

    def __init__(self, kind, inputs, vjp, shape):
        self.kind = kind
        self.inputs = inputs
        self.vjp = vjp
        self.shape = shape


class Tape(object):
    """
    Ordered record of the operations of one forward pass.
    """
    def __init__(self):
        self.nodes = []
        self.gradients = {}
        self._leaf_index = {}
        self._leaf_tensors = {}
        self._token = None

    def __enter__(self):
        if self._token is not None:
            raise AutogradError("Tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def node_of(self, tensor):
        if tensor.tape is self:
            return tensor.node
        if tensor.requires_grad and tensor.tape is None:
            key = id(tensor)
            if key not in self._leaf_index:
                index = len(self.nodes)
                self.nodes.append(TapeNode('leaf', (), None, tensor.shape))
                self._leaf_index[key] = index
                self._leaf_tensors[index] = tensor
            return self._leaf_index[key]
        # results of another tape and plain constants are both detached here
        return None

    def record(self, kind, inputs, data, vjp):
        input_ids = tuple(self.node_of(tensor) for tensor in inputs)
        out = Tensor._wrap(data)
        if all(input_id is None for input_id in input_ids):
            return out
        out.requires_grad = True
        out.node = len(self.nodes)
        out.tape = self
        self.nodes.append(TapeNode(kind, input_ids, vjp, out.shape))
        return out


def active_tape():
    return _ACTIVE_TAPE.get()


def _emit(kind, inputs, data, vjp):
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor._wrap(data)
    return tape.record(kind, inputs, data, vjp)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, kind):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            "Shapes are not broadcast compatible",
            op=kind,
            left=a.shape,
            right=b.shape,
        )


#
# Elementwise arithmetic
#
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'add')

    def vjp(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _emit('add', (a, b), a.data + b.data, vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'sub')

    def vjp(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return _emit('sub', (a, b), a.data - b.data, vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'mul')

    def vjp(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _emit('mul', (a, b), a.data * b.data, vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'div')
    if np.any(b.data == 0.0):
        raise DomainError("Division by zero", op='div')
    quotient = a.data / b.data

    def vjp(grad):
        return (
            _unbroadcast(grad / b.data, a.shape),
            _unbroadcast(-grad * quotient / b.data, b.shape),
        )

    return _emit('div', (a, b), quotient, vjp)


def power(x, exponent):
    x = as_tensor(x)
    exponent = float(exponent)
    if not exponent.is_integer() and np.any(x.data < 0.0):
        raise DomainError("Fractional power of a negative value", op='pow', exponent=exponent)
    if exponent < 0.0 and np.any(x.data == 0.0):
        raise DomainError("Negative power of zero", op='pow', exponent=exponent)
    result = np.power(x.data, exponent)

    def vjp(grad):
        return (grad * exponent * np.power(x.data, exponent - 1.0),)

    return _emit('pow', (x,), result, vjp)


def relu(x):
    x = as_tensor(x)
    positive = x.data > 0.0

    def vjp(grad):
        return (grad * positive,)

    return _emit('relu', (x,), np.where(positive, x.data, 0.0), vjp)


def gelu(x):
    """
    GELU in its tanh approximation; the backward rule differentiates the
    approximation itself.
    """
    x = as_tensor(x)
    inner = GELU_SCALE * (x.data + GELU_COEFFICIENT * x.data ** 3)
    tanh_inner = np.tanh(inner)
    result = 0.5 * x.data * (1.0 + tanh_inner)

    def vjp(grad):
        d_inner = GELU_SCALE * (1.0 + 3.0 * GELU_COEFFICIENT * x.data ** 2)
        local = 0.5 * (1.0 + tanh_inner) + 0.5 * x.data * (1.0 - tanh_inner ** 2) * d_inner
        return (grad * local,)

    return _emit('gelu', (x,), result, vjp)


def sigmoid(x):
    x = as_tensor(x)
    result = expit(x.data)

    def vjp(grad):
        return (grad * result * (1.0 - result),)

    return _emit('sigmoid', (x,), result, vjp)


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError(
            "Logarithm of a non-positive value",
            op='log',
            minimum=float(x.data.min()),
        )

    def vjp(grad):
        return (grad / x.data,)

    return _emit('log', (x,), np.log(x.data), vjp)


def clip(x, low, high):
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)

    def vjp(grad):
        return (grad * inside,)

    return _emit('clip', (x,), np.clip(x.data, low, high), vjp)


#
# Reductions and structure
#
def _normalize_axis(axis, ndim, kind):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise ShapeError("Axis out of range", op=kind, axis=axis, rank=ndim)
    return axis % ndim


def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim, 'sum')
    # numpy's reduction order depends only on shape and axis
    result = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return _emit('sum', (x,), result, vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim, 'mean')
    count = x.size if axis is None else x.shape[axis]
    result = np.sum(x.data, axis=axis, keepdims=keepdims) / count

    def vjp(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad / count, x.shape).copy(),)

    return _emit('mean', (x,), result, vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(tensor) for tensor in tensors]
    if not tensors:
        raise ShapeError("Nothing to concatenate", op='concat')
    axis = _normalize_axis(axis, tensors[0].ndim, 'concat')
    for tensor in tensors[1:]:
        other_axes = [extent for index, extent in enumerate(tensor.shape) if index != axis]
        first_axes = [extent for index, extent in enumerate(tensors[0].shape) if index != axis]
        if tensor.ndim != tensors[0].ndim or other_axes != first_axes:
            raise ShapeError(
                "Concatenated tensors disagree off the concatenation axis",
                op='concat',
                first=tensors[0].shape,
                other=tensor.shape,
            )
    boundaries = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def vjp(grad):
        return tuple(part.copy() for part in np.split(grad, boundaries, axis=axis))

    value = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit('concat', tuple(tensors), value, vjp)


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(int(extent) for extent in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(
            "Reshape changes the element count",
            op='reshape',
            source=x.shape,
            target=shape,
        )

    def vjp(grad):
        return (grad.reshape(x.shape),)

    return _emit('reshape', (x,), x.data.reshape(shape).copy(), vjp)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(
            "Transpose axes are not a permutation",
            op='transpose',
            axes=axes,
            rank=x.ndim,
        )
    inverse = tuple(np.argsort(axes))

    def vjp(grad):
        return (np.ascontiguousarray(grad.transpose(inverse)),)

    return _emit('transpose', (x,), np.ascontiguousarray(x.data.transpose(axes)), vjp)


#
# Linear algebra and normalisation
#
def matmul(a, b):
    """
    Matrix product over the two trailing axes, with numpy broadcasting of any
    leading batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2", left=a.shape, right=b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            "Inner dimensions differ: {0} vs {1}".format(a.shape[-1], b.shape[-2]),
            op='matmul',
            left=a.shape,
            right=b.shape,
        )
    try:
        result = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(
            "Batch dimensions do not broadcast",
            op='matmul',
            left=a.shape,
            right=b.shape,
        )

    def vjp(grad):
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _emit('matmul', (a, b), result, vjp)


def softmax(x, axis=-1):
    x = as_tensor(x)
    axis = _normalize_axis(axis, x.ndim, 'softmax')
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis", axis=axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exponentials = np.exp(shifted)
    result = exponentials / np.sum(exponentials, axis=axis, keepdims=True)

    def vjp(grad):
        return (result * (grad - np.sum(grad * result, axis=axis, keepdims=True)),)

    return _emit('softmax', (x,), result, vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1] if x.ndim else 0
    if width < 1:
        raise ShapeError("layer_norm needs a non-empty last axis", shape=x.shape)
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(
            "gain/bias must match the last axis",
            op='layer_norm',
            x=x.shape,
            gain=gain.shape,
            bias=bias.shape,
        )
    centred = x.data - np.mean(x.data, axis=-1, keepdims=True)
    variance = np.mean(centred ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normalised = centred * inv_std
    result = normalised * gain.data + bias.data

    def vjp(grad):
        grad_normalised = grad * gain.data
        grad_x = inv_std * (
            grad_normalised
            - np.mean(grad_normalised, axis=-1, keepdims=True)
            - normalised * np.mean(grad_normalised * normalised, axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(x.ndim - 1))
        grad_gain = np.sum(grad * normalised, axis=reduce_axes)
        grad_bias = np.sum(grad, axis=reduce_axes)
        return grad_x, grad_gain, grad_bias

    return _emit('layer_norm', (x, gain, bias), result, vjp)


#
# 3D convolution
#
def _pad(volume, padding):
    if padding == 0:
        return volume
    return np.pad(volume, ((0, 0),) + ((padding, padding),) * 3)


def _crop(volume, padding):
    if padding == 0:
        return volume
    return np.ascontiguousarray(volume[:, padding:-padding, padding:-padding, padding:-padding])


def _windows(padded, side, stride):
    windows = sliding_window_view(padded, (side, side, side), axis=(1, 2, 3))
    return windows[:, ::stride, ::stride, ::stride]


def _correlate(padded, kernels, stride):
    # out[o, d, h, w] = sum_c,ijk kernels[o, c, i, j, k] * padded[c, s*d + i, s*h + j, s*w + k]
    windows = _windows(padded, kernels.shape[2], stride)
    return np.tensordot(kernels, windows, axes=([1, 2, 3, 4], [0, 4, 5, 6]))


def _scatter(values, kernels, stride, spatial):
    # adjoint of _correlate with respect to ``padded``
    side = kernels.shape[2]
    out = np.zeros((kernels.shape[1],) + tuple(spatial))
    extent = tuple(stride * (n - 1) + 1 for n in values.shape[1:])
    for i in range(side):
        for j in range(side):
            for k in range(side):
                contribution = np.tensordot(kernels[:, :, i, j, k], values, axes=(0, 0))
                out[
                    :,
                    i:i + extent[0]:stride,
                    j:j + extent[1]:stride,
                    k:k + extent[2]:stride,
                ] += contribution
    return out


def _kernel_grad(padded, grad, side, stride):
    windows = _windows(padded, side, stride)
    return np.tensordot(grad, windows, axes=([1, 2, 3], [1, 2, 3]))


def _check_conv(x, kernels, stride, padding, kind):
    if x.ndim != 4:
        raise ShapeError("Expected a [C, D, H, W] volume", op=kind, shape=x.shape)
    if kernels.ndim != 5 or len(set(kernels.shape[2:])) != 1:
        raise ShapeError("Expected cubic kernels [C_a, C_b, k, k, k]", op=kind, shape=kernels.shape)
    if int(stride) < 1:
        raise DomainError("Stride must be >= 1", op=kind, stride=stride)
    if int(padding) < 0:
        raise DomainError("Padding must be >= 0", op=kind, padding=padding)


def conv3d(x, kernels, stride=1, padding=0):
    """
    Direct cross-correlation of ``x`` [C_in, D, H, W] with ``kernels``
    [C_out, C_in, k, k, k].
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    _check_conv(x, kernels, stride, padding, 'conv3d')
    if kernels.shape[1] != x.shape[0]:
        raise ShapeError(
            "Channel mismatch: kernels expect {0} input channels, volume has {1}".format(
                kernels.shape[1], x.shape[0],
            ),
            op='conv3d',
        )
    side = kernels.shape[2]
    padded = _pad(x.data, padding)
    if any(extent < side for extent in padded.shape[1:]):
        raise ShapeError(
            "Kernel larger than the padded volume",
            op='conv3d',
            shape=x.shape,
            side=side,
        )
    result = _correlate(padded, kernels.data, stride)

    def vjp(grad):
        grad_padded = _scatter(grad, kernels.data, stride, padded.shape[1:])
        return _crop(grad_padded, padding), _kernel_grad(padded, grad, side, stride)

    return _emit('conv3d', (x, kernels), result, vjp)


def conv_transpose3d(x, kernels, stride=1, padding=0):
    """
    Adjoint of :func:`conv3d`: ``x`` [C_a, D, H, W] with ``kernels``
    [C_a, C_b, k, k, k] gives [C_b, (D - 1) * stride + k - 2 * padding, ...].
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    _check_conv(x, kernels, stride, padding, 'conv_transpose3d')
    if kernels.shape[0] != x.shape[0]:
        raise ShapeError(
            "Channel mismatch: kernels expect {0} input channels, volume has {1}".format(
                kernels.shape[0], x.shape[0],
            ),
            op='conv_transpose3d',
        )
    side = kernels.shape[2]
    full = tuple((n - 1) * stride + side for n in x.shape[1:])
    if any(extent - 2 * padding < 1 for extent in full):
        raise ShapeError("Output extent is not positive", op='conv_transpose3d', shape=x.shape)
    result = _crop(_scatter(x.data, kernels.data, stride, full), padding)

    def vjp(grad):
        grad_full = _pad(grad, padding)
        return (
            _correlate(grad_full, kernels.data, stride),
            _kernel_grad(grad_full, x.data, side, stride),
        )

    return _emit('conv_transpose3d', (x, kernels), result, vjp)


ELEMENTWISE_OPS = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'div': div,
    'relu': relu,
    'gelu': gelu,
    'sigmoid': sigmoid,
    'log': log,
    'pow': power,
    'clip': clip,
    'mean': mean,
    'sum': sum,
    'concat': lambda *tensors, **kwargs: concat(tensors, **kwargs),
    'reshape': reshape,
}


def elementwise(kind, *inputs, **kwargs):
    if kind not in ELEMENTWISE_OPS:
        raise DomainError(
            "Unsupported operation {0!r}.  Must be one of {1}".format(
                kind,
                ', '.join(sorted(ELEMENTWISE_OPS.keys())),
            )
        )
    return ELEMENTWISE_OPS[kind](*inputs, **kwargs)


#
# Differentiation
#
def backward(tape, root):
    """
    Gradients of the scalar ``root`` with respect to every ``requires_grad``
    leaf that contributed to it, as a ``{leaf: ndarray}`` map.  Reachable
    intermediate nodes keep their gradient in ``tape.gradients``.
    """
    if root.size != 1:
        raise AutogradError("backward needs a scalar root", shape=root.shape)
    if root.tape is not tape or root.node is None:
        raise AutogradError("Root was not recorded on this tape")

    gradients = {root.node: np.ones(root.shape)}
    for index in range(root.node, -1, -1):
        grad = gradients.get(index)
        node = tape.nodes[index]
        if grad is None or node.vjp is None:
            continue
        for input_id, input_grad in zip(node.inputs, node.vjp(grad)):
            if input_id is None or input_grad is None:
                continue
            input_grad = np.reshape(input_grad, tape.nodes[input_id].shape)
            if input_id in gradients:
                gradients[input_id] = gradients[input_id] + input_grad
            else:
                gradients[input_id] = input_grad

    tape.gradients = gradients
    return {
        tensor: gradients[index]
        for index, tensor in tape._leaf_tensors.items()
        if index in gradients
    }


def _scalar_value(tensor):
    return as_tensor(tensor).item()


def grad_check(f, x, eps=1e-6, floor=0.0, indices=None):
    """
    Largest relative disagreement between the tape gradient of the scalar
    function ``f`` at ``x`` and central finite differences.

    The error of each entry is ``|ad - fd| / (max(|fd|, floor) + 1e-12)``.
    A positive ``floor`` turns entries whose true gradient is below it into
    an absolute comparison.  ``indices`` restricts the check to those flat
    entries of ``x``.
    """
    x = as_tensor(x)
    leaf = Tensor(x.data, requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
    if isinstance(out, Tensor) and out.tape is tape:
        analytic = backward(tape, out).get(leaf, np.zeros(leaf.shape))
    else:
        analytic = np.zeros(leaf.shape)

    base = x.data.reshape(-1)
    if indices is None:
        indices = np.arange(base.size)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    numeric = np.empty(indices.size)
    for position, index in enumerate(indices):
        shifted = base.copy()
        shifted[index] = base[index] + eps
        upper = _scalar_value(f(Tensor(shifted.reshape(x.shape))))
        shifted[index] = base[index] - eps
        lower = _scalar_value(f(Tensor(shifted.reshape(x.shape))))
        numeric[position] = (upper - lower) / (2.0 * eps)

    if not numeric.size:
        return 0.0
    scale = np.maximum(np.abs(numeric), floor) + 1e-12
    errors = np.abs(analytic.reshape(-1)[indices] - numeric) / scale
    return float(errors.max())
