"""

invert.diffnet
~~~~~~~~~~~~~~

Minimal reverse-mode differentiation over a fixed vocabulary of layers.

A Stack is a straight-line list of layers, with at most one ConcatChannels
junction that joins a side input onto the running activation. forward()
evaluates a Stack and returns a single-use Tape; backward() consumes the
Tape and returns exact gradients with respect to the input, the side input
and every parameter.

Tensors are plain numpy float64 arrays. Every layer works on a leading batch
axis; forward() accepts either one sample or a batch.

"""

from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .object import LoggingObject
from .exceptions import InvertShapeError, InvertNumericError, InvertValueError, \
                        InvertInvalidOperationException

def as_tensor(values, shape = None, name = "tensor"):
    """ Promote values to a float64 array, checking shape and finiteness. """
    array = np.asarray(values, dtype = np.float64)
    if shape is not None and array.shape != tuple(shape):
        raise InvertShapeError("%s has shape %s, expected %s" % (name, array.shape, tuple(shape)))
    if not np.all(np.isfinite(array)):
        raise InvertNumericError("%s contains non-finite values" % name)
    return array

#------------------------------------------------------------------------
# Patch extraction shared by Conv2D and TransposedConv2D.
#------------------------------------------------------------------------

def _im2col(x, kernel, stride):
    """ (N, C, H, W) -> (N, C*k*k, Ho*Wo), for an already padded input. """
    n, c = x.shape[:2]
    windows = sliding_window_view(x, (kernel, kernel), axis = (2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2:4]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kernel * kernel, ho * wo)
    return cols, (ho, wo)

def _col2im(cols, shape, kernel, stride, positions):
    """ Scatter-add (N, C*k*k, Ho*Wo) columns into a zero tensor of shape (N, C, H, W). """
    n, c = shape[:2]
    ho, wo = positions
    cols = cols.reshape(n, c, kernel, kernel, ho, wo)
    x = np.zeros(shape)
    for i in range(kernel):
        for j in range(kernel):
            x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return x

def _channel_axes(x):
    """ All axes except the channel axis (1). """
    return (0,) + tuple(range(2, x.ndim))

def _channel_view(v, ndim):
    """ Reshape a per-channel vector to broadcast against axis 1. """
    return v.reshape((1, -1) + (1,) * (ndim - 2))


class Layer(object):
    """ Base class for all layer kinds.

    Properties:
    index -- position within its Stack (set on validation)
    in_shape -- per-sample input shape
    out_shape -- per-sample output shape
    """

    kind = None

    def __init__(self):
        self.index = None
        self.in_shape = None
        self.out_shape = None

    def __str__(self):
        if self.index is None:
            return self.kind
        return "%s (%d)" % (self.kind, self.index)

    def infer_shape(self, in_shape):
        return tuple(in_shape)

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(self.infer_shape(self.in_shape))
        return self.out_shape

    def param_shapes(self):
        return OrderedDict()

    def param_name(self, suffix):
        return "%s%d.%s" % (self.kind.lower(), self.index, suffix)

    def config(self):
        return {}

    def to_dict(self):
        rv = { "kind" : self.kind }
        rv.update(self.config())
        return rv


class Dense(Layer):
    """ Fully connected layer: y = W x + b, W of shape (out, in). """

    kind = "Dense"

    def __init__(self, in_features, out_features):
        Layer.__init__(self)
        self.in_features = int(in_features)
        self.out_features = int(out_features)

    def infer_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise InvertShapeError("expects input (%d,), got %s" % (self.in_features, in_shape))
        return (self.out_features,)

    def param_shapes(self):
        return OrderedDict([ ("weight", (self.out_features, self.in_features)),
                             ("bias", (self.out_features,)) ])

    def config(self):
        return { "in_features" : self.in_features, "out_features" : self.out_features }

    def forward(self, p, x, tape):
        return x @ p["weight"].T + p["bias"], x

    def backward(self, p, x, g, grads, tape):
        if grads is not None:
            grads["weight"] = g.T @ x
            grads["bias"] = g.sum(axis = 0)
        return g @ p["weight"]


class TransposedConv2D(Layer):
    """ Fractionally-strided convolution. Weight shape is (in, out, k, k);
    output extent is (H - 1) * stride - 2 * padding + kernel.

    expected -- optional (C, H, W) the output must match
    """

    kind = "TransposedConv2D"

    def __init__(self, in_channels, out_channels, kernel = 4, stride = 2, padding = 1, expected = None):
        Layer.__init__(self)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)
        self.expected = tuple(expected) if expected is not None else None

    def infer_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise InvertShapeError("expects (%d, H, W) input, got %s" % (self.in_channels, in_shape))
        h = (in_shape[1] - 1) * self.stride - 2 * self.padding + self.kernel
        w = (in_shape[2] - 1) * self.stride - 2 * self.padding + self.kernel
        if h < 1 or w < 1:
            raise InvertShapeError("produces empty output from %s" % (in_shape,))
        out_shape = (self.out_channels, h, w)
        if self.expected is not None and self.expected != out_shape:
            raise InvertShapeError("produces %s, expected %s" % (out_shape, self.expected))
        return out_shape

    def param_shapes(self):
        k = self.kernel
        return OrderedDict([ ("weight", (self.in_channels, self.out_channels, k, k)),
                             ("bias", (self.out_channels,)) ])

    def config(self):
        return { "in_channels" : self.in_channels, "out_channels" : self.out_channels,
                 "kernel" : self.kernel, "stride" : self.stride, "padding" : self.padding,
                 "expected" : list(self.expected) if self.expected else None }

    def _full_shape(self, n):
        _, h, w = self.in_shape
        return (n, self.out_channels, (h - 1) * self.stride + self.kernel, (w - 1) * self.stride + self.kernel)

    def forward(self, p, x, tape):
        n = x.shape[0]
        _, h, w = self.in_shape
        _, ho, wo = self.out_shape
        pad = self.padding
        x_mat = x.reshape(n, self.in_channels, h * w)
        w_mat = p["weight"].reshape(self.in_channels, -1)
        cols = np.matmul(w_mat.T, x_mat)
        full = _col2im(cols, self._full_shape(n), self.kernel, self.stride, (h, w))
        y = full[:, :, pad:pad + ho, pad:pad + wo] + _channel_view(p["bias"], 4)
        return y, x_mat

    def backward(self, p, x_mat, g, grads, tape):
        n = g.shape[0]
        _, h, w = self.in_shape
        _, ho, wo = self.out_shape
        pad = self.padding
        g_full = np.zeros(self._full_shape(n))
        g_full[:, :, pad:pad + ho, pad:pad + wo] = g
        g_cols, _ = _im2col(g_full, self.kernel, self.stride)
        w_mat = p["weight"].reshape(self.in_channels, -1)
        if grads is not None:
            grads["weight"] = np.tensordot(x_mat, g_cols, axes = ([0, 2], [0, 2])).reshape(p["weight"].shape)
            grads["bias"] = g.sum(axis = (0, 2, 3))
        return np.matmul(w_mat, g_cols).reshape((n,) + self.in_shape)


class Conv2D(Layer):
    """ Strided convolution with zero padding. Weight shape is (out, in, k, k). """

    kind = "Conv2D"

    def __init__(self, in_channels, out_channels, kernel = 4, stride = 2, padding = 1):
        Layer.__init__(self)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)

    def infer_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise InvertShapeError("expects (%d, H, W) input, got %s" % (self.in_channels, in_shape))
        h = (in_shape[1] + 2 * self.padding - self.kernel) // self.stride + 1
        w = (in_shape[2] + 2 * self.padding - self.kernel) // self.stride + 1
        if h < 1 or w < 1:
            raise InvertShapeError("produces empty output from %s" % (in_shape,))
        return (self.out_channels, h, w)

    def param_shapes(self):
        k = self.kernel
        return OrderedDict([ ("weight", (self.out_channels, self.in_channels, k, k)),
                             ("bias", (self.out_channels,)) ])

    def config(self):
        return { "in_channels" : self.in_channels, "out_channels" : self.out_channels,
                 "kernel" : self.kernel, "stride" : self.stride, "padding" : self.padding }

    def forward(self, p, x, tape):
        pad = self.padding
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols, _ = _im2col(padded, self.kernel, self.stride)
        w_mat = p["weight"].reshape(self.out_channels, -1)
        y = np.matmul(w_mat, cols) + p["bias"][None, :, None]
        return y.reshape((x.shape[0],) + self.out_shape), (cols, padded.shape)

    def backward(self, p, cache, g, grads, tape):
        cols, padded_shape = cache
        n = g.shape[0]
        _, h, w = self.in_shape
        _, ho, wo = self.out_shape
        pad = self.padding
        g_mat = g.reshape(n, self.out_channels, ho * wo)
        w_mat = p["weight"].reshape(self.out_channels, -1)
        if grads is not None:
            grads["weight"] = np.tensordot(g_mat, cols, axes = ([0, 2], [0, 2])).reshape(p["weight"].shape)
            grads["bias"] = g.sum(axis = (0, 2, 3))
        g_padded = _col2im(np.matmul(w_mat.T, g_mat), padded_shape, self.kernel, self.stride, (ho, wo))
        return g_padded[:, :, pad:pad + h, pad:pad + w]


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, p, x, tape):
        return np.maximum(x, 0.0), x

    def backward(self, p, x, g, grads, tape):
        return g * (x > 0)


class LeakyReLU(Layer):
    kind = "LeakyReLU"

    def __init__(self, slope = 0.2):
        Layer.__init__(self)
        self.slope = float(slope)

    def config(self):
        return { "slope" : self.slope }

    def forward(self, p, x, tape):
        return np.where(x > 0, x, self.slope * x), x

    def backward(self, p, x, g, grads, tape):
        return g * np.where(x > 0, 1.0, self.slope)


class Tanh(Layer):
    kind = "Tanh"

    def forward(self, p, x, tape):
        y = np.tanh(x)
        return y, y

    def backward(self, p, y, g, grads, tape):
        return g * (1.0 - y * y)


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, p, x, tape):
        #------------------------------------------------------------------------
        # tanh form avoids overflow in exp() for large |x|.
        #------------------------------------------------------------------------
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, p, y, g, grads, tape):
        return g * y * (1.0 - y)


class Reshape(Layer):
    kind = "Reshape"

    def __init__(self, target):
        Layer.__init__(self)
        self.target = tuple(int(n) for n in target)

    def infer_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.target)):
            raise InvertShapeError("cannot reshape %s to %s" % (in_shape, self.target))
        return self.target

    def config(self):
        return { "target" : list(self.target) }

    def forward(self, p, x, tape):
        return x.reshape((x.shape[0],) + self.target), None

    def backward(self, p, cache, g, grads, tape):
        return g.reshape((g.shape[0],) + self.in_shape)


class ConcatChannels(Layer):
    """ Junction joining the side input onto the running activation along the
    channel axis. All trailing extents must agree.

    side_shape -- per-sample shape of the side input
    """

    kind = "ConcatChannels"

    def __init__(self, side_shape):
        Layer.__init__(self)
        self.side_shape = tuple(int(n) for n in side_shape)

    def infer_shape(self, in_shape):
        if len(in_shape) != len(self.side_shape) or in_shape[1:] != self.side_shape[1:]:
            raise InvertShapeError("cannot join %s with side input %s" % (in_shape, self.side_shape))
        return (in_shape[0] + self.side_shape[0],) + tuple(in_shape[1:])

    def config(self):
        return { "side_shape" : list(self.side_shape) }

    def forward(self, p, x, tape):
        return np.concatenate([ x, tape.side ], axis = 1), None

    def backward(self, p, cache, g, grads, tape):
        channels = self.in_shape[0]
        tape.junction_grad = g
        tape.side_grad = g[:, channels:]
        return g[:, :channels]


class AffineNorm(Layer):
    """ Per-channel scale and shift over axis 1.

    In inference mode this is y = scale * x + shift, with any normalization
    statistics already folded in. With batch_stats, the input is first
    normalized by its batch mean and variance, which are recorded in the tape.
    """

    kind = "AffineNorm"

    def __init__(self, channels, eps = 1e-5):
        Layer.__init__(self)
        self.channels = int(channels)
        self.eps = float(eps)

    def infer_shape(self, in_shape):
        if not in_shape or in_shape[0] != self.channels:
            raise InvertShapeError("expects %d channels, got %s" % (self.channels, in_shape))
        return in_shape

    def param_shapes(self):
        return OrderedDict([ ("scale", (self.channels,)), ("shift", (self.channels,)) ])

    def config(self):
        return { "channels" : self.channels, "eps" : self.eps }

    def forward(self, p, x, tape):
        scale = _channel_view(p["scale"], x.ndim)
        shift = _channel_view(p["shift"], x.ndim)
        if not tape.batch_stats:
            return scale * x + shift, x

        axes = _channel_axes(x)
        mean = x.mean(axis = axes)
        var = x.var(axis = axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - _channel_view(mean, x.ndim)) * _channel_view(inv_std, x.ndim)
        tape.stats[self.index] = (mean, var)
        return scale * x_hat + shift, (x_hat, inv_std)

    def backward(self, p, cache, g, grads, tape):
        axes = _channel_axes(g)
        scale = _channel_view(p["scale"], g.ndim)
        if not tape.batch_stats:
            x = cache
            if grads is not None:
                grads["scale"] = (g * x).sum(axis = axes)
                grads["shift"] = g.sum(axis = axes)
            return g * scale

        x_hat, inv_std = cache
        if grads is not None:
            grads["scale"] = (g * x_hat).sum(axis = axes)
            grads["shift"] = g.sum(axis = axes)
        count = g.size // self.channels
        g_hat = g * scale
        sum_g = _channel_view(g_hat.sum(axis = axes), g.ndim)
        sum_gx = _channel_view((g_hat * x_hat).sum(axis = axes), g.ndim)
        return _channel_view(inv_std, g.ndim) * (g_hat - sum_g / count - x_hat * sum_gx / count)


LAYER_KINDS = OrderedDict((cls.kind, cls) for cls in [
    Dense, TransposedConv2D, Conv2D, ReLU, LeakyReLU, Tanh, Sigmoid, Reshape, ConcatChannels, AffineNorm
])

def layer_from_dict(d):
    """ Inverse of Layer.to_dict(). """
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in LAYER_KINDS:
        raise InvertValueError("unknown layer kind: %s" % kind)
    try:
        return LAYER_KINDS[kind](**d)
    except TypeError as e:
        raise InvertValueError("bad arguments for %s layer: %s" % (kind, e))


class Stack(LoggingObject):
    """ A validated straight-line layer stack.

    Properties:
    layers -- list of Layer objects
    in_shape -- per-sample input shape
    side_shape -- per-sample side input shape, or None without a junction
    out_shape -- per-sample output shape
    """

    def __init__(self, layers, in_shape):
        self.layers = list(layers)
        self.in_shape = tuple(int(n) for n in in_shape)
        self.side_shape = None
        self.out_shape = self.validate()

    def __str__(self):
        return "Stack (%d layers, %s -> %s)" % (len(self.layers), self.in_shape, self.out_shape)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def validate(self):
        """ Propagate shapes through every layer, raising InvertShapeError
        naming the first offending layer. """
        if not self.layers:
            raise InvertShapeError("empty layer stack")
        shape = self.in_shape
        self.side_shape = None
        for index, layer in enumerate(self.layers):
            layer.index = index
            if isinstance(layer, ConcatChannels):
                if self.side_shape is not None:
                    raise InvertShapeError("layer %d (%s): only one junction is allowed" % (index, layer.kind))
                self.side_shape = layer.side_shape
            try:
                shape = layer.build(shape)
            except InvertShapeError as e:
                raise InvertShapeError("layer %d (%s): %s" % (index, layer.kind, e))
        return shape

    def param_shapes(self):
        """ Ordered mapping of parameter name -> shape, in stack order. """
        rv = OrderedDict()
        for layer in self.layers:
            for suffix, shape in layer.param_shapes().items():
                rv[layer.param_name(suffix)] = tuple(shape)
        return rv

    def to_list(self):
        return [ layer.to_dict() for layer in self.layers ]

    @classmethod
    def from_list(cls, layers, in_shape):
        return cls([ layer_from_dict(d) for d in layers ], in_shape)


class ParameterSet(object):
    """ Ordered collection of uniquely-named float64 tensors. """

    def __init__(self, items = ()):
        self._tensors = OrderedDict()
        for name, value in items:
            if name in self._tensors:
                raise InvertValueError("duplicate parameter name: %s" % name)
            self._tensors[name] = as_tensor(value, name = name)

    def __str__(self):
        return "ParameterSet (%d tensors, %d values)" % (len(self._tensors), self.size)

    def __len__(self):
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    def __contains__(self, name):
        return name in self._tensors

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, value):
        if name not in self._tensors:
            raise KeyError(name)
        self._tensors[name] = value

    def __eq__(self, other):
        """ Bitwise equality: same names, order, shapes and values. """
        if not isinstance(other, ParameterSet) or list(self) != list(other):
            return False
        return all(self[name].shape == other[name].shape and
                   np.array_equal(self[name], other[name]) for name in self)

    def __ne__(self, other):
        return not self == other

    @property
    def size(self):
        return int(sum(t.size for t in self._tensors.values()))

    def names(self):
        return list(self._tensors)

    def items(self):
        return list(self._tensors.items())

    def copy(self):
        return ParameterSet((name, value.copy()) for name, value in self._tensors.items())

    def zeros_like(self):
        return ParameterSet((name, np.zeros_like(value)) for name, value in self._tensors.items())

    def layer(self, layer):
        """ Return { suffix : tensor } for one layer. """
        return { suffix : self._tensors[layer.param_name(suffix)] for suffix in layer.param_shapes() }

    def check(self, stack):
        """ Raise unless names and shapes exactly match the stack. """
        expected = stack.param_shapes()
        if list(expected) != list(self._tensors):
            missing = [ n for n in expected if n not in self._tensors ]
            extra = [ n for n in self._tensors if n not in expected ]
            raise InvertShapeError("parameters do not match stack (missing %s, unexpected %s)" % (missing, extra))
        for name, shape in expected.items():
            if self._tensors[name].shape != shape:
                raise InvertShapeError("parameter %s has shape %s, expected %s" % (name, self._tensors[name].shape, shape))

    @classmethod
    def zeros(cls, stack):
        return cls((name, np.zeros(shape)) for name, shape in stack.param_shapes().items())


def init_params(stack, rng, std = 0.02):
    """ Scaled normal initialization: weights N(0, std^2), biases and shifts
    zero, AffineNorm scales N(1, std^2). Draws in stack order. """
    items = []
    for name, shape in stack.param_shapes().items():
        suffix = name.rsplit(".", 1)[1]
        if suffix == "weight":
            value = rng.normal(0.0, std, size = shape)
        elif suffix == "scale":
            value = rng.normal(1.0, std, size = shape)
        else:
            value = np.zeros(shape)
        items.append((name, value))
    return ParameterSet(items)


class Tape(object):
    """ Record of one forward evaluation, consumed by exactly one backward().

    Properties:
    stack, params -- what was evaluated
    batched -- whether the caller passed a batch
    batch_stats -- whether AffineNorm used batch statistics
    stats -- { layer index : (mean, var) } recorded under batch_stats
    consumed -- set once backward() has run
    """

    def __init__(self, stack, params, batched, side, batch_stats):
        self.stack = stack
        self.params = params
        self.batched = batched
        self.side = side
        self.batch_stats = batch_stats
        self.caches = []
        self.stats = {}
        self.out_shape = None
        self.consumed = False
        self.side_grad = None
        self.junction_grad = None


class Gradients(object):
    """ Result of backward().

    Properties:
    input -- gradient with respect to the primary input
    side -- gradient with respect to the side input (or None)
    junction -- raw gradient at the ConcatChannels output (or None)
    params -- ParameterSet of parameter gradients (or None if skipped)
    """

    def __init__(self, input, side, junction, params):
        self.input = input
        self.side = side
        self.junction = junction
        self.params = params


def _is_batched(shape, expected, name):
    shape = tuple(shape)
    if shape == expected:
        return False
    if len(shape) == len(expected) + 1 and shape[1:] == expected:
        return True
    raise InvertShapeError("%s has shape %s, expected %s or (N,) + %s" % (name, shape, expected, expected))

def forward(stack, params, x, side = None, batch_stats = False):
    """ Evaluate the stack on x (and the side input, if the stack has a
    junction). Returns (output, tape). Deterministic. """
    x = as_tensor(x, name = "input")
    batched = _is_batched(x.shape, stack.in_shape, "input")
    if not batched:
        x = x[None]

    if stack.side_shape is not None:
        if side is None:
            raise InvertShapeError("stack expects a side input of shape %s" % (stack.side_shape,))
        side = as_tensor(side, name = "side input")
        if _is_batched(side.shape, stack.side_shape, "side input") != batched:
            raise InvertShapeError("input and side input disagree on batching")
        if not batched:
            side = side[None]
        if side.shape[0] != x.shape[0]:
            raise InvertShapeError("input batch %d and side batch %d differ" % (x.shape[0], side.shape[0]))
    elif side is not None:
        raise InvertShapeError("stack has no junction but a side input was given")

    tape = Tape(stack, params, batched, side, batch_stats)
    for layer in stack.layers:
        x, cache = layer.forward(params.layer(layer), x, tape)
        if not np.all(np.isfinite(x)):
            raise InvertNumericError("non-finite output from layer %d (%s)" % (layer.index, layer.kind),
                                     layer = layer.index)
        tape.caches.append(cache)

    tape.out_shape = x.shape if batched else x.shape[1:]
    return (x if batched else x[0]), tape

def backward(tape, upstream, param_grads = True):
    """ Reverse pass for the contraction <output, upstream>. Consumes the tape. """
    if tape.consumed:
        raise InvertInvalidOperationException("tape has already been consumed by a backward pass")
    g = as_tensor(upstream, name = "upstream gradient")
    if g.shape != tuple(tape.out_shape):
        raise InvertShapeError("upstream gradient has shape %s, expected %s" % (g.shape, tuple(tape.out_shape)))
    tape.consumed = True
    if not tape.batched:
        g = g[None]

    stack = tape.stack
    collected = {}
    for layer, cache in zip(reversed(stack.layers), reversed(tape.caches)):
        grads = {} if param_grads else None
        g = layer.backward(tape.params.layer(layer), cache, g, grads, tape)
        if grads:
            for suffix, value in grads.items():
                collected[layer.param_name(suffix)] = value

    params = None
    if param_grads:
        params = ParameterSet((name, collected[name]) for name in stack.param_shapes())

    side, junction = tape.side_grad, tape.junction_grad
    if not tape.batched:
        g = g[0]
        side = side[0] if side is not None else None
        junction = junction[0] if junction is not None else None
    tape.caches = None
    return Gradients(g, side, junction, params)

def finite_difference_gradient(f, x, h = 1e-5):
    """ Central-difference estimate of the gradient of scalar f at x. """
    if not h > 0:
        raise InvertValueError("step h must be positive, got %r" % h)
    x = np.array(x, dtype = np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        f_plus = float(f(x.copy()))
        flat[i] = old - h
        f_minus = float(f(x.copy()))
        flat[i] = old
        grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
