"""

invert.generator
~~~~~~~~~~~~~~~~

The conditional generator G(z, y): a layer stack whose first layer joins the
conditional vector y onto the latent vector z, ending in Tanh so that images
lie in [-1, 1]. Also checkpoint persistence in the pyinvert binary format
(see docs/formats.md).

"""

import json
import struct

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .diffnet import Stack, ParameterSet, ConcatChannels, Dense, Reshape, TransposedConv2D, \
                     AffineNorm, ReLU, Tanh, forward, backward, init_params, as_tensor, layer_from_dict
from .exceptions import InvertValueError, InvertShapeError, InvertConfigError, CheckpointFormatError, \
                        CheckpointVersionError, CheckpointTruncatedError
from .object import LoggingObject

HEADER_END = b"\n<>\n"
PAYLOAD_DTYPES = { "<f8" : np.dtype("<f8"), "<f4" : np.dtype("<f4") }

class GeneratorSpec(LoggingObject):
    """ Declarative description of a conditional generator.

    Properties:
    d_z -- latent dimension
    d_y -- conditional dimension
    image_shape -- (channels, height, width)
    layers -- list of Layer objects, starting with the z/y junction
    bounded -- if False, the final Tanh is not required (analysis generators only)
    """

    def __init__(self, d_z, d_y, image_shape, layers, bounded = True):
        self.d_z = int(d_z)
        self.d_y = int(d_y)
        self.image_shape = tuple(int(n) for n in image_shape)
        self.layers = list(layers)
        self.bounded = bool(bounded)

    def __str__(self):
        return "GeneratorSpec (d_z=%d, d_y=%d, image %s)" % (self.d_z, self.d_y, "x".join(str(n) for n in self.image_shape))

    def __eq__(self, other):
        return isinstance(other, GeneratorSpec) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    @property
    def d_I(self):
        return int(np.prod(self.image_shape))

    def validate(self):
        """ Check invariants and return the validated Stack. """
        if self.d_z < 1:
            raise InvertValueError("d_z must be at least 1, got %d" % self.d_z)
        if self.d_y < 2:
            raise InvertValueError("d_y must be at least 2, got %d" % self.d_y)
        if len(self.image_shape) != 3:
            raise InvertValueError("image_shape must be (channels, height, width), got %s" % (self.image_shape,))
        if not self.layers or not isinstance(self.layers[0], ConcatChannels):
            raise InvertValueError("first layer must join y onto z (ConcatChannels)")
        if self.layers[0].side_shape != (self.d_y,):
            raise InvertValueError("junction side shape %s does not match d_y=%d" % (self.layers[0].side_shape, self.d_y))
        if self.bounded and not isinstance(self.layers[-1], Tanh):
            raise InvertValueError("final layer must be Tanh so images lie in [-1, 1]")

        stack = Stack(self.layers, (self.d_z,))
        if stack.out_shape != self.image_shape:
            raise InvertShapeError("stack produces %s, spec declares image %s" % (stack.out_shape, self.image_shape))
        return stack

    def to_dict(self):
        return { "d_z" : self.d_z,
                 "d_y" : self.d_y,
                 "image_shape" : list(self.image_shape),
                 "bounded" : self.bounded,
                 "layers" : [ layer.to_dict() for layer in self.layers ] }

    @classmethod
    def from_dict(cls, d):
        known = { "d_z", "d_y", "image_shape", "layers", "bounded" }
        unknown = set(d) - known
        if unknown:
            raise InvertConfigError("unknown generator spec keys: %s" % sorted(unknown))
        try:
            layers = [ layer_from_dict(layer) for layer in d["layers"] ]
            return cls(d["d_z"], d["d_y"], d["image_shape"], layers, d.get("bounded", True))
        except KeyError as e:
            raise InvertConfigError("generator spec is missing %s" % e)

    @classmethod
    def dcgan(cls, d_z = 100, d_y = 10, image_shape = (1, 32, 32), width = 256):
        """ The standard upsampling generator: concat(z, y) -> Dense -> Reshape(width x 4 x 4)
        -> [TransposedConv2D + AffineNorm + ReLU] per doubling -> TransposedConv2D -> Tanh.

        width halves at every stage; image height and width must be equal
        powers of two, at least 8. """
        channels, height, w = (int(n) for n in image_shape)
        if height != w or height < 8 or height & (height - 1):
            raise InvertValueError("image size must be a square power of two >= 8, got %dx%d" % (height, w))
        stages = int(np.log2(height // 4))
        if width < 2 ** (stages - 1):
            raise InvertValueError("width %d too small for %d upsampling stages" % (width, stages))

        layers = [ ConcatChannels((d_y,)),
                   Dense(d_z + d_y, width * 4 * 4),
                   Reshape((width, 4, 4)) ]
        size = 4
        c = width
        for stage in range(stages):
            last = stage == stages - 1
            out = channels if last else c // 2
            size *= 2
            layers.append(TransposedConv2D(c, out, kernel = 4, stride = 2, padding = 1, expected = (out, size, size)))
            if not last:
                layers += [ AffineNorm(out), ReLU() ]
            c = out
        layers.append(Tanh())
        return cls(d_z, d_y, image_shape, layers)

    @classmethod
    def linear(cls, d_z, d_y, image_shape):
        """ G(z, y) = A concat(z, y) + b, with no output squashing. """
        image_shape = tuple(image_shape)
        layers = [ ConcatChannels((d_y,)),
                   Dense(d_z + d_y, int(np.prod(image_shape))),
                   Reshape(image_shape) ]
        return cls(d_z, d_y, image_shape, layers, bounded = False)


class GeneratorCheckpoint(LoggingObject):
    """ A generator spec together with its weights.

    Properties:
    spec -- GeneratorSpec
    params -- ParameterSet
    metadata -- dict with "seed", "provenance" and "format_version"
    stack -- the validated Stack for spec
    """

    def __init__(self, spec, params, metadata = None):
        self.spec = spec
        self.stack = spec.validate()
        params.check(self.stack)
        self.params = params
        self.metadata = { "seed" : None, "provenance" : "", "format_version" : CHECKPOINT_VERSION }
        if metadata:
            self.metadata.update(metadata)

    def __str__(self):
        return "Generator (d_z=%d, d_y=%d, %d params)" % (self.spec.d_z, self.spec.d_y, self.params.size)

    def __eq__(self, other):
        return isinstance(other, GeneratorCheckpoint) and self.spec == other.spec and \
               self.params == other.params and self.metadata == other.metadata

    def __ne__(self, other):
        return not self == other

    @property
    def d_z(self):
        return self.spec.d_z

    @property
    def d_y(self):
        return self.spec.d_y

    @property
    def image_shape(self):
        return self.spec.image_shape

    def _check_inputs(self, z, y):
        z = as_tensor(z, name = "z")
        y = as_tensor(y, name = "y")
        if z.ndim not in (1, 2) or z.shape[-1] != self.d_z:
            raise InvertShapeError("z must have %d entries, got shape %s" % (self.d_z, z.shape))
        if y.ndim != z.ndim or y.shape[-1] != self.d_y:
            raise InvertShapeError("y must have %d entries, got shape %s" % (self.d_y, y.shape))
        return z, y

    def forward(self, z, y):
        """ Return (G(z, y), tape). """
        z, y = self._check_inputs(z, y)
        return forward(self.stack, self.params, z, side = y)

    def backward(self, tape, upstream):
        """ Return (dz, dy) for the contraction <G(z, y), upstream>. """
        grads = backward(tape, upstream, param_grads = False)
        return grads.input, grads.side


def build_generator(spec, init_seed, std = 0.02, provenance = "random init"):
    """ Validate spec and initialize weights from a seeded PRNG. """
    stack = spec.validate()
    rng = np.random.default_rng(init_seed)
    params = init_params(stack, rng, std = std)
    return GeneratorCheckpoint(spec, params, { "seed" : int(init_seed), "provenance" : provenance })

def generate(ckpt, z, y):
    """ G(z, y). y may be any real vector, not only one-hot. """
    image, _ = ckpt.forward(z, y)
    return image

def input_gradients(ckpt, z, y, upstream):
    """ Exact gradients of <G(z, y), upstream> with respect to z and y. """
    _, tape = ckpt.forward(z, y)
    return ckpt.backward(tape, upstream)

def sample_latent(rng, n, d_z):
    """ n latent vectors drawn from U(-1, 1). """
    return rng.uniform(-1.0, 1.0, size = (n, d_z))

def one_hot(labels, d_y):
    labels = np.asarray(labels, dtype = int)
    if np.any(labels < 0) or np.any(labels >= d_y):
        raise InvertValueError("labels must lie in [0, %d)" % d_y)
    rv = np.zeros(labels.shape + (d_y,))
    np.put_along_axis(rv, labels[..., None], 1.0, axis = -1)
    return rv

#------------------------------------------------------------------------
# Checkpoint persistence
#------------------------------------------------------------------------

def save_checkpoint(ckpt, path):
    """ Write a header of "key: json" lines terminated by "<>", then each
    parameter as an 8-byte little-endian length followed by <f8 data. """
    lines = [ CHECKPOINT_MAGIC,
              "version: %d" % CHECKPOINT_VERSION,
              "metadata: %s" % json.dumps(ckpt.metadata, sort_keys = True),
              "dtype: %s" % json.dumps("<f8"),
              "spec: %s" % json.dumps(ckpt.spec.to_dict(), sort_keys = True) ]
    for name, value in ckpt.params.items():
        lines.append("param: %s" % json.dumps([ name, list(value.shape) ]))

    with open(path, "wb") as fd:
        fd.write("\n".join(lines).encode("utf-8"))
        fd.write(HEADER_END)
        for name, value in ckpt.params.items():
            data = np.ascontiguousarray(value, dtype = "<f8").tobytes()
            fd.write(struct.pack("<Q", len(data)))
            fd.write(data)
    ckpt.log_info("saved checkpoint to %s", path)

def _parse_header(text, path):
    lines = text.split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a pyinvert checkpoint (bad magic)", path)

    fields = {}
    params = []
    for line in lines[1:]:
        key, sep, value = line.partition(": ")
        if not sep:
            raise CheckpointFormatError("corrupt header line %r" % line, path)
        if key == "version":
            fields[key] = value
            continue
        try:
            value = json.loads(value)
        except ValueError:
            raise CheckpointFormatError("corrupt header value for %s" % key, path)
        if key == "param":
            params.append(value)
        else:
            fields[key] = value
    return fields, params

def load_checkpoint(path):
    """ Read a checkpoint written by save_checkpoint(). Distinguishes a bad
    magic string, a version mismatch and a truncated payload. """
    with open(path, "rb") as fd:
        data = fd.read()

    first_line = data.split(b"\n", 1)[0]
    if first_line != CHECKPOINT_MAGIC.encode("ascii"):
        raise CheckpointFormatError("not a pyinvert checkpoint (bad magic)", path)
    end = data.find(HEADER_END)
    if end < 0:
        raise CheckpointTruncatedError("truncated header", path)
    try:
        text = data[:end].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointFormatError("header is not valid UTF-8", path)

    fields, param_entries = _parse_header(text, path)
    try:
        version = int(fields.get("version"))
    except (TypeError, ValueError):
        raise CheckpointFormatError("missing or invalid version", path)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError("format version %d, this build reads %d" % (version, CHECKPOINT_VERSION), path)

    dtype = PAYLOAD_DTYPES.get(fields.get("dtype", "<f8"))
    if dtype is None:
        raise CheckpointFormatError("unsupported payload dtype %r" % fields.get("dtype"), path)
    try:
        spec = GeneratorSpec.from_dict(fields["spec"])
    except (KeyError, InvertConfigError, InvertValueError, TypeError) as e:
        raise CheckpointFormatError("corrupt spec in header (%s)" % e, path)

    offset = end + len(HEADER_END)
    items = []
    for entry in param_entries:
        try:
            name, shape = entry
            shape = tuple(int(n) for n in shape)
        except (TypeError, ValueError):
            raise CheckpointFormatError("corrupt parameter entry %r" % (entry,), path)
        if offset + 8 > len(data):
            raise CheckpointTruncatedError("truncated payload at parameter %s" % name, path)
        (nbytes,) = struct.unpack("<Q", data[offset:offset + 8])
        offset += 8
        if nbytes != int(np.prod(shape)) * dtype.itemsize:
            raise CheckpointFormatError("parameter %s declares %d bytes for shape %s" % (name, nbytes, shape), path)
        if offset + nbytes > len(data):
            raise CheckpointTruncatedError("truncated payload at parameter %s" % name, path)
        value = np.frombuffer(data[offset:offset + nbytes], dtype = dtype).astype(np.float64).reshape(shape)
        offset += nbytes
        items.append((name, value))
    if offset != len(data):
        raise CheckpointFormatError("%d unexpected trailing bytes" % (len(data) - offset), path)

    try:
        params = ParameterSet(items)
        metadata = dict(fields.get("metadata") or {})
        metadata["format_version"] = version
        ckpt = GeneratorCheckpoint(spec, params, metadata)
    except (InvertValueError, InvertShapeError) as e:
        raise CheckpointFormatError("checkpoint is inconsistent with its spec (%s)" % e, path)
    ckpt.log_info("loaded checkpoint from %s", path)
    return ckpt
