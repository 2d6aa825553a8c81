"""

invert.dataset
~~~~~~~~~~~~~~

Labeled image sources:

 - procedural glyphs, a desk-scale stand-in for digit classes: class k
   renders a fixed arrangement of strokes, rings and discs, jittered in
   position, scale, rotation and stroke thickness;
 - IDX files (the MNIST distribution format), padded to 32x32;
 - the generated/real target split used by recovery experiments.

All pixels lie in [-1, 1].

"""

import gzip
import struct

import numpy as np

from .constants import PROVENANCE_GENERATED, PROVENANCE_REAL, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC
from .exceptions import InvertValueError, InvertConfigError, InvertIOError, IdxMagicError, \
                        IdxCountMismatchError, IdxTruncatedError
from .generator import generate, sample_latent, one_hot
from .images import tile, write_image
from .object import LoggingObject

class LabeledImage(object):
    """ An image with its ground-truth label.

    Properties:
    pixels -- (C, H, W) float64 array in [-1, 1]
    label -- integer class
    provenance -- PROVENANCE_GENERATED or PROVENANCE_REAL
    id -- unique string identifier
    z -- true latent vector, for generated images only
    """

    def __init__(self, pixels, label, provenance, id, z = None):
        self.pixels = np.asarray(pixels, dtype = np.float64)
        self.label = int(label)
        self.provenance = provenance
        self.id = id
        self.z = None if z is None else np.asarray(z, dtype = np.float64)

    def __str__(self):
        return "LabeledImage (%s, label %d, %s)" % (self.id, self.label, self.provenance)

    def __repr__(self):
        return "<%s>" % self

    def validate(self, d_y = None):
        if self.provenance not in (PROVENANCE_GENERATED, PROVENANCE_REAL):
            raise InvertValueError("%s: unknown provenance %r" % (self.id, self.provenance))
        if not np.all(np.isfinite(self.pixels)) or self.pixels.min() < -1.0 or self.pixels.max() > 1.0:
            raise InvertValueError("%s: pixels outside [-1, 1]" % self.id)
        if self.label < 0 or (d_y is not None and self.label >= d_y):
            raise InvertValueError("%s: label %d out of range" % (self.id, self.label))
        return self


class GlyphConfig(object):
    """ Parameters of the procedural glyph dataset.

    Properties:
    classes -- number of classes (must equal d_y of the paired generator)
    image_shape -- (channels, height, width)
    shift -- maximum translation, in pixels
    rotation -- maximum rotation, in degrees
    scale -- (min, max) size factor
    thickness -- (min, max) stroke thickness, in pixels
    seed -- default seed for synth_glyphs
    """

    FIELDS = [ "classes", "image_shape", "shift", "rotation", "scale", "thickness", "seed" ]

    def __init__(self, classes = 10, image_shape = (1, 32, 32), shift = 1.5, rotation = 8.0,
                 scale = (0.9, 1.1), thickness = (3.0, 4.5), seed = 0):
        self.classes = int(classes)
        self.image_shape = tuple(int(n) for n in image_shape)
        self.shift = float(shift)
        self.rotation = float(rotation)
        self.scale = tuple(float(n) for n in scale)
        self.thickness = tuple(float(n) for n in thickness)
        self.seed = int(seed)

    def __str__(self):
        return "GlyphConfig (%d classes, %s)" % (self.classes, "x".join(str(n) for n in self.image_shape))

    def validate(self):
        if self.classes < 2:
            raise InvertValueError("glyph datasets need at least 2 classes")
        if len(self.image_shape) != 3 or self.image_shape[0] not in (1, 3) or min(self.image_shape[1:]) < 8:
            raise InvertValueError("image_shape must be (1 or 3, H >= 8, W >= 8), got %s" % (self.image_shape,))
        if self.shift < 0 or self.rotation < 0:
            raise InvertValueError("jitter ranges must be non-negative")
        for name in ("scale", "thickness"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise InvertValueError("%s range must satisfy 0 < min <= max" % name)
        return self

    def to_dict(self):
        return { "classes" : self.classes, "image_shape" : list(self.image_shape),
                 "shift" : self.shift, "rotation" : self.rotation, "scale" : list(self.scale),
                 "thickness" : list(self.thickness), "seed" : self.seed }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.FIELDS)
        if unknown:
            raise InvertConfigError("unknown glyph config keys: %s" % sorted(unknown))
        return cls(**d).validate()

#------------------------------------------------------------------------
# Glyph families, in coordinates where the canvas spans [-1, 1]
# (u rightwards, v downwards).
#------------------------------------------------------------------------

def _box(r):
    return [ ("segment", -r, -r, r, -r), ("segment", r, -r, r, r),
             ("segment", r, r, -r, r), ("segment", -r, r, -r, -r) ]

GLYPH_FAMILIES = [
    [ ("ring", 0.0, 0.0, 0.55) ],
    [ ("segment", 0.0, -0.7, 0.0, 0.7) ],
    [ ("segment", -0.7, 0.0, 0.7, 0.0) ],
    [ ("segment", -0.6, 0.6, 0.6, -0.6) ],
    [ ("segment", -0.6, -0.6, 0.6, 0.6) ],
    [ ("segment", 0.0, -0.7, 0.0, 0.7), ("segment", -0.7, 0.0, 0.7, 0.0) ],
    [ ("segment", -0.6, -0.6, 0.6, 0.6), ("segment", -0.6, 0.6, 0.6, -0.6) ],
    [ ("disc", 0.0, 0.0, 0.35) ],
    [ ("segment", -0.6, -0.35, 0.6, -0.35), ("segment", -0.6, 0.35, 0.6, 0.35) ],
    _box(0.5),
]

def glyph_family(label):
    """ Primitive arrangement for a class. Classes past the fixed table are
    stars with (label - 7) spokes, turned off the axes. """
    if label < len(GLYPH_FAMILIES):
        return GLYPH_FAMILIES[label]
    spokes = label - 7
    rv = []
    for n in range(spokes):
        angle = np.pi * (2 * n + 0.5) / spokes
        rv.append(("segment", 0.0, 0.0, 0.7 * np.sin(angle), -0.7 * np.cos(angle)))
    return rv

def _segment_distance(u, v, u0, v0, u1, v1):
    du, dv = u1 - u0, v1 - v0
    length2 = du * du + dv * dv
    t = np.clip(((u - u0) * du + (v - v0) * dv) / length2, 0.0, 1.0) if length2 > 0 else 0.0
    return np.hypot(u - (u0 + t * du), v - (v0 + t * dv))

def render_glyph(label, image_shape, angle = 0.0, scale = 1.0, offset = (0.0, 0.0), thickness = 2.0):
    """ Render one glyph with explicit jitter values. angle in degrees,
    offset and thickness in pixels. Returns (C, H, W) in [-1, 1]. """
    channels, height, width = image_shape
    pixel = 2.0 / min(height, width)
    v, u = np.meshgrid((np.arange(height) + 0.5) * 2.0 / height - 1.0,
                       (np.arange(width) + 0.5) * 2.0 / width - 1.0, indexing = "ij")

    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    du, dv = offset[0] * pixel, offset[1] * pixel
    def place(pu, pv):
        return (scale * (cos * pu - sin * pv) + du, scale * (sin * pu + cos * pv) + dv)

    distance = np.full((height, width), np.inf)
    for primitive in glyph_family(label):
        shape = primitive[0]
        if shape == "segment":
            u0, v0 = place(*primitive[1:3])
            u1, v1 = place(*primitive[3:5])
            d = _segment_distance(u, v, u0, v0, u1, v1)
        else:
            cu, cv = place(*primitive[1:3])
            radius = scale * primitive[3]
            d = np.hypot(u - cu, v - cv) - radius
            d = np.abs(d) if shape == "ring" else np.maximum(d, 0.0)
        distance = np.minimum(distance, d)

    #------------------------------------------------------------------------
    # Antialiased stroke: full ink within thickness / 2, one-pixel ramp.
    #------------------------------------------------------------------------
    ink = np.clip((thickness * pixel / 2.0 - distance) / pixel + 0.5, 0.0, 1.0)
    return np.repeat((2.0 * ink - 1.0)[None], channels, axis = 0)

def synth_glyphs(config, n_per_class, seed = None):
    """ n_per_class jittered glyphs of every class, class-major order.
    Deterministic for a fixed seed (config.seed if not given). """
    config.validate()
    if n_per_class < 1:
        raise InvertValueError("n_per_class must be at least 1, got %d" % n_per_class)
    rng = np.random.default_rng(config.seed if seed is None else seed)

    images = []
    for label in range(config.classes):
        for n in range(n_per_class):
            angle = rng.uniform(-config.rotation, config.rotation)
            scale = rng.uniform(*config.scale)
            offset = rng.uniform(-config.shift, config.shift, size = 2)
            thickness = rng.uniform(*config.thickness)
            pixels = render_glyph(label, config.image_shape, angle, scale, offset, thickness)
            images.append(LabeledImage(pixels, label, PROVENANCE_REAL, "glyph-%05d" % len(images)))
    return images


class NearestMeanClassifier(LoggingObject):
    """ Assigns an image to the class whose mean training image is nearest
    in pixel space. """

    def __init__(self):
        self.means = None

    def __str__(self):
        return "NearestMeanClassifier (%s classes)" % (len(self.means) if self.means is not None else "no")

    def fit(self, images):
        labels = np.array([ image.label for image in images ])
        pixels = np.stack([ image.pixels.reshape(-1) for image in images ])
        classes = int(labels.max()) + 1
        self.means = np.stack([ pixels[labels == k].mean(axis = 0) if np.any(labels == k)
                                else np.full(pixels.shape[1], np.inf) for k in range(classes) ])
        return self

    def predict(self, pixels):
        """ Labels for a single (C, H, W) image or a batch (N, C, H, W). """
        pixels = np.asarray(pixels, dtype = np.float64)
        single = pixels.ndim == 3
        flat = pixels.reshape(1 if single else pixels.shape[0], -1)
        distances = ((flat[:, None, :] - self.means[None, :, :]) ** 2).sum(axis = 2)
        labels = np.argmin(distances, axis = 1)
        return int(labels[0]) if single else labels

    def accuracy(self, images):
        pixels = np.stack([ image.pixels for image in images ])
        labels = np.array([ image.label for image in images ])
        return float(np.mean(self.predict(pixels) == labels))

#------------------------------------------------------------------------
# IDX (MNIST) reader
#------------------------------------------------------------------------

def _read_idx_file(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fd:
        return fd.read()

def read_idx(images_path, labels_path, limit = None, pad_to = 32):
    """ Parse an IDX image file (magic 0x00000803) and label file (magic
    0x00000801). Pixels are rescaled from [0, 255] to [-1, 1] and centered on
    a pad_to x pad_to canvas of -1. """
    images_data = _read_idx_file(images_path)
    labels_data = _read_idx_file(labels_path)

    if len(images_data) < 16:
        raise IdxTruncatedError("truncated image header", images_path)
    magic, count, rows, cols = struct.unpack(">IIII", images_data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise IdxMagicError("bad image magic 0x%08x" % magic, images_path)
    if len(labels_data) < 8:
        raise IdxTruncatedError("truncated label header", labels_path)
    label_magic, label_count = struct.unpack(">II", labels_data[:8])
    if label_magic != IDX_LABEL_MAGIC:
        raise IdxMagicError("bad label magic 0x%08x" % label_magic, labels_path)
    if label_count != count:
        raise IdxCountMismatchError("%d images but %d labels" % (count, label_count), labels_path)

    if len(images_data) < 16 + count * rows * cols:
        raise IdxTruncatedError("truncated pixel payload", images_path)
    if len(labels_data) < 8 + count:
        raise IdxTruncatedError("truncated label payload", labels_path)

    n = count if limit is None else min(count, int(limit))
    pixels = np.frombuffer(images_data, dtype = np.uint8, count = n * rows * cols, offset = 16)
    pixels = pixels.reshape(n, 1, rows, cols).astype(np.float64) / 127.5 - 1.0
    labels = np.frombuffer(labels_data, dtype = np.uint8, count = n, offset = 8)

    if pad_to is not None and (rows < pad_to or cols < pad_to):
        top, left = (pad_to - rows) // 2, (pad_to - cols) // 2
        pixels = np.pad(pixels, ((0, 0), (0, 0), (top, pad_to - rows - top), (left, pad_to - cols - left)),
                        constant_values = -1.0)

    return [ LabeledImage(pixels[i], labels[i], PROVENANCE_REAL, "idx-%05d" % i) for i in range(n) ]

#------------------------------------------------------------------------
# Splits
#------------------------------------------------------------------------

def _by_class(images):
    groups = {}
    for image in images:
        groups.setdefault(image.label, []).append(image)
    return groups

def holdout_split(dataset, fraction = 0.2, seed = 0):
    """ Stratified partition into (train, holdout); each keeps dataset order. """
    if not 0 < fraction < 1:
        raise InvertValueError("holdout fraction must lie in (0, 1), got %r" % fraction)
    rng = np.random.default_rng(seed)
    held = set()
    for label, group in sorted(_by_class(dataset).items()):
        order = rng.permutation(len(group))
        count = int(round(len(group) * fraction))
        held.update(group[i].id for i in order[:count])
    train = [ image for image in dataset if image.id not in held ]
    holdout = [ image for image in dataset if image.id in held ]
    return train, holdout

def generate_targets(ckpt, n, rng):
    """ n generated images G(z, y) carrying their true z, labels dealt
    round-robin over the classes. """
    labels = np.arange(n) % ckpt.d_y
    z = sample_latent(rng, n, ckpt.d_z)
    pixels = generate(ckpt, z, one_hot(labels, ckpt.d_y))
    return [ LabeledImage(pixels[i], labels[i], PROVENANCE_GENERATED, "gen-%05d" % i, z = z[i])
             for i in range(n) ]

def split_real_generated(ckpt, dataset, n, seed, exclude_ids = ()):
    """ Draw n generated targets G(z, y) with their true (z, y), and n real
    targets from dataset (which should be held out from training). Labels are
    dealt round-robin so both splits are balanced within one. """
    d_y = ckpt.d_y
    exclude_ids = set(exclude_ids)
    pool = [ image for image in dataset if image.id not in exclude_ids ]
    if n > len(pool):
        raise InvertValueError("n=%d exceeds holdout size %d" % (n, len(pool)))
    for image in pool:
        image.validate(d_y)

    rng = np.random.default_rng(seed)
    generated = generate_targets(ckpt, n, rng)

    groups = _by_class(pool)
    queues = { label : [ group[i] for i in rng.permutation(len(group)) ] for label, group in sorted(groups.items()) }
    real = []
    label = 0
    while len(real) < n:
        queue = queues.get(label % d_y)
        if queue:
            image = queue.pop(0)
            real.append(LabeledImage(image.pixels, image.label, PROVENANCE_REAL, image.id))
        label += 1
    return generated, real

#------------------------------------------------------------------------
# Persistence and previews
#------------------------------------------------------------------------

def save_dataset(images, path):
    """ Store images as a float64 .npz sidecar (bit-exact). """
    if not images:
        raise InvertValueError("refusing to save an empty dataset")
    d_z = max((image.z.size for image in images if image.z is not None), default = 0)
    z = np.zeros((len(images), d_z))
    has_z = np.zeros(len(images), dtype = bool)
    for i, image in enumerate(images):
        if image.z is not None:
            z[i] = image.z
            has_z[i] = True
    with open(path, "wb") as fd:
        np.savez(fd,
                 pixels = np.stack([ image.pixels for image in images ]),
                 labels = np.array([ image.label for image in images ], dtype = np.int64),
                 ids = np.array([ image.id for image in images ]),
                 provenance = np.array([ image.provenance for image in images ]),
                 z = z, has_z = has_z)
    return path

def load_dataset(path):
    """ Inverse of save_dataset(). """
    try:
        with np.load(path, allow_pickle = False) as data:
            pixels, labels, ids = data["pixels"], data["labels"], data["ids"]
            provenance, z, has_z = data["provenance"], data["z"], data["has_z"]
    except FileNotFoundError:
        raise
    except (OSError, ValueError, KeyError) as e:
        raise InvertIOError("not a dataset file (%s)" % e, path)
    return [ LabeledImage(pixels[i], labels[i], str(provenance[i]), str(ids[i]),
                          z = z[i] if has_z[i] else None) for i in range(len(labels)) ]

def write_preview(images, path, per_class = 8):
    """ PGM/PPM mosaic with one row per class, up to per_class columns. """
    groups = _by_class(images)
    rows = max(groups) + 1
    cells = []
    blank = np.full(images[0].pixels.shape, -1.0)
    for label in range(rows):
        group = groups.get(label, [])[:per_class]
        cells += [ image.pixels for image in group ] + [ blank ] * (per_class - len(group))
    return write_image(path, tile(cells, rows, per_class))
