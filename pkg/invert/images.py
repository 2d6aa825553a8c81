"""

invert.images
~~~~~~~~~~~~~

8-bit PGM (grayscale) / PPM (color) images for previews and sample grids.
Pixels map between [-1, 1] and [0, 255] by

    byte = round((x + 1) * 127.5)        x = byte / 127.5 - 1

This map is lossy; recovery targets always travel as float64 sidecars.

"""

import numpy as np
from PIL import Image

from .exceptions import InvertShapeError, InvertIOError

def to_bytes(pixels):
    """ [-1, 1] float image -> uint8 """
    pixels = np.clip(np.asarray(pixels, dtype = np.float64), -1.0, 1.0)
    return np.rint((pixels + 1.0) * 127.5).astype(np.uint8)

def from_bytes(data):
    """ uint8 -> [-1, 1] float image """
    return np.asarray(data, dtype = np.float64) / 127.5 - 1.0

def tile(images, rows, cols, fill = -1.0):
    """ Arrange up to rows * cols (C, H, W) images into a (C, rows*H, cols*W)
    mosaic, row-major. Empty cells take the fill value. """
    images = [ np.asarray(image, dtype = np.float64) for image in images ]
    if not images:
        raise InvertShapeError("no images to tile")
    if len(images) > rows * cols:
        raise InvertShapeError("%d images do not fit a %dx%d grid" % (len(images), rows, cols))
    c, h, w = images[0].shape
    mosaic = np.full((c, rows * h, cols * w), fill)
    for n, image in enumerate(images):
        if image.shape != (c, h, w):
            raise InvertShapeError("image %d has shape %s, expected %s" % (n, image.shape, (c, h, w)))
        r, k = divmod(n, cols)
        mosaic[:, r * h:(r + 1) * h, k * w:(k + 1) * w] = image
    return mosaic

def write_image(path, pixels):
    """ Write a (C, H, W) image in [-1, 1] as binary PGM (C=1) or PPM (C=3). """
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] not in (1, 3):
        raise InvertShapeError("can only write 1- or 3-channel images, got shape %s" % (pixels.shape,))
    data = to_bytes(pixels)
    if data.shape[0] == 1:
        image = Image.fromarray(data[0])
    else:
        image = Image.fromarray(np.ascontiguousarray(data.transpose(1, 2, 0)))
    try:
        image.save(path, format = "PPM")
    except OSError as e:
        raise InvertIOError("could not write image (%s)" % e, path)
    return path

def read_image(path):
    """ Read a PGM/PPM file back to a (C, H, W) float image in [-1, 1]. """
    try:
        image = Image.open(path)
        image.load()
    except FileNotFoundError:
        raise
    except OSError as e:
        raise InvertIOError("could not read image (%s)" % e, path)
    data = np.asarray(image)
    if data.ndim == 2:
        data = data[None]
    else:
        data = data.transpose(2, 0, 1)
    return from_bytes(data)
