import numpy as np

import invert
from invert.diffnet import ConcatChannels, Dense, Reshape, Tanh

def relative_error(a, b):
    """ max |a - b|, relative to the larger of the two max magnitudes. """
    a = np.asarray(a, dtype = np.float64)
    b = np.asarray(b, dtype = np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)

def tiny_dcgan_spec(d_z = 3, d_y = 4, size = 8, width = 8):
    """ DCGAN-shaped generator small enough for per-test evaluation. """
    return invert.GeneratorSpec.dcgan(d_z, d_y, (1, size, size), width)

def smooth_spec(d_z = 3, d_y = 4):
    """ Tanh-only generator: differentiable everywhere, 4x4 images. """
    layers = [ ConcatChannels((d_y,)), Dense(d_z + d_y, 12), Tanh(), Dense(12, 16), Reshape((1, 4, 4)), Tanh() ]
    return invert.GeneratorSpec(d_z, d_y, (1, 4, 4), layers)

def smooth_generator(d_z = 3, d_y = 4, seed = 0, std = 0.5):
    return invert.build_generator(smooth_spec(d_z, d_y), seed, std = std)

def linear_generator(weight, bias, d_z, d_y, image_shape):
    """ G(z, y) = weight . concat(z, y) + bias, reshaped to image_shape. """
    spec = invert.GeneratorSpec.linear(d_z, d_y, image_shape)
    params = invert.ParameterSet([ ("dense1.weight", weight), ("dense1.bias", bias) ])
    return invert.GeneratorCheckpoint(spec, params, { "provenance" : "test" })

def scaled_orthonormal(rng, rows, cols, scale):
    """ rows x cols matrix with orthonormal columns times scale. """
    q, _ = np.linalg.qr(rng.normal(size = (rows, cols)))
    return scale * q
