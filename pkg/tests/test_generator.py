""" Unit tests for the conditional generator and checkpoint files """

import os
import json

import pytest
import numpy as np

import invert
from invert.diffnet import ConcatChannels, Dense, Reshape, Tanh, TransposedConv2D, finite_difference_gradient

from tests.shared import relative_error, tiny_dcgan_spec, smooth_generator

@pytest.fixture(scope = "module")
def ckpt():
    return invert.build_generator(tiny_dcgan_spec(), 7)

@pytest.fixture(scope = "module")
def smooth():
    return smooth_generator()

def test_dcgan_shapes():
    spec = invert.GeneratorSpec.dcgan(100, 10, (1, 32, 32), 256)
    stack = spec.validate()
    assert stack.in_shape == (100,)
    assert stack.side_shape == (10,)
    assert stack.out_shape == (1, 32, 32)
    kinds = [ layer.kind for layer in spec.layers ]
    assert kinds[:3] == [ "ConcatChannels", "Dense", "Reshape" ]
    assert kinds.count("TransposedConv2D") == 3
    assert kinds[-2:] == [ "TransposedConv2D", "Tanh" ]

def test_dcgan_color():
    spec = invert.GeneratorSpec.dcgan(16, 3, (3, 16, 16), 16)
    assert spec.validate().out_shape == (3, 16, 16)

@pytest.mark.parametrize("shape", [ (1, 12, 12), (1, 16, 8), (1, 4, 4) ])
def test_dcgan_bad_size(shape):
    with pytest.raises(invert.InvertValueError):
        invert.GeneratorSpec.dcgan(4, 2, shape, 16)

def test_spec_validation():
    with pytest.raises(invert.InvertValueError):
        invert.GeneratorSpec(3, 1, (1, 4, 4), [ ConcatChannels((1,)), Dense(4, 16), Reshape((1, 4, 4)), Tanh() ]).validate()
    with pytest.raises(invert.InvertValueError):
        invert.GeneratorSpec(3, 2, (1, 4, 4), [ Dense(3, 16), Reshape((1, 4, 4)), Tanh() ]).validate()
    with pytest.raises(invert.InvertValueError):
        invert.GeneratorSpec(3, 2, (1, 4, 4), [ ConcatChannels((2,)), Dense(5, 16), Reshape((1, 4, 4)) ]).validate()
    with pytest.raises(invert.InvertShapeError):
        invert.GeneratorSpec(3, 2, (1, 8, 8), [ ConcatChannels((2,)), Dense(5, 16), Reshape((1, 4, 4)), Tanh() ]).validate()

def test_spec_round_trip():
    spec = tiny_dcgan_spec()
    copy = invert.GeneratorSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert copy == spec

def test_spec_unknown_keys():
    d = tiny_dcgan_spec().to_dict()
    d["dropout"] = 0.5
    with pytest.raises(invert.InvertConfigError):
        invert.GeneratorSpec.from_dict(d)
    del d["dropout"]
    del d["layers"]
    with pytest.raises(invert.InvertConfigError):
        invert.GeneratorSpec.from_dict(d)

def test_generate_range(ckpt):
    rng = np.random.default_rng(0)
    z = invert.sample_latent(rng, 5, ckpt.d_z)
    images = invert.generate(ckpt, z, invert.one_hot(np.arange(5) % ckpt.d_y, ckpt.d_y))
    assert images.shape == (5,) + ckpt.image_shape
    assert np.all(np.abs(images) <= 1.0)

def test_generate_range_relaxed(ckpt):
    rng = np.random.default_rng(4)
    z = invert.sample_latent(rng, 1000, ckpt.d_z)
    y = rng.uniform(0.0, 1.0, size = (1000, ckpt.d_y))
    images = invert.generate(ckpt, z, y)
    assert np.all(np.abs(images) <= 1.0)

def test_generate_accepts_relaxed_y(ckpt):
    z = np.zeros(ckpt.d_z)
    image = invert.generate(ckpt, z, np.full(ckpt.d_y, 0.25))
    assert image.shape == ckpt.image_shape

def test_generate_deterministic(ckpt):
    z = np.linspace(-1, 1, ckpt.d_z)
    y = invert.one_hot(1, ckpt.d_y)
    assert np.array_equal(invert.generate(ckpt, z, y), invert.generate(ckpt, z, y))

def test_generate_bad_inputs(ckpt):
    with pytest.raises(invert.InvertShapeError):
        invert.generate(ckpt, np.zeros(ckpt.d_z + 1), invert.one_hot(0, ckpt.d_y))
    with pytest.raises(invert.InvertShapeError):
        invert.generate(ckpt, np.zeros(ckpt.d_z), np.zeros(ckpt.d_y + 1))
    with pytest.raises(invert.InvertNumericError):
        invert.generate(ckpt, np.full(ckpt.d_z, np.nan), invert.one_hot(0, ckpt.d_y))

def test_build_generator_seeded():
    a = invert.build_generator(tiny_dcgan_spec(), 3)
    b = invert.build_generator(tiny_dcgan_spec(), 3)
    c = invert.build_generator(tiny_dcgan_spec(), 4)
    assert a == b
    assert a != c
    assert a.metadata["seed"] == 3

def test_input_gradients(smooth):
    rng = np.random.default_rng(11)
    for trial in range(100):
        z = rng.uniform(-1, 1, smooth.d_z)
        y = rng.uniform(0, 1, smooth.d_y)
        r = rng.normal(size = smooth.image_shape)
        dz, dy = invert.input_gradients(smooth, z, y, r)
        numeric_z = finite_difference_gradient(lambda v: np.sum(invert.generate(smooth, v, y) * r), z)
        numeric_y = finite_difference_gradient(lambda v: np.sum(invert.generate(smooth, z, v) * r), y)
        assert relative_error(dz, numeric_z) < 1e-6
        assert relative_error(dy, numeric_y) < 1e-6

def test_input_gradients_dcgan(ckpt):
    rng = np.random.default_rng(2)
    z = rng.uniform(-1, 1, ckpt.d_z)
    y = invert.one_hot(2, ckpt.d_y)
    r = rng.normal(size = ckpt.image_shape)
    dz, dy = invert.input_gradients(ckpt, z, y, r)
    numeric = finite_difference_gradient(lambda v: np.sum(invert.generate(ckpt, v, y) * r), z)
    assert relative_error(dz, numeric) < 1e-5
    assert dy.shape == (ckpt.d_y,)

def test_one_hot():
    assert np.array_equal(invert.one_hot(2, 4), [ 0, 0, 1, 0 ])
    assert invert.one_hot([ 0, 3 ], 4).shape == (2, 4)
    with pytest.raises(invert.InvertValueError):
        invert.one_hot(4, 4)

def test_sample_latent():
    z = invert.sample_latent(np.random.default_rng(0), 1000, 4)
    assert z.shape == (1000, 4)
    assert z.min() >= -1.0 and z.max() < 1.0

#------------------------------------------------------------------------
# Checkpoint files
#------------------------------------------------------------------------

def test_checkpoint_round_trip(ckpt, tmp_path):
    path = str(tmp_path / "generator.ckpt")
    invert.save_checkpoint(ckpt, path)
    loaded = invert.load_checkpoint(path)
    assert loaded == ckpt
    z = np.full(ckpt.d_z, 0.3)
    y = invert.one_hot(0, ckpt.d_y)
    assert np.array_equal(invert.generate(loaded, z, y), invert.generate(ckpt, z, y))

def test_checkpoint_bytes_stable(ckpt, tmp_path):
    a = str(tmp_path / "a.ckpt")
    b = str(tmp_path / "b.ckpt")
    invert.save_checkpoint(ckpt, a)
    invert.save_checkpoint(invert.load_checkpoint(a), b)
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()

def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOT-A-CHECKPOINT\nversion: 1\n<>\n")
    with pytest.raises(invert.CheckpointFormatError):
        invert.load_checkpoint(str(path))

def test_checkpoint_version(ckpt, tmp_path):
    path = str(tmp_path / "generator.ckpt")
    invert.save_checkpoint(ckpt, path)
    with open(path, "rb") as fd:
        data = fd.read()
    with open(path, "wb") as fd:
        fd.write(data.replace(b"version: 1\n", b"version: 99\n", 1))
    with pytest.raises(invert.CheckpointVersionError):
        invert.load_checkpoint(path)

def test_checkpoint_truncated(ckpt, tmp_path):
    path = str(tmp_path / "generator.ckpt")
    invert.save_checkpoint(ckpt, path)
    size = os.path.getsize(path)
    with open(path, "rb") as fd:
        data = fd.read()
    with open(path, "wb") as fd:
        fd.write(data[:size - 5])
    with pytest.raises(invert.CheckpointTruncatedError):
        invert.load_checkpoint(path)

def test_checkpoint_trailing_bytes(ckpt, tmp_path):
    path = str(tmp_path / "generator.ckpt")
    invert.save_checkpoint(ckpt, path)
    with open(path, "ab") as fd:
        fd.write(b"\0")
    with pytest.raises(invert.CheckpointFormatError):
        invert.load_checkpoint(path)

def test_checkpoint_missing():
    with pytest.raises(FileNotFoundError):
        invert.load_checkpoint("/nonexistent/generator.ckpt")

def test_checkpoint_rejects_mismatched_params():
    spec = tiny_dcgan_spec()
    params = invert.ParameterSet([ ("dense1.weight", np.zeros((2, 2))) ])
    with pytest.raises(invert.InvertShapeError):
        invert.GeneratorCheckpoint(spec, params)

def test_linear_spec():
    spec = invert.GeneratorSpec.linear(2, 3, (1, 2, 2))
    stack = spec.validate()
    assert stack.out_shape == (1, 2, 2)
    assert list(stack.param_shapes()) == [ "dense1.weight", "dense1.bias" ]
    assert not spec.bounded
