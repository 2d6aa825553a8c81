"""

invert.trainer
~~~~~~~~~~~~~~

Minimal conditional-GAN training. The discriminator sees an image stacked
depth-wise with its label broadcast to one-hot image planes and scores it
real (1) or fake (0); the generator is trained to be scored 1.

Both networks train with batch statistics in AffineNorm. Running averages
of the generator's statistics are folded into its scale/shift whenever a
checkpoint is written, so checkpoints evaluate in inference mode.

"""

import csv
import math
import os

import numpy as np

from .diffnet import Stack, ConcatChannels, Conv2D, LeakyReLU, AffineNorm, Reshape, Dense, Sigmoid, \
                     forward, backward, init_params, layer_from_dict
from .exceptions import InvertValueError, InvertShapeError, InvertConfigError, InvertNumericError, InvertIOError
from .generator import GeneratorCheckpoint, build_generator, generate, sample_latent, one_hot, save_checkpoint
from .images import tile, write_image
from .object import LoggingObject

PROB_FLOOR = 1e-7

class DiscriminatorSpec(LoggingObject):
    """ Declarative description of a conditional discriminator.

    Properties:
    d_y -- number of classes
    image_shape -- (channels, height, width) of the images scored
    layers -- list of Layer objects, starting with the image/label junction
              and ending in Sigmoid
    """

    def __init__(self, d_y, image_shape, layers):
        self.d_y = int(d_y)
        self.image_shape = tuple(int(n) for n in image_shape)
        self.layers = list(layers)

    def __str__(self):
        return "DiscriminatorSpec (d_y=%d, image %s)" % (self.d_y, "x".join(str(n) for n in self.image_shape))

    def validate(self):
        channels, height, width = self.image_shape
        if not self.layers or not isinstance(self.layers[0], ConcatChannels):
            raise InvertValueError("first layer must join the label planes onto the image (ConcatChannels)")
        if self.layers[0].side_shape != (self.d_y, height, width):
            raise InvertValueError("label planes %s do not match d_y=%d at %dx%d" %
                                   (self.layers[0].side_shape, self.d_y, height, width))
        if not isinstance(self.layers[-1], Sigmoid):
            raise InvertValueError("final layer must be Sigmoid")
        stack = Stack(self.layers, self.image_shape)
        if stack.out_shape != (1,):
            raise InvertShapeError("discriminator must produce a single score, got shape %s" % (stack.out_shape,))
        return stack

    def to_dict(self):
        return { "d_y" : self.d_y, "image_shape" : list(self.image_shape),
                 "layers" : [ layer.to_dict() for layer in self.layers ] }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - { "d_y", "image_shape", "layers" }
        if unknown:
            raise InvertConfigError("unknown discriminator spec keys: %s" % sorted(unknown))
        try:
            return cls(d["d_y"], d["image_shape"], [ layer_from_dict(layer) for layer in d["layers"] ])
        except KeyError as e:
            raise InvertConfigError("discriminator spec is missing %s" % e)

    @classmethod
    def dcgan(cls, d_y = 10, image_shape = (1, 32, 32), width = 64):
        """ concat(image, label planes) -> Conv2D -> LeakyReLU
        -> Conv2D -> AffineNorm -> LeakyReLU -> flatten -> Dense -> Sigmoid """
        channels, height, w = (int(n) for n in image_shape)
        if height % 4 or w % 4:
            raise InvertValueError("image size must be a multiple of 4, got %dx%d" % (height, w))
        features = 2 * width * (height // 4) * (w // 4)
        layers = [ ConcatChannels((d_y, height, w)),
                   Conv2D(channels + d_y, width, kernel = 4, stride = 2, padding = 1),
                   LeakyReLU(0.2),
                   Conv2D(width, 2 * width, kernel = 4, stride = 2, padding = 1),
                   AffineNorm(2 * width),
                   LeakyReLU(0.2),
                   Reshape((features,)),
                   Dense(features, 1),
                   Sigmoid() ]
        return cls(d_y, image_shape, layers)


class TrainConfig(object):
    """ Trainer settings.

    Properties:
    batch_size -- images per step, half real and half generated
    epochs -- passes over the dataset
    learning_rate, beta1, beta2 -- Adam settings
    seed -- seed for batching, latent draws and the discriminator init
    init_seed -- generator initialization seed (defaults to seed)
    init_std -- weight initialization spread
    momentum -- running-statistics update rate
    checkpoint_every -- epochs between checkpoints
    grid_seed -- seed for the per-epoch sample grids
    real_label -- discriminator target for real images; below 1 smooths it
    generator_steps -- generator updates per discriminator update
    """

    FIELDS = [ "batch_size", "epochs", "learning_rate", "beta1", "beta2", "seed", "init_seed",
               "init_std", "momentum", "checkpoint_every", "grid_seed", "real_label", "generator_steps" ]

    def __init__(self, batch_size = 256, epochs = 5, learning_rate = 2e-4, beta1 = 0.5, beta2 = 0.999,
                 seed = 0, init_seed = None, init_std = 0.02, momentum = 0.1, checkpoint_every = 1,
                 grid_seed = 0, real_label = 0.9, generator_steps = 1):
        self.batch_size = int(batch_size)
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.seed = int(seed)
        self.init_seed = None if init_seed is None else int(init_seed)
        self.init_std = float(init_std)
        self.momentum = float(momentum)
        self.checkpoint_every = int(checkpoint_every)
        self.grid_seed = int(grid_seed)
        self.real_label = float(real_label)
        self.generator_steps = int(generator_steps)

    def __str__(self):
        return "TrainConfig (batch %d, %d epochs)" % (self.batch_size, self.epochs)

    def validate(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise InvertValueError("batch_size must be even and at least 2, got %d" % self.batch_size)
        if self.epochs < 1:
            raise InvertValueError("epochs must be at least 1")
        if not self.learning_rate > 0:
            raise InvertValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvertValueError("Adam betas must lie in [0, 1)")
        if not 0 < self.momentum <= 1:
            raise InvertValueError("momentum must lie in (0, 1]")
        if self.checkpoint_every < 1:
            raise InvertValueError("checkpoint_every must be at least 1")
        if not 0.5 < self.real_label <= 1.0:
            raise InvertValueError("real_label must lie in (0.5, 1]")
        if self.generator_steps < 1:
            raise InvertValueError("generator_steps must be at least 1")
        return self

    def to_dict(self):
        return { field : getattr(self, field) for field in self.FIELDS }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.FIELDS)
        if unknown:
            raise InvertConfigError("unknown train config keys: %s" % sorted(unknown))
        return cls(**d).validate()


class TrainReport(object):
    """ Outcome of a training run.

    Properties:
    epochs -- list of { "epoch", "d_loss", "g_loss", "d_accuracy" } dicts
    grids -- paths of the per-epoch sample grids
    checkpoints -- paths of the checkpoints written
    checkpoint -- path of the final checkpoint, or None without an output directory
    """

    def __init__(self):
        self.epochs = []
        self.grids = []
        self.checkpoints = []
        self.checkpoint = None

    def __str__(self):
        return "TrainReport (%d epochs)" % len(self.epochs)

    @property
    def d_losses(self):
        return [ epoch["d_loss"] for epoch in self.epochs ]

    @property
    def g_losses(self):
        return [ epoch["g_loss"] for epoch in self.epochs ]

    def write_csv(self, path):
        columns = [ "epoch", "d_loss", "g_loss", "d_accuracy" ]
        try:
            with open(path, "w", newline = "") as fd:
                writer = csv.DictWriter(fd, fieldnames = columns)
                writer.writeheader()
                for epoch in self.epochs:
                    writer.writerow({ key : repr(value) if isinstance(value, float) else value
                                      for key, value in epoch.items() })
        except OSError as e:
            raise InvertIOError("could not write training curve (%s)" % e, path)
        return path


class Adam(object):
    """ Adaptive moment estimation over a ParameterSet, updated in place. """

    def __init__(self, params, learning_rate = 2e-4, beta1 = 0.5, beta2 = 0.999, eps = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name in params:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            params[name] = params[name] - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return params

#------------------------------------------------------------------------
# Conditioning and losses
#------------------------------------------------------------------------

def broadcast_label(y, spatial_shape):
    """ Expand one-hot y (d_y,) or (N, d_y) into label planes (d_y, H, W) or
    (N, d_y, H, W): plane k is all ones iff y[k] = 1. """
    y = np.asarray(y, dtype = np.float64)
    is_binary = np.all((y == 0.0) | (y == 1.0))
    if y.ndim not in (1, 2) or not is_binary or not np.all(y.sum(axis = -1) == 1.0):
        raise InvertValueError("label vectors must be one-hot")
    height, width = spatial_shape
    return np.broadcast_to(y[..., None, None], y.shape + (height, width)).copy()

def binary_cross_entropy(p, target):
    """ Mean BCE of scores p against a constant target, and its gradient
    with respect to p. """
    clipped = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    loss = -np.mean(target * np.log(clipped) + (1.0 - target) * np.log(1.0 - clipped))
    grad = (clipped - target) / (clipped * (1.0 - clipped)) / p.size
    return float(loss), grad

def fold_norm(stack, params, running):
    """ Fold running (mean, var) statistics into each AffineNorm's scale and
    shift: scale' = scale / sqrt(var + eps), shift' = shift - mean * scale'. """
    folded = params.copy()
    for layer in stack:
        if not isinstance(layer, AffineNorm) or layer.index not in running:
            continue
        mean, var = running[layer.index]
        scale_name, shift_name = layer.param_name("scale"), layer.param_name("shift")
        scale = params[scale_name] / np.sqrt(var + layer.eps)
        folded[scale_name] = scale
        folded[shift_name] = params[shift_name] - mean * scale
    return folded

def _update_running(running, stats, momentum):
    for index, (mean, var) in stats.items():
        if index not in running:
            running[index] = (np.zeros_like(mean), np.ones_like(var))
        old_mean, old_var = running[index]
        running[index] = ((1.0 - momentum) * old_mean + momentum * mean,
                          (1.0 - momentum) * old_var + momentum * var)

def discriminator_accuracy(disc_stack, disc_params, real, real_y, fake, fake_y):
    """ Fraction of real images scored > 0.5 and fake images scored < 0.5,
    with inference-mode AffineNorm. """
    spatial = disc_stack.in_shape[1:]
    p_real, _ = forward(disc_stack, disc_params, real, side = broadcast_label(real_y, spatial))
    p_fake, _ = forward(disc_stack, disc_params, fake, side = broadcast_label(fake_y, spatial))
    hits = int(np.sum(p_real > 0.5)) + int(np.sum(p_fake < 0.5))
    return hits / (p_real.size + p_fake.size)

def sample_grid(ckpt, rows, cols, seed, path = None):
    """ Mosaic of generated images: row r shows class r mod d_y, column c
    uses the c-th latent draw. Written as PGM/PPM if path is given. """
    rng = np.random.default_rng(seed)
    z = sample_latent(rng, cols, ckpt.d_z)
    labels = np.repeat(np.arange(rows) % ckpt.d_y, cols)
    images = generate(ckpt, np.tile(z, (rows, 1)), one_hot(labels, ckpt.d_y))
    mosaic = tile(list(images), rows, cols)
    if path is not None:
        write_image(path, mosaic)
    return mosaic

#------------------------------------------------------------------------
# Training loop
#------------------------------------------------------------------------

class Trainer(LoggingObject):
    """ Alternating discriminator/generator updates over a labeled dataset. """

    def __init__(self, gen_spec, disc_spec, dataset, config, out_dir = None):
        self.config = config.validate()
        self.gen_stack = gen_spec.validate()
        self.disc_stack = disc_spec.validate()
        if gen_spec.d_y != disc_spec.d_y or gen_spec.image_shape != disc_spec.image_shape:
            raise InvertValueError("generator and discriminator disagree on d_y or image shape")
        if len(dataset) < config.batch_size // 2:
            raise InvertValueError("dataset has %d images, a batch needs %d real ones" %
                                   (len(dataset), config.batch_size // 2))
        for image in dataset:
            image.validate(gen_spec.d_y)
            if image.pixels.shape != gen_spec.image_shape:
                raise InvertShapeError("%s has shape %s, generator produces %s" %
                                       (image.id, image.pixels.shape, gen_spec.image_shape))

        self.gen_spec = gen_spec
        self.disc_spec = disc_spec
        self.pixels = np.stack([ image.pixels for image in dataset ])
        self.labels = np.array([ image.label for image in dataset ])
        self.out_dir = out_dir
        self.rng = np.random.default_rng(config.seed)

        init_seed = config.seed if config.init_seed is None else config.init_seed
        self.generator = build_generator(gen_spec, init_seed, std = config.init_std, provenance = "trained")
        self.gen_params = self.generator.params.copy()
        self.disc_params = init_params(self.disc_stack, np.random.default_rng([ config.seed, 1 ]), std = config.init_std)
        self.gen_running = {}
        self.disc_running = {}
        self.gen_opt = Adam(self.gen_params, config.learning_rate, config.beta1, config.beta2)
        self.disc_opt = Adam(self.disc_params, config.learning_rate, config.beta1, config.beta2)
        self.step_count = 0
        self.last_checkpoint = None

    def __str__(self):
        return "Trainer (%d images, batch %d)" % (len(self.labels), self.config.batch_size)

    def checkpoint(self):
        """ Current generator with its running statistics folded in. """
        params = fold_norm(self.gen_stack, self.gen_params, self.gen_running)
        metadata = dict(self.generator.metadata, steps = self.step_count)
        return GeneratorCheckpoint(self.gen_spec, params, metadata)

    def _disc_pass(self, images, y, target):
        spatial = self.disc_stack.in_shape[1:]
        p, tape = forward(self.disc_stack, self.disc_params, images, side = broadcast_label(y, spatial),
                          batch_stats = True)
        loss, grad = binary_cross_entropy(p, target)
        return p, tape, loss, grad

    def _check_loss(self, loss, what):
        if not math.isfinite(loss):
            raise InvertNumericError("non-finite %s loss" % what)

    def step(self, real, real_labels):
        """ One discriminator update and config.generator_steps generator
        updates. Returns (d_loss, g_loss), g_loss from the last generator
        update. A non-finite value raises InvertNumericError naming the step
        and the last checkpoint written. """
        try:
            d_loss, g_loss = self._step(real, real_labels)
        except InvertNumericError as e:
            where = " (last good checkpoint %s)" % self.last_checkpoint if self.last_checkpoint else ""
            raise InvertNumericError("%s at step %d%s" % (e, self.step_count, where),
                                     layer = e.layer, iteration = self.step_count)
        self.step_count += 1
        return d_loss, g_loss

    def _step(self, real, real_labels):
        half = len(real_labels)
        d_y = self.gen_spec.d_y
        real_y = one_hot(real_labels, d_y)
        z = sample_latent(self.rng, half, self.gen_spec.d_z)
        fake_y = one_hot(self.rng.integers(0, d_y, size = half), d_y)

        fake, gen_tape = forward(self.gen_stack, self.gen_params, z, side = fake_y, batch_stats = True)
        _update_running(self.gen_running, gen_tape.stats, self.config.momentum)

        # discriminator: real -> real_label, fake -> 0
        _, tape, loss_real, grad = self._disc_pass(real, real_y, self.config.real_label)
        # discriminator running statistics track real batches only
        _update_running(self.disc_running, tape.stats, self.config.momentum)
        grads_real = backward(tape, grad).params
        _, tape, loss_fake, grad = self._disc_pass(fake, fake_y, 0.0)
        grads_fake = backward(tape, grad).params
        d_loss = loss_real + loss_fake
        self._check_loss(d_loss, "discriminator")
        for name in grads_real:
            grads_real[name] = grads_real[name] + grads_fake[name]
        self.disc_opt.step(self.disc_params, grads_real)

        # generator: fake -> 1, on the same draws each time
        for n in range(self.config.generator_steps):
            if n:
                fake, gen_tape = forward(self.gen_stack, self.gen_params, z, side = fake_y, batch_stats = True)
                _update_running(self.gen_running, gen_tape.stats, self.config.momentum)
            _, tape, g_loss, grad = self._disc_pass(fake, fake_y, 1.0)
            self._check_loss(g_loss, "generator")
            upstream = backward(tape, grad, param_grads = False).input
            self.gen_opt.step(self.gen_params, backward(gen_tape, upstream).params)
        return d_loss, g_loss

    def _write_checkpoint(self, epoch, report):
        path = os.path.join(self.out_dir, "generator-epoch%03d.ckpt" % epoch)
        save_checkpoint(self.checkpoint(), path)
        self.last_checkpoint = path
        report.checkpoints.append(path)

    def run(self):
        config = self.config
        half = config.batch_size // 2
        report = TrainReport()
        self.log_info("training %s for %d epochs", self.gen_spec, config.epochs)

        for epoch in range(1, config.epochs + 1):
            order = self.rng.permutation(len(self.labels))
            d_losses, g_losses = [], []
            for start in range(0, len(order) - half + 1, half):
                batch = order[start:start + half]
                d_loss, g_loss = self.step(self.pixels[batch], self.labels[batch])
                d_losses.append(d_loss)
                g_losses.append(g_loss)
                self.log_debug("step %d: d_loss %.4f, g_loss %.4f", self.step_count, d_loss, g_loss)

            record = { "epoch" : epoch, "d_loss" : math.fsum(d_losses) / len(d_losses),
                       "g_loss" : math.fsum(g_losses) / len(g_losses),
                       "d_accuracy" : self.accuracy(half) }
            report.epochs.append(record)
            self.log_info("epoch %d: d_loss %.4f, g_loss %.4f, d_accuracy %.3f", epoch,
                          record["d_loss"], record["g_loss"], record["d_accuracy"])

            if self.out_dir is not None:
                rows = self.gen_spec.d_y
                path = os.path.join(self.out_dir, "samples-epoch%03d.%s" %
                                    (epoch, "pgm" if self.gen_spec.image_shape[0] == 1 else "ppm"))
                sample_grid(self.checkpoint(), rows, 8, config.grid_seed, path)
                report.grids.append(path)
                if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                    self._write_checkpoint(epoch, report)

        ckpt = self.checkpoint()
        if self.out_dir is not None:
            report.checkpoint = os.path.join(self.out_dir, "generator.ckpt")
            save_checkpoint(ckpt, report.checkpoint)
            report.write_csv(os.path.join(self.out_dir, "training.csv"))
        return ckpt, report

    def accuracy(self, n):
        """ Discriminator accuracy on n held-fixed real images and n fresh fakes. """
        rng = np.random.default_rng([ self.config.seed, 2 ])
        picks = rng.choice(len(self.labels), size = min(n, len(self.labels)), replace = False)
        d_y = self.gen_spec.d_y
        z = sample_latent(rng, len(picks), self.gen_spec.d_z)
        fake_y = one_hot(rng.integers(0, d_y, size = len(picks)), d_y)
        fake = generate(self.checkpoint(), z, fake_y)
        disc_params = fold_norm(self.disc_stack, self.disc_params, self.disc_running)
        return discriminator_accuracy(self.disc_stack, disc_params, self.pixels[picks],
                                      one_hot(self.labels[picks], d_y), fake, fake_y)


def train(gen_spec, disc_spec, dataset, config, out_dir = None):
    """ Train a conditional GAN on a list of LabeledImages. Returns
    (GeneratorCheckpoint, TrainReport). Deterministic for fixed seeds.
    With out_dir, also writes checkpoints, sample grids and training.csv. """
    return Trainer(gen_spec, disc_spec, dataset, config, out_dir).run()
