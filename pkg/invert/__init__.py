"""

pyinvert
~~~~~~~~

Recover the latent vector z and the class label y behind an image, given
only the conditional GAN generator G(z, y) that may have produced it.

USAGE
~~~~~

import invert
import numpy as np

ckpt = invert.load_checkpoint("generator.ckpt")
z = invert.sample_latent(np.random.default_rng(1), 1, ckpt.d_z)[0]
target = invert.generate(ckpt, z, invert.one_hot(3, ckpt.d_y))

result = invert.recover(target, ckpt, invert.RecoveryConfig(max_iterations = 10000))
print("label %d, loss %.4f" % (result.label, result.recon / target.size))

"""

__author__ = "pyinvert developers"
__version__ = "0.1.0"
__all__ = [ "Stack", "ParameterSet", "GeneratorSpec", "GeneratorCheckpoint", "RecoveryConfig",
            "RecoveryResult", "EvalRecord", "AggregateReport", "LabeledImage", "GlyphConfig",
            "DiscriminatorSpec", "TrainConfig", "TrainReport", "Adam",
            "build_generator", "generate", "input_gradients", "load_checkpoint", "save_checkpoint",
            "objective", "objective_gradients", "stochastic_clip", "project_unit_box", "decode_label",
            "recover", "recover_batch", "process_grid", "reconstruction_loss", "z_recovery_error", "label_accuracy",
            "aggregate", "write_csv", "read_csv", "write_svg_curves", "synth_glyphs", "read_idx",
            "split_real_generated", "save_dataset", "load_dataset", "broadcast_label", "train",
            "sample_grid", "sample_latent", "one_hot" ]

debug = False

from .object import *
from .constants import *
from .exceptions import *
from .diffnet import *
from .generator import *
from .images import *
from .recovery import *
from .metrics import *
from .dataset import *
from .trainer import *
