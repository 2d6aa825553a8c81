"""

invert.recovery
~~~~~~~~~~~~~~~

Recover the latent vector z and the conditional vector y behind an image,
given only the generator that produced it. Minimizes

    L(z_p, y_p) = ||target - G(z_p, y_p)||^2 + lambda * | ||y_p||_1 - 1 |

by plain gradient descent on both arguments. After each step z_p is
stochastically clipped back into [-1, 1] and y_p is projected onto the unit
box; y_p starts at the zero vector and is decoded by argmax.

"""

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import invert
from .constants import TERMINATION_CONVERGED, TERMINATION_BUDGET, TERMINATION_FAILED
from .diffnet import as_tensor
from .exceptions import InvertException, InvertShapeError, InvertNumericError, InvertValueError, InvertConfigError
from .images import tile
from .object import LoggingObject

class RecoveryConfig(object):
    """ Settings for one recovery run.

    Properties:
    lambda_ -- regularizer weight; None means 1 / d_y of the generator
    alpha -- step size for z_p
    beta -- step size for y_p
    schedule -- iteration at which alpha and beta are halved (once)
    max_iterations -- iteration budget
    plateau_window -- iterations without relative improvement before stopping
    plateau_tolerance -- relative improvement that counts as progress
    use_regularizer -- False drops the L1 term entirely
    seed -- seed for the z_p initialization and stochastic clipping
    trace_stride -- iterations between trace samples
    assert_feasible -- check the box constraints after every iteration
    """

    FIELDS = { "lambda" : "lambda_", "alpha" : "alpha", "beta" : "beta", "schedule" : "schedule",
               "max_iterations" : "max_iterations", "plateau_window" : "plateau_window",
               "plateau_tolerance" : "plateau_tolerance", "use_regularizer" : "use_regularizer",
               "seed" : "seed", "trace_stride" : "trace_stride", "assert_feasible" : "assert_feasible" }

    def __init__(self, lambda_ = None, alpha = 1.0, beta = 1.0, schedule = 50000, max_iterations = 100000,
                 plateau_window = 5000, plateau_tolerance = 1e-6, use_regularizer = True, seed = 0,
                 trace_stride = 100, assert_feasible = False):
        self.lambda_ = None if lambda_ is None else float(lambda_)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.schedule = int(schedule)
        self.max_iterations = int(max_iterations)
        self.plateau_window = int(plateau_window)
        self.plateau_tolerance = float(plateau_tolerance)
        self.use_regularizer = bool(use_regularizer)
        self.seed = int(seed)
        self.trace_stride = int(trace_stride)
        self.assert_feasible = bool(assert_feasible)

    def __str__(self):
        return "RecoveryConfig (alpha=%g, beta=%g, lambda=%s, seed=%d)" % \
               (self.alpha, self.beta, "1/d_y" if self.lambda_ is None else "%g" % self.lambda_, self.seed)

    def __eq__(self, other):
        return isinstance(other, RecoveryConfig) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def validate(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvertValueError("alpha and beta must be positive")
        if self.lambda_ is not None and not self.lambda_ >= 0:
            raise InvertValueError("lambda must be non-negative")
        if self.max_iterations < 1:
            raise InvertValueError("max_iterations must be at least 1")
        if self.schedule < 0:
            raise InvertValueError("schedule must be non-negative")
        if self.plateau_window < 1 or not self.plateau_tolerance >= 0:
            raise InvertValueError("plateau window must be >= 1 and tolerance >= 0")
        if self.trace_stride < 1:
            raise InvertValueError("trace_stride must be at least 1")
        return self

    def weight(self, d_y):
        """ Effective regularizer weight for a generator with d_y classes. """
        if not self.use_regularizer:
            return 0.0
        return 1.0 / d_y if self.lambda_ is None else self.lambda_

    def with_seed(self, seed):
        d = self.to_dict()
        d["seed"] = int(seed)
        return RecoveryConfig.from_dict(d)

    def to_dict(self):
        return { key : getattr(self, attr) for key, attr in self.FIELDS.items() }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.FIELDS)
        if unknown:
            raise InvertConfigError("unknown recovery config keys: %s" % sorted(unknown))
        return cls(**{ cls.FIELDS[key] : value for key, value in d.items() }).validate()

    def digest(self):
        """ SHA-256 of the canonical JSON form. """
        return config_digest(self.to_dict())


def config_digest(d):
    text = json.dumps(d, sort_keys = True, separators = (",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RecoveryState(object):
    """ The iterate handed to observers after every step.

    Properties:
    z_p -- current latent estimate, within [-1, 1]
    y_p -- current conditional estimate, within [0, 1]
    iteration -- number of completed steps
    recon -- reconstruction term of the iterate the last step was taken from
    reg -- regularizer term of that iterate
    """

    def __init__(self, z_p, y_p, iteration = 0, recon = None, reg = None):
        self.z_p = z_p
        self.y_p = y_p
        self.iteration = iteration
        self.recon = recon
        self.reg = reg

    def __str__(self):
        return "RecoveryState (%d)" % self.iteration

    @property
    def total(self):
        return self.recon + self.reg


class RecoveryTrace(object):
    """ Loss curve sampled every trace_stride iterations. z_error and
    label_correct hold None when no ground truth was supplied. """

    def __init__(self):
        self.iteration = []
        self.recon_mse = []
        self.recon_sum = []
        self.reg_term = []
        self.z_error = []
        self.label_correct = []

    def __len__(self):
        return len(self.iteration)

    def __str__(self):
        return "RecoveryTrace (%d samples)" % len(self)

    def append(self, iteration, recon_sum, reg_term, pixels, z_error = None, label_correct = None):
        if self.iteration and iteration <= self.iteration[-1]:
            raise InvertValueError("trace iterations must increase (%d after %d)" % (iteration, self.iteration[-1]))
        self.iteration.append(int(iteration))
        self.recon_sum.append(float(recon_sum))
        self.recon_mse.append(float(recon_sum) / pixels)
        self.reg_term.append(float(reg_term))
        self.z_error.append(z_error)
        self.label_correct.append(label_correct)

    def rows(self):
        """ One dict per sample, keyed by TRACE_COLUMNS. """
        return [ { "iteration" : self.iteration[n], "recon_mse" : self.recon_mse[n],
                   "recon_sum" : self.recon_sum[n], "reg_term" : self.reg_term[n],
                   "z_error" : self.z_error[n], "label_correct" : self.label_correct[n] }
                 for n in range(len(self)) ]

    @classmethod
    def from_rows(cls, rows):
        trace = cls()
        for row in rows:
            trace.iteration.append(int(row["iteration"]))
            trace.recon_mse.append(float(row["recon_mse"]))
            trace.recon_sum.append(float(row["recon_sum"]))
            trace.reg_term.append(float(row["reg_term"]))
            trace.z_error.append(row["z_error"])
            trace.label_correct.append(row["label_correct"])
        return trace


class RecoveryResult(object):
    """ Outcome of one recovery.

    Properties:
    z_p -- final latent estimate
    y_p -- final (raw) conditional estimate
    label -- argmax(y_p), lowest index on ties
    tied -- True if the argmax was tied
    recon, reg -- final loss decomposition
    initial_recon, initial_reg -- loss decomposition at iteration 0
    iterations -- number of steps taken
    termination -- TERMINATION_CONVERGED, TERMINATION_BUDGET or TERMINATION_FAILED
    trace -- RecoveryTrace
    error -- the exception, for entries of a batch that failed
    """

    def __init__(self, z_p, y_p, recon, reg, initial_recon, initial_reg, iterations, termination,
                 trace, error = None):
        self.z_p = z_p
        self.y_p = y_p
        if y_p is not None:
            self.label, self.tied = decode_label(y_p)
        else:
            self.label, self.tied = None, False
        self.recon = recon
        self.reg = reg
        self.initial_recon = initial_recon
        self.initial_reg = initial_reg
        self.iterations = iterations
        self.termination = termination
        self.trace = trace
        self.error = error

    def __str__(self):
        if not self.ok:
            return "RecoveryResult (failed: %s)" % self.error
        return "RecoveryResult (label %d, loss %.6g, %d iterations, %s)" % \
               (self.label, self.total, self.iterations, self.termination)

    @property
    def ok(self):
        return self.error is None

    @property
    def total(self):
        return self.recon + self.reg

    @classmethod
    def failed(cls, error):
        return cls(None, None, math.nan, math.nan, math.nan, math.nan, 0, TERMINATION_FAILED,
                   RecoveryTrace(), error = error)

#------------------------------------------------------------------------
# Objective
#------------------------------------------------------------------------

def _check_target(target, ckpt):
    target = as_tensor(target, name = "target")
    if target.shape != tuple(ckpt.image_shape):
        raise InvertShapeError("target has shape %s, generator produces %s" % (target.shape, tuple(ckpt.image_shape)))
    return target

def _regularizer(y_p, lambda_):
    return lambda_ * abs(math.fsum(np.abs(y_p)) - 1.0)

def objective(target, ckpt, z_p, y_p, lambda_):
    """ Return (total, recon, reg) with recon the raw sum of squared pixel
    differences and reg = lambda * | ||y_p||_1 - 1 |. """
    target = _check_target(target, ckpt)
    image, _ = ckpt.forward(z_p, y_p)
    recon = float(np.sum((target - image) ** 2))
    reg = _regularizer(np.asarray(y_p), lambda_)
    return recon + reg, recon, reg

def _evaluate(target, ckpt, z_p, y_p, lambda_):
    """ One forward and one backward pass: (recon, reg, g_z, g_y). """
    image, tape = ckpt.forward(z_p, y_p)
    residual = image - target
    recon = float(np.sum(residual ** 2))
    if not math.isfinite(recon):
        raise InvertNumericError("non-finite reconstruction loss")
    g_z, g_y = ckpt.backward(tape, 2.0 * residual)
    excess = float(np.sum(y_p)) - 1.0
    reg = _regularizer(y_p, lambda_)
    if lambda_ and excess != 0.0:
        # on the feasible box ||y||_1 = sum(y); subgradient 0 at the kink
        g_y = g_y + lambda_ * math.copysign(1.0, excess)
    return recon, reg, g_z, g_y

def objective_gradients(target, ckpt, z_p, y_p, lambda_):
    """ Return (g_z, g_y), the gradients of objective() at (z_p, y_p). """
    target = _check_target(target, ckpt)
    _, _, g_z, g_y = _evaluate(target, ckpt, as_tensor(z_p), as_tensor(y_p), lambda_)
    return g_z, g_y

def stochastic_clip(z_p, rng):
    """ Resample every coordinate outside [-1, 1] uniformly from (-1, 1);
    coordinates inside are left untouched. """
    z_p = np.array(z_p, dtype = np.float64)
    outside = np.abs(z_p) > 1.0
    count = int(outside.sum())
    if count:
        fresh = rng.uniform(-1.0, 1.0, size = count)
        # uniform() may return exactly -1.0; redraw those
        edge = fresh == -1.0
        while edge.any():
            fresh[edge] = rng.uniform(-1.0, 1.0, size = int(edge.sum()))
            edge = fresh == -1.0
        z_p[outside] = fresh
    return z_p

def project_unit_box(y_p):
    return np.clip(np.asarray(y_p, dtype = np.float64), 0.0, 1.0)

def decode_label(y_p):
    """ Return (argmax(y_p), tied). The lowest index wins a tie. """
    y_p = np.asarray(y_p)
    label = int(np.argmax(y_p))
    tied = int(np.sum(y_p == y_p[label])) > 1
    return label, tied

#------------------------------------------------------------------------
# Recovery loop
#------------------------------------------------------------------------

class Recovery(LoggingObject):
    """ One run of the recovery loop for a single target. """

    def __init__(self, target, ckpt, config, name = None):
        self.target = _check_target(target, ckpt)
        if self.target.min() < -1.0 or self.target.max() > 1.0:
            raise InvertValueError("target pixels must lie in [-1, 1]")
        self.ckpt = ckpt
        self.config = config.validate()
        self.name = name or "target"
        self.lambda_ = config.weight(ckpt.d_y)

    def __str__(self):
        return "Recovery (%s)" % self.name

    def _check_feasible(self, z_p, y_p, iteration):
        assert np.all(np.abs(z_p) <= 1.0), "z_p left [-1, 1] at iteration %d" % iteration
        assert np.all((y_p >= 0.0) & (y_p <= 1.0)), "y_p left [0, 1] at iteration %d" % iteration

    def run(self, truth = None, observer = None):
        """ truth -- optional (z, label) enabling the label_correct trace
                     column, and z_error unless z is None
            observer -- optional callable receiving a RecoveryState after
                        every step """
        config = self.config
        ckpt = self.ckpt
        rng = np.random.default_rng(config.seed)
        pixels = self.target.size
        check = config.assert_feasible or invert.debug
        reference = None
        if truth is not None:
            true_z = None if truth[0] is None else as_tensor(truth[0], shape = (ckpt.d_z,), name = "true z")
            reference = (true_z, int(truth[1]))

        z_p = rng.uniform(-1.0, 1.0, size = ckpt.d_z)
        y_p = np.zeros(ckpt.d_y)
        trace = RecoveryTrace()

        best = math.inf
        best_iteration = 0
        termination = TERMINATION_BUDGET
        initial = None

        self.log_info("starting (lambda=%g, budget %d)", self.lambda_, config.max_iterations)
        iteration = 0
        while iteration < config.max_iterations:
            try:
                recon, reg, g_z, g_y = _evaluate(self.target, ckpt, z_p, y_p, self.lambda_)
            except InvertNumericError as e:
                raise InvertNumericError("%s at iteration %d" % (e, iteration), layer = e.layer, iteration = iteration)
            total = recon + reg
            if initial is None:
                initial = (recon, reg)

            if iteration % config.trace_stride == 0:
                self._sample(trace, iteration, recon, reg, pixels, z_p, y_p, reference)
                self.log_debug("iteration %d: recon %.6g, reg %.6g", iteration, recon, reg)

            if best == math.inf or total < best - config.plateau_tolerance * abs(best):
                best = total
                best_iteration = iteration
            elif iteration - best_iteration >= config.plateau_window:
                termination = TERMINATION_CONVERGED
                break

            if iteration < config.schedule:
                alpha, beta = config.alpha, config.beta
            else:
                alpha, beta = config.alpha * 0.5, config.beta * 0.5

            z_p = z_p - alpha * g_z
            y_p = y_p - beta * g_y
            z_p = stochastic_clip(z_p, rng)
            y_p = project_unit_box(y_p)
            iteration += 1

            if check:
                self._check_feasible(z_p, y_p, iteration)
            if observer is not None:
                observer(RecoveryState(z_p, y_p, iteration, recon, reg))

        total, recon, reg = objective(self.target, ckpt, z_p, y_p, self.lambda_)
        if not math.isfinite(total):
            raise InvertNumericError("non-finite loss at iteration %d" % iteration, iteration = iteration)
        if not trace.iteration or trace.iteration[-1] < iteration:
            self._sample(trace, iteration, recon, reg, pixels, z_p, y_p, reference)

        result = RecoveryResult(z_p, y_p, recon, reg, initial[0], initial[1], iteration, termination, trace)
        self.log_info("finished: %s", result)
        return result

    def _sample(self, trace, iteration, recon, reg, pixels, z_p, y_p, truth):
        if truth:
            true_z, true_label = truth
            z_error = None if true_z is None else float(np.linalg.norm(true_z - z_p))
            trace.append(iteration, recon, reg, pixels, z_error, decode_label(y_p)[0] == true_label)
        else:
            trace.append(iteration, recon, reg, pixels)


def recover(target, ckpt, config, truth = None, observer = None, name = None):
    """ Recover (z_p, argmax y_p) from target. Identical (target, ckpt,
    config) give identical results. """
    return Recovery(target, ckpt, config, name = name).run(truth = truth, observer = observer)

def recover_batch(targets, ckpt, config, jobs = 1):
    """ Recover each LabeledImage independently, target n using seed
    config.seed + n. Results are aligned with targets; a target that raises
    InvertException yields a failed result instead of aborting the batch. """
    if not targets:
        raise InvertValueError("recover_batch needs at least one target")
    config.validate()

    def run(n):
        image = targets[n]
        truth = (image.z, image.label)
        try:
            return recover(image.pixels, ckpt, config.with_seed(config.seed + n), truth = truth, name = image.id)
        except InvertException as e:
            return RecoveryResult.failed(e)

    if jobs <= 1:
        return [ run(n) for n in range(len(targets)) ]
    with ThreadPoolExecutor(max_workers = jobs) as pool:
        return list(pool.map(run, range(len(targets))))

#------------------------------------------------------------------------
# Recovery process snapshots
#------------------------------------------------------------------------

PROCESS_ITERATIONS = (10, 100, 1000, 10000)

def recovery_process(image, ckpt, config, iterations = PROCESS_ITERATIONS):
    """ Images along one recovery of LabeledImage image: the target, the
    generator output at the starting iterate, then at each of iterations.
    A run that stops early repeats its final output. """
    wanted = set(iterations)
    snapshots = {}

    def observer(state):
        if state.iteration in wanted:
            snapshots[state.iteration] = (state.z_p.copy(), state.y_p.copy())

    result = recover(image.pixels, ckpt, config, observer = observer, name = image.id)
    z_0 = np.random.default_rng(config.seed).uniform(-1.0, 1.0, size = ckpt.d_z)
    cells = [ image.pixels, ckpt.forward(z_0, np.zeros(ckpt.d_y))[0] ]
    for iteration in iterations:
        z_p, y_p = snapshots.get(iteration, (result.z_p, result.y_p))
        cells.append(ckpt.forward(z_p, y_p)[0])
    return cells

def process_grid(targets, ckpt, config, iterations = PROCESS_ITERATIONS):
    """ Mosaic with one row per target: target, start, then each snapshot.
    Target n runs with seed config.seed + n, as in recover_batch(). """
    if not targets:
        raise InvertValueError("process_grid needs at least one target")
    cells = []
    for n, image in enumerate(targets):
        cells += recovery_process(image, ckpt, config.with_seed(config.seed + n), iterations)
    return tile(cells, len(targets), 2 + len(iterations))
