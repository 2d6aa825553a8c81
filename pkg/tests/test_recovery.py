""" Unit tests for latent and label recovery """

import math

import pytest
import numpy as np

import invert
from invert.recovery import RecoveryTrace, RecoveryState, config_digest
from invert.diffnet import finite_difference_gradient

from tests.shared import relative_error, tiny_dcgan_spec, smooth_generator, linear_generator, scaled_orthonormal

TRUE_Z = np.array([ 0.3, -0.2, 0.1 ])
TRUE_Y = np.array([ 0.4, 0.6 ])

@pytest.fixture(scope = "module")
def linear():
    """ A linear generator with orthonormal columns scaled by 0.5, so that
    the loss is 0.25 * ||w - w*||^2 and each unit step halves the distance
    to the optimum without leaving the feasible box. """
    rng = np.random.default_rng(5)
    weight = scaled_orthonormal(rng, 16, 5, 0.5)
    return linear_generator(weight, np.zeros(16), 3, 2, (1, 4, 4))

@pytest.fixture(scope = "module")
def linear_target(linear):
    return invert.generate(linear, TRUE_Z, TRUE_Y)

@pytest.fixture(scope = "module")
def ckpt():
    return invert.build_generator(tiny_dcgan_spec(), 1)

@pytest.fixture(scope = "module")
def smooth():
    return smooth_generator()

def target_for(ckpt, seed = 0, label = 1):
    z = invert.sample_latent(np.random.default_rng(seed), 1, ckpt.d_z)[0]
    return invert.generate(ckpt, z, invert.one_hot(label, ckpt.d_y)), z

#------------------------------------------------------------------------
# Objective
#------------------------------------------------------------------------

def test_objective_decomposition(smooth):
    target, z = target_for(smooth)
    y = np.array([ 0.2, 0.3, 0.9, 0.1 ])
    total, recon, reg = invert.objective(target, smooth, z, y, 0.25)
    assert reg == pytest.approx(0.25 * 0.5)
    assert recon == pytest.approx(np.sum((target - invert.generate(smooth, z, y)) ** 2))
    assert total == recon + reg

def test_objective_zero_at_truth(smooth):
    target, z = target_for(smooth, label = 2)
    total, recon, reg = invert.objective(target, smooth, z, invert.one_hot(2, smooth.d_y), 0.25)
    assert recon == 0.0
    assert reg == 0.0

def test_objective_gradients(smooth):
    rng = np.random.default_rng(8)
    target, _ = target_for(smooth, seed = 3)
    for trial in range(100):
        z = rng.uniform(-1, 1, smooth.d_z)
        # alternate sides of the regularizer kink at sum(y) = 1, clear of y = 0
        low, high = (0.01, 0.2) if trial % 2 else (0.5, 1.0)
        y = rng.uniform(low, high, smooth.d_y)
        g_z, g_y = invert.objective_gradients(target, smooth, z, y, 0.25)
        numeric_z = finite_difference_gradient(lambda v: invert.objective(target, smooth, v, y, 0.25)[0], z)
        numeric_y = finite_difference_gradient(lambda v: invert.objective(target, smooth, z, v, 0.25)[0], y)
        assert relative_error(g_z, numeric_z) < 1e-6
        assert relative_error(g_y, numeric_y) < 1e-6

def test_objective_gradients_below_one_hot(smooth):
    target, _ = target_for(smooth)
    z = np.zeros(smooth.d_z)
    y = np.full(smooth.d_y, 0.1)
    _, with_reg = invert.objective_gradients(target, smooth, z, y, 0.5)
    _, without = invert.objective_gradients(target, smooth, z, y, 0.0)
    assert with_reg - without == pytest.approx(np.full(smooth.d_y, -0.5))

def test_objective_gradients_zero_at_minimum(smooth):
    target, z = target_for(smooth, seed = 4, label = 3)
    g_z, g_y = invert.objective_gradients(target, smooth, z, invert.one_hot(3, smooth.d_y), 0.25)
    assert np.all(g_z == 0.0)
    assert np.all(g_y == 0.0)

def test_objective_gradients_without_regularizer(smooth):
    target, _ = target_for(smooth)
    z = np.zeros(smooth.d_z)
    y = np.full(smooth.d_y, 0.9)
    _, with_reg = invert.objective_gradients(target, smooth, z, y, 0.5)
    _, without = invert.objective_gradients(target, smooth, z, y, 0.0)
    assert with_reg - without == pytest.approx(np.full(smooth.d_y, 0.5))

def test_objective_shape_mismatch(smooth):
    with pytest.raises(invert.InvertShapeError):
        invert.objective(np.zeros((1, 5, 5)), smooth, np.zeros(smooth.d_z), np.zeros(smooth.d_y), 0.25)

#------------------------------------------------------------------------
# Constraint handling
#------------------------------------------------------------------------

def test_stochastic_clip():
    rng = np.random.default_rng(0)
    z = np.array([ 0.5, -1.0, 1.0, 1.5, -7.0, 0.0 ])
    clipped = invert.stochastic_clip(z, rng)
    assert list(clipped[:3]) == [ 0.5, -1.0, 1.0 ]
    assert clipped[5] == 0.0
    assert np.all(np.abs(clipped[3:5]) < 1.0)
    assert z[3] == 1.5

def test_stochastic_clip_distribution():
    rng = np.random.default_rng(1)
    n = 100000
    values = invert.stochastic_clip(np.full(n, 3.0), rng)
    assert np.all(np.abs(values) < 1.0)
    # uniform(-1, 1): variance 1/3
    assert abs(values.mean()) < 3 * np.sqrt(1.0 / 3 / n)
    assert values.var() == pytest.approx(1.0 / 3, abs = 0.01)
    assert np.mean(values > 0) == pytest.approx(0.5, abs = 0.01)

class ScriptedUniform(object):
    """ Stands in for a Generator: uniform() replays scripted draws. """

    def __init__(self, *draws):
        self.draws = [ np.array(d, dtype = np.float64) for d in draws ]
        self.sizes = []

    def uniform(self, low, high, size):
        self.sizes.append(size)
        return self.draws.pop(0)

def test_stochastic_clip_redraws_lower_edge():
    rng = ScriptedUniform([ -1.0, 0.25, -1.0 ], [ -1.0, 0.5 ], [ -0.75 ])
    clipped = invert.stochastic_clip([ 2.0, 0.1, -3.0, 5.0 ], rng)
    assert list(clipped) == [ -0.75, 0.1, 0.25, 0.5 ]
    assert rng.sizes == [ 3, 2, 1 ]

def test_project_unit_box():
    assert list(invert.project_unit_box([ -0.5, 0.25, 1.5 ])) == [ 0.0, 0.25, 1.0 ]

@pytest.mark.parametrize("y, label, tied", [
    ([ 0.1, 0.7, 0.2 ], 1, False),
    ([ 0.5, 0.0, 0.5 ], 0, True),
    ([ 0.0, 0.0, 0.0 ], 0, True),
    ([ 0.0, 0.3, 0.3 ], 1, True),
])
def test_decode_label(y, label, tied):
    assert invert.decode_label(y) == (label, tied)

#------------------------------------------------------------------------
# Configuration
#------------------------------------------------------------------------

def test_config_defaults():
    config = invert.RecoveryConfig()
    assert (config.alpha, config.beta) == (1.0, 1.0)
    assert config.schedule == 50000
    assert config.max_iterations == 100000
    assert config.weight(10) == pytest.approx(0.1)
    assert invert.RecoveryConfig(lambda_ = 0.3).weight(10) == 0.3
    assert invert.RecoveryConfig(lambda_ = 0.3, use_regularizer = False).weight(10) == 0.0

@pytest.mark.parametrize("key, value", [
    ("alpha", 0), ("beta", -1), ("lambda", -0.1), ("max_iterations", 0),
    ("schedule", -1), ("plateau_window", 0), ("trace_stride", 0),
])
def test_config_invalid(key, value):
    with pytest.raises(invert.InvertValueError):
        invert.RecoveryConfig.from_dict({ key : value })

def test_config_unknown_key():
    with pytest.raises(invert.InvertConfigError):
        invert.RecoveryConfig.from_dict({ "learning_rate" : 0.1 })

def test_config_dict_and_digest():
    config = invert.RecoveryConfig.from_dict({ "lambda" : 0.2, "seed" : 4 })
    assert config.lambda_ == 0.2
    assert config.to_dict()["lambda"] == 0.2
    assert invert.RecoveryConfig.from_dict(config.to_dict()) == config
    assert config.digest() == invert.RecoveryConfig(lambda_ = 0.2, seed = 4).digest()
    assert config.digest() != config.with_seed(5).digest()
    assert config_digest({ "b" : 1, "a" : 2 }) == config_digest({ "a" : 2, "b" : 1 })
    assert len(config.digest()) == 64

#------------------------------------------------------------------------
# Recovery loop
#------------------------------------------------------------------------

def test_recovers_linear_optimum(linear, linear_target):
    config = invert.RecoveryConfig(use_regularizer = False, max_iterations = 2000, plateau_window = 50)
    result = invert.recover(linear_target, linear, config, truth = (TRUE_Z, 1))
    weight = linear.params["dense1.weight"]
    expected, *_ = np.linalg.lstsq(weight, linear_target.reshape(-1), rcond = None)
    assert result.termination == invert.TERMINATION_CONVERGED
    assert result.iterations < 2000
    assert np.allclose(result.z_p, expected[:3], atol = 1e-6)
    assert np.allclose(result.y_p, expected[3:], atol = 1e-6)
    assert result.label == 1
    assert result.recon < 1e-12
    assert result.trace.label_correct[-1] is True
    assert result.trace.z_error[-1] < 1e-6

def test_step_schedule(linear, linear_target):
    config = invert.RecoveryConfig(alpha = 0.4, beta = 0.4, schedule = 3, max_iterations = 6,
                                   use_regularizer = False, plateau_window = 100)
    states = []
    invert.recover(linear_target, linear, config, observer = lambda state: states.append(state))
    assert [ state.iteration for state in states ] == [ 1, 2, 3, 4, 5, 6 ]
    for before, after in zip(states, states[1:]):
        g_z, g_y = invert.objective_gradients(linear_target, linear, before.z_p, before.y_p, 0.0)
        step = 0.4 if before.iteration < 3 else 0.2
        assert np.allclose(after.z_p, before.z_p - step * g_z, atol = 1e-12)
        assert np.allclose(after.y_p, before.y_p - step * g_y, atol = 1e-12)

def test_instrumented_run_through_halving(linear, linear_target):
    """ Past the default 50k schedule with every iterate checked. Steps are
    small enough that the iterate neither converges nor touches the box. """
    config = invert.RecoveryConfig(alpha = 1e-6, beta = 1e-6, max_iterations = 50010, plateau_window = 10 ** 6,
                                   plateau_tolerance = 0.0, seed = 4, trace_stride = 10000, assert_feasible = True)
    lambda_ = config.weight(linear.d_y)
    window = {}
    violations = []
    def observer(state):
        if np.any(np.abs(state.z_p) > 1.0) or np.any((state.y_p < 0.0) | (state.y_p > 1.0)):
            violations.append(state.iteration)
        if state.iteration == 1 or state.iteration >= 49995:
            window[state.iteration] = state
    result = invert.recover(linear_target, linear, config, observer = observer)
    assert result.iterations == 50010
    assert violations == []

    # y_p starts at the zero vector
    z_0 = np.random.default_rng(4).uniform(-1.0, 1.0, size = linear.d_z)
    g_z, g_y = invert.objective_gradients(linear_target, linear, z_0, np.zeros(linear.d_y), lambda_)
    assert np.allclose(window[1].y_p, invert.project_unit_box(-1e-6 * g_y), rtol = 0, atol = 1e-15)
    assert np.allclose(window[1].z_p, z_0 - 1e-6 * g_z, rtol = 0, atol = 1e-15)

    # steps from iterations below 50000 use alpha, all later ones alpha / 2
    for k in range(49995, 50010):
        before, after = window[k], window[k + 1]
        g_z, g_y = invert.objective_gradients(linear_target, linear, before.z_p, before.y_p, lambda_)
        step = 1e-6 if k < 50000 else 0.5e-6
        assert np.allclose(after.z_p, before.z_p - step * g_z, rtol = 0, atol = 1e-14)
        assert np.allclose(after.y_p, before.y_p - step * g_y, rtol = 0, atol = 1e-14)
        other = 0.5e-6 if k < 50000 else 1e-6
        assert not np.allclose(after.z_p, before.z_p - other * g_z, rtol = 0, atol = 1e-14)

def test_initial_state(ckpt):
    target, _ = target_for(ckpt)
    config = invert.RecoveryConfig(max_iterations = 1, seed = 9)
    result = invert.recover(target, ckpt, config)
    assert result.initial_reg == pytest.approx(1.0 / ckpt.d_y)
    z0 = np.random.default_rng(9).uniform(-1.0, 1.0, size = ckpt.d_z)
    assert result.initial_recon == pytest.approx(invert.objective(target, ckpt, z0, np.zeros(ckpt.d_y), 0.0)[1])

def test_iterates_stay_feasible(ckpt):
    target, _ = target_for(ckpt, seed = 4)
    config = invert.RecoveryConfig(alpha = 5.0, beta = 5.0, max_iterations = 200, assert_feasible = True)
    def observer(state):
        assert np.all(np.abs(state.z_p) <= 1.0)
        assert np.all((state.y_p >= 0.0) & (state.y_p <= 1.0))
    result = invert.recover(target, ckpt, config, observer = observer)
    assert result.iterations == 200

def test_loss_decreases(ckpt):
    target, _ = target_for(ckpt, seed = 2, label = 3)
    config = invert.RecoveryConfig(alpha = 0.05, beta = 0.05, max_iterations = 300)
    result = invert.recover(target, ckpt, config)
    assert result.total < result.initial_recon + result.initial_reg

def test_deterministic(ckpt):
    target, z = target_for(ckpt, seed = 6)
    config = invert.RecoveryConfig(max_iterations = 50, trace_stride = 5, seed = 3)
    a = invert.recover(target, ckpt, config, truth = (z, 1))
    b = invert.recover(target, ckpt, config, truth = (z, 1))
    assert np.array_equal(a.z_p, b.z_p)
    assert np.array_equal(a.y_p, b.y_p)
    assert a.trace.rows() == b.trace.rows()

def test_seed_changes_start(ckpt):
    target, _ = target_for(ckpt)
    a = invert.recover(target, ckpt, invert.RecoveryConfig(max_iterations = 1, seed = 0))
    b = invert.recover(target, ckpt, invert.RecoveryConfig(max_iterations = 1, seed = 1))
    assert a.initial_recon != b.initial_recon

def test_budget_termination(ckpt):
    target, _ = target_for(ckpt)
    result = invert.recover(target, ckpt, invert.RecoveryConfig(max_iterations = 20, plateau_window = 1000))
    assert result.termination == invert.TERMINATION_BUDGET
    assert result.iterations == 20

def test_plateau_termination(ckpt):
    target, _ = target_for(ckpt)
    config = invert.RecoveryConfig(max_iterations = 1000, plateau_window = 5, plateau_tolerance = 1e9)
    result = invert.recover(target, ckpt, config)
    assert result.termination == invert.TERMINATION_CONVERGED
    assert result.iterations == 5

def test_trace_sampling(ckpt):
    target, z = target_for(ckpt)
    config = invert.RecoveryConfig(max_iterations = 35, trace_stride = 10, plateau_window = 1000)
    result = invert.recover(target, ckpt, config, truth = (z, 1))
    trace = result.trace
    assert trace.iteration == [ 0, 10, 20, 30, 35 ]
    assert trace.recon_sum[-1] == pytest.approx(result.recon)
    assert trace.recon_mse[-1] == pytest.approx(result.recon / target.size)
    assert trace.reg_term[0] == pytest.approx(1.0 / ckpt.d_y)
    assert all(isinstance(v, float) for v in trace.z_error)
    assert all(isinstance(v, bool) for v in trace.label_correct)

def test_trace_without_truth(ckpt):
    target, _ = target_for(ckpt)
    result = invert.recover(target, ckpt, invert.RecoveryConfig(max_iterations = 3, trace_stride = 1))
    assert result.trace.z_error == [ None ] * 4
    assert result.trace.label_correct == [ None ] * 4

def test_trace_label_only_truth(ckpt):
    target, _ = target_for(ckpt)
    result = invert.recover(target, ckpt, invert.RecoveryConfig(max_iterations = 3, trace_stride = 1),
                            truth = (None, 1))
    assert result.trace.z_error == [ None ] * 4
    assert all(v in (True, False) for v in result.trace.label_correct)

def test_trace_order():
    trace = RecoveryTrace()
    trace.append(0, 4.0, 0.1, 4)
    with pytest.raises(invert.InvertValueError):
        trace.append(0, 3.0, 0.1, 4)
    assert trace.recon_mse == [ 1.0 ]
    assert RecoveryTrace.from_rows(trace.rows()).rows() == trace.rows()

def test_target_out_of_range(ckpt):
    with pytest.raises(invert.InvertValueError):
        invert.recover(np.full(ckpt.image_shape, 1.5), ckpt, invert.RecoveryConfig(max_iterations = 1))

class FlakyCheckpoint(object):
    """ Delegates to a real checkpoint but returns a NaN image on one call. """

    def __init__(self, inner, bad_call):
        self.inner = inner
        self.bad_call = bad_call
        self.calls = 0
        self.d_z, self.d_y, self.image_shape = inner.d_z, inner.d_y, inner.image_shape

    def forward(self, z, y):
        image, tape = self.inner.forward(z, y)
        if self.calls == self.bad_call:
            image = np.full(image.shape, np.nan)
        self.calls += 1
        return image, tape

    def backward(self, tape, upstream):
        return self.inner.backward(tape, upstream)

def test_numeric_abort_reports_iteration(ckpt):
    target, _ = target_for(ckpt)
    with pytest.raises(invert.InvertNumericError) as excinfo:
        invert.recover(target, FlakyCheckpoint(ckpt, 7), invert.RecoveryConfig(max_iterations = 20))
    assert excinfo.value.iteration == 7
    assert "iteration 7" in str(excinfo.value)

def test_state_total():
    state = RecoveryState(np.zeros(2), np.zeros(2), 3, 1.5, 0.25)
    assert state.total == 1.75

#------------------------------------------------------------------------
# Batches
#------------------------------------------------------------------------

@pytest.fixture(scope = "module")
def targets(ckpt):
    return invert.generate_targets(ckpt, 6, np.random.default_rng(3))

def test_batch_of_one_matches_single(ckpt, targets):
    config = invert.RecoveryConfig(max_iterations = 30, seed = 2)
    [ batched ] = invert.recover_batch(targets[:1], ckpt, config)
    single = invert.recover(targets[0].pixels, ckpt, config, truth = (targets[0].z, targets[0].label))
    assert np.array_equal(batched.z_p, single.z_p)
    assert batched.trace.rows() == single.trace.rows()

def test_batch_uses_offset_seeds(ckpt, targets):
    config = invert.RecoveryConfig(max_iterations = 10, seed = 2)
    results = invert.recover_batch(targets, ckpt, config)
    third = invert.recover(targets[3].pixels, ckpt, config.with_seed(5))
    assert np.array_equal(results[3].z_p, third.z_p)

def test_batch_parallel_matches_serial(ckpt, targets):
    config = invert.RecoveryConfig(max_iterations = 20)
    serial = invert.recover_batch(targets, ckpt, config, jobs = 1)
    parallel = invert.recover_batch(targets, ckpt, config, jobs = 3)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.z_p, b.z_p)
        assert np.array_equal(a.y_p, b.y_p)

def test_batch_isolates_failures(ckpt, targets):
    bad = invert.LabeledImage(np.zeros((1, 3, 3)), 0, invert.PROVENANCE_REAL, "bad")
    results = invert.recover_batch([ targets[0], bad, targets[1] ], ckpt, invert.RecoveryConfig(max_iterations = 5))
    assert [ r.ok for r in results ] == [ True, False, True ]
    assert results[1].termination == invert.TERMINATION_FAILED
    assert isinstance(results[1].error, invert.InvertShapeError)
    assert math.isnan(results[1].recon)

def test_batch_size(ckpt):
    targets = invert.generate_targets(ckpt, 144, np.random.default_rng(0))
    results = invert.recover_batch(targets, ckpt, invert.RecoveryConfig(max_iterations = 2), jobs = 4)
    assert len(results) == 144
    assert all(r.ok for r in results)

def test_batch_empty(ckpt):
    with pytest.raises(invert.InvertValueError):
        invert.recover_batch([], ckpt, invert.RecoveryConfig())

#------------------------------------------------------------------------
# Process snapshots
#------------------------------------------------------------------------

def test_recovery_process(ckpt, targets):
    config = invert.RecoveryConfig(alpha = 0.05, beta = 0.05, max_iterations = 120, plateau_window = 1000, seed = 6)
    image = targets[0]
    cells = invert.recovery_process(image, ckpt, config, iterations = (10, 100, 1000))
    assert len(cells) == 5
    assert np.array_equal(cells[0], image.pixels)
    z_0 = np.random.default_rng(6).uniform(-1.0, 1.0, size = ckpt.d_z)
    assert np.array_equal(cells[1], invert.generate(ckpt, z_0, np.zeros(ckpt.d_y)))
    states = {}
    invert.recover(image.pixels, ckpt, config, observer = lambda state: states.setdefault(state.iteration, state))
    assert np.array_equal(cells[3], invert.generate(ckpt, states[100].z_p, states[100].y_p))
    # the run ends at 120, so the 1000 column shows the final iterate
    final = invert.recover(image.pixels, ckpt, config)
    assert np.array_equal(cells[4], invert.generate(ckpt, final.z_p, final.y_p))

def test_process_grid(ckpt, targets):
    config = invert.RecoveryConfig(max_iterations = 12, seed = 2)
    mosaic = invert.process_grid(targets[:2], ckpt, config, iterations = (1, 10))
    h, w = ckpt.image_shape[1:]
    assert mosaic.shape == (1, 2 * h, 4 * w)
    second = invert.recovery_process(targets[1], ckpt, config.with_seed(3), iterations = (1, 10))
    assert np.array_equal(mosaic[:, h:, 3 * w:], second[3])
    with pytest.raises(invert.InvertValueError):
        invert.process_grid([], ckpt, config)
