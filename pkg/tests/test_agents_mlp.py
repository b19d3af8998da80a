"""Test the network, its gradients, the replay buffer and training."""

import numpy as np
import pytest

from oncobandit.agents.mlp import (
    MlpParams,
    ReplayBuffer,
    ScheduleKind,
    TrainSchedule,
    TrainState,
    dropout_masks,
    greedy_act,
    masked_loss,
    mlp_backward,
    mlp_forward,
    mlp_train,
    rms_step,
)
from oncobandit.core import derive_stream

from .utils import relative_error

EPS = 1e-6


def random_params(widths, seed):
    """Randomly initialized network with non-zero biases."""
    rng = np.random.default_rng(seed)
    params = MlpParams.initialize(widths, rng)
    return params.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))


def linear_buffer(rows=64, seed=0):
    """Two-arm buffer whose rewards are linear in a 3-dim context."""
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((3, 2))
    buffer = ReplayBuffer(3, 2)
    for _ in range(rows):
        x = rng.standard_normal(3)
        action = int(rng.integers(0, 2))
        buffer.add(x, action, float(x @ weights[:, action]))
    return buffer


def test_zero_weights_zero_outputs():
    """Ensure an all-zero network predicts zero."""
    params = MlpParams.zeros_like(MlpParams.initialize([4, 8, 3], np.random.default_rng(0)))
    assert np.array_equal(mlp_forward(params, np.ones(4)).outputs, np.zeros(3))


def test_identity_layer():
    """Ensure a single identity layer returns its input."""
    params = MlpParams([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -2.0, 3.0])
    cache = mlp_forward(params, x)
    assert np.array_equal(cache.outputs, x)
    assert np.array_equal(cache.hidden, x)
    assert params.representation_width == 3


def test_forward_rejects_wrong_width():
    """Ensure the context width must match the network."""
    with pytest.raises(ValueError, match="does not match"):
        mlp_forward(MlpParams.initialize([4, 3], np.random.default_rng(0)), np.ones(5))


@pytest.mark.parametrize("seed", range(20))
def test_input_gradient_matches_finite_differences(seed):
    """Ensure the input gradient agrees with central differences."""
    params = random_params([4, 6, 5, 3], seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.standard_normal(4)
    weights = rng.standard_normal(3)
    cache = mlp_forward(params, x)
    _, analytic = mlp_backward(params, cache, weights)
    numeric = np.zeros(4)
    for i in range(4):
        step = np.zeros(4)
        step[i] = EPS
        up = mlp_forward(params, x + step).outputs @ weights
        down = mlp_forward(params, x - step).outputs @ weights
        numeric[i] = (up - down) / (2 * EPS)
    assert relative_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_parameter_gradient_matches_finite_differences(seed):
    """Ensure masked-loss parameter gradients agree with central differences."""
    params = random_params([3, 5, 4], seed)
    rng = np.random.default_rng(200 + seed)
    contexts = rng.standard_normal((6, 3))
    actions = rng.integers(0, 4, size=6)
    rewards = rng.standard_normal(6)
    _, grads = masked_loss(params, contexts, actions, rewards)
    for array, grad in zip(params.arrays(), grads.arrays(), strict=True):
        numeric = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + EPS
            up, _ = masked_loss(params, contexts, actions, rewards)
            array[index] = original - EPS
            down, _ = masked_loss(params, contexts, actions, rewards)
            array[index] = original
            numeric[index] = (up - down) / (2 * EPS)
        assert relative_error(grad, numeric) < 1e-4


def test_dropout_gradient_matches_finite_differences():
    """Ensure gradients through a fixed dropout mask agree with central differences."""
    params = random_params([3, 8, 2], 7)
    rng = np.random.default_rng(8)
    contexts = rng.standard_normal((5, 3))
    actions = rng.integers(0, 2, size=5)
    rewards = rng.standard_normal(5)
    masks = dropout_masks(params, 0.5, rng, batch=5)
    _, grads = masked_loss(params, contexts, actions, rewards, masks)
    w = params.weights[0]
    numeric = np.zeros_like(w)
    for index in np.ndindex(w.shape):
        original = w[index]
        w[index] = original + EPS
        up, _ = masked_loss(params, contexts, actions, rewards, masks)
        w[index] = original - EPS
        down, _ = masked_loss(params, contexts, actions, rewards, masks)
        w[index] = original
        numeric[index] = (up - down) / (2 * EPS)
    assert relative_error(grads.weights[0], numeric) < 1e-4


def test_unplayed_arms_get_no_gradient():
    """Ensure only the played arm's head receives gradient."""
    params = random_params([3, 5, 4], 1)
    contexts = np.random.default_rng(1).standard_normal((8, 3))
    _, grads = masked_loss(params, contexts, np.zeros(8, dtype=int), np.ones(8))
    assert np.all(grads.weights[-1][:, 1:] == 0.0)
    assert np.all(grads.biases[-1][1:] == 0.0)
    assert np.any(grads.weights[-1][:, 0] != 0.0)


@pytest.mark.parametrize(
    ("predictions", "expected"),
    [
        ([0, 1, 0, 0, 0, 0, 0], 1),
        ([0, 0, 0, 0, 0, 0, 0], 0),
        ([0.3, 0.1, 0.3, -1, 0, 0, 0], 0),
    ],
)
def test_greedy_act(predictions, expected):
    """Ensure the highest prediction wins and ties go to the lowest index."""
    params = MlpParams([np.zeros((2, 7))], [np.array(predictions, dtype=float)])
    assert greedy_act(params, np.ones(2)) == expected


def test_dropout_masks_keep_one_draws_nothing():
    """Ensure keep = 1 is a no-op that leaves the stream untouched."""
    params = MlpParams.initialize([3, 4, 4, 2], np.random.default_rng(0))
    rng = derive_stream(0, "test")
    twin = derive_stream(0, "test")
    assert dropout_masks(params, 1.0, rng) == [None, None]
    assert rng.random() == twin.random()


def test_dropout_masks_scale():
    """Ensure kept units are scaled by 1/keep."""
    params = MlpParams.initialize([3, 1000, 2], np.random.default_rng(0))
    (mask,) = dropout_masks(params, 0.8, derive_stream(0, "test"))
    assert set(np.unique(mask)) <= {0.0, 1.25}
    assert abs(np.mean(mask > 0) - 0.8) < 0.05


def test_replay_buffer_replicas():
    """Ensure replicas only see rows included for them."""
    buffer = ReplayBuffer(2, 3, replicas=2)
    buffer.add([0.0, 1.0], 0, 1.0, mask=[1, 0])
    buffer.add([1.0, 0.0], 2, 0.5, mask=[0, 1])
    buffer.add([1.0, 1.0], 2, 0.0)
    assert len(buffer) == 3
    assert buffer.included(0).tolist() == [0, 2]
    assert buffer.included(1).tolist() == [1, 2]
    assert buffer.action_counts().tolist() == [1, 0, 2]
    assert buffer.action_counts(replica=0).tolist() == [1, 0, 1]
    rows = buffer.sample(100, derive_stream(0, "test"), replica=1)
    assert set(rows.tolist()) <= {1, 2}
    assert buffer.contexts.shape == (3, 2)


def test_replay_buffer_rejects_wrong_shape():
    """Ensure contexts must match the buffer width."""
    with pytest.raises(ValueError, match="context shape"):
        ReplayBuffer(2, 3).add([1.0, 2.0, 3.0], 0, 1.0)


def test_training_reduces_loss():
    """Ensure 100 fixed-rate steps lower the loss on linear data."""
    buffer = linear_buffer()
    params = MlpParams.initialize([3, 16, 2], np.random.default_rng(1))
    before, _ = masked_loss(params, buffer.contexts, buffer.actions, buffer.rewards)
    trained = mlp_train(
        params,
        buffer,
        TrainSchedule(ScheduleKind.FIXED, rate=0.01),
        steps=100,
        batch=16,
        rng=derive_stream(0, "train"),
    )
    after, _ = masked_loss(trained, buffer.contexts, buffer.actions, buffer.rewards)
    assert after < before
    # the input parameters are left alone
    assert not np.array_equal(trained.weights[0], params.weights[0])


def test_training_rejects_empty_buffer():
    """Ensure training needs data."""
    params = MlpParams.initialize([3, 2], np.random.default_rng(0))
    with pytest.raises(ValueError, match="empty buffer"):
        mlp_train(
            params, ReplayBuffer(3, 2), TrainSchedule(), steps=1, batch=1, rng=derive_stream(0, "t")
        )


def test_rms_accumulator_starts_at_one():
    """Ensure the first update divides by sqrt(rho + (1 - rho) g^2)."""
    grad = np.array([1.0, -2.0])
    array = np.zeros(2)
    state = TrainState()
    rate = rms_step([array], [grad], TrainSchedule(ScheduleKind.FIXED, rate=0.1), state)
    assert rate == 0.1
    np.testing.assert_allclose(array, -0.1 * grad / (np.sqrt(0.9 + 0.1 * grad**2) + 1e-6))
    np.testing.assert_allclose(state.second_moments[0], 0.9 + 0.1 * grad**2)


def test_rms3_training_stays_stable():
    """Ensure the rate-1 RMS3 schedule trains a network without blowing it up."""
    buffer = linear_buffer()
    params = MlpParams.initialize([3, 16, 2], np.random.default_rng(1))
    before, _ = masked_loss(params, buffer.contexts, buffer.actions, buffer.rewards)
    trained = mlp_train(
        params,
        buffer,
        TrainSchedule(ScheduleKind.RMS3, rate=1.0),
        steps=300,
        batch=16,
        rng=derive_stream(0, "train"),
    )
    after, _ = masked_loss(trained, buffer.contexts, buffer.actions, buffer.rewards)
    assert trained.is_finite()
    assert after < before


def test_rms3_clock_continues():
    """Ensure RMS3 starts at rate 1 and keeps decaying across calls."""
    buffer = linear_buffer()
    params = MlpParams.initialize([3, 4, 2], np.random.default_rng(2))
    schedule = TrainSchedule(ScheduleKind.RMS3, rate=1.0)
    state = TrainState()
    rng = derive_stream(0, "train")
    params = mlp_train(params, buffer, schedule, steps=5, batch=8, rng=rng, state=state)
    assert state.last_rates[0] == 1.0
    mlp_train(params, buffer, schedule, steps=5, batch=8, rng=rng, state=state)
    assert state.last_rates[0] == pytest.approx(0.5)
    assert state.clock == 10


def test_rms2_clock_resets():
    """Ensure RMS2 restarts its rate at every training call."""
    buffer = linear_buffer()
    params = MlpParams.initialize([3, 4, 2], np.random.default_rng(2))
    schedule = TrainSchedule(ScheduleKind.RMS2, rate=0.1)
    state = TrainState()
    rng = derive_stream(0, "train")
    for _ in range(3):
        params = mlp_train(params, buffer, schedule, steps=5, batch=8, rng=rng, state=state)
        assert state.last_rates[0] == 0.1
        assert state.last_rates[-1] < 0.1
