"""Test the neural posterior approximations and their reductions."""

import numpy as np
import pytest

from oncobandit.agents import LEARNING_FAMILIES, AgentFamily, AgentSpec, make_agent
from oncobandit.agents.mlp import MlpParams, greedy_act
from oncobandit.agents.neural import (
    bootstrap_act,
    dropout_act,
    inclusion_mask,
    param_noise_act,
)
from oncobandit.core import derive_stream

SMALL_NET = {
    "hidden_width": 16,
    "training_freq": 10,
    "training_steps": 20,
    "batch_size": 32,
    "schedule": "rms3",
    "rate": 1.0,
}


def random_net(seed, widths=(5, 50, 7)):
    """Randomly initialized network."""
    rng = np.random.default_rng(seed)
    params = MlpParams.initialize(list(widths), rng)
    return params.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))


def best_arm_reward(x, action, best=2):
    """Constant-best-arm bandit: arm ``best`` pays 1, the others 0."""
    return 1.0 if action == best else 0.0


def play(spec, steps, seed=0, context_dim=2, num_actions=7, reward=best_arm_reward):
    """Run an agent against a context stream; return its actions and the agent."""
    agent = make_agent(spec, num_actions=num_actions, context_dim=context_dim, seed=seed)
    contexts = np.random.default_rng(1000 + seed).standard_normal((steps, context_dim))
    actions = []
    for x in contexts:
        action = int(agent.act(x))
        agent.update(x, action, reward(x, action))
        actions.append(action)
    return actions, agent


def test_dropout_keep_one_is_greedy():
    """Ensure keep = 1 never changes the greedy action."""
    rng = derive_stream(0, "test")
    for seed in range(20):
        params = random_net(seed)
        x = np.random.default_rng(seed).standard_normal(5)
        assert dropout_act(params, x, 1.0, rng) == greedy_act(params, x)


def test_dropout_explores():
    """Ensure a half-dropped network does not always agree with itself."""
    params = random_net(3)
    x = np.random.default_rng(3).standard_normal(5)
    rng = derive_stream(0, "test")
    assert len({int(dropout_act(params, x, 0.5, rng)) for _ in range(100)}) >= 2


def test_dropout_rejects_bad_keep():
    """Ensure keep lies in (0, 1]."""
    with pytest.raises(ValueError, match="keep"):
        dropout_act(random_net(0), np.zeros(5), 0.0, derive_stream(0, "test"))


def test_param_noise_zero_sigma_is_greedy():
    """Ensure zero noise reproduces the greedy action and counts as agreement."""
    rng = derive_stream(0, "test")
    for seed in range(20):
        params = random_net(seed)
        x = np.random.default_rng(seed).standard_normal(5)
        action, sigma = param_noise_act(params, x, 0.0, 0.01, rng)
        assert action == greedy_act(params, x)
        assert sigma == 0.0
    _, sigma = param_noise_act(random_net(0), np.ones(5), 1e-12, 0.01, rng)
    assert sigma == pytest.approx(1e-12 * 1.01)


def test_param_noise_adapts_on_action_disagreement_only():
    """Ensure sigma shrinks exactly when the perturbed action differs."""
    params = random_net(1)
    x = np.ones(5)
    clean = greedy_act(params, x)
    rng = derive_stream(0, "test")
    outcomes = set()
    for _ in range(50):
        action, sigma = param_noise_act(params, x, 100.0, 0.01, rng)
        expected = 100.0 / 1.01 if action != clean else 100.0 * 1.01
        assert sigma == pytest.approx(expected)
        outcomes.add(action == clean)
    # huge noise disagrees at least once
    assert False in outcomes


def test_param_noise_grows_while_actions_agree():
    """Ensure a large prediction gap alone does not shrink sigma."""
    biases = np.zeros(7)
    biases[0] = 100.0
    params = MlpParams([np.zeros((2, 7))], [biases])
    x = np.ones(2)
    rng = derive_stream(0, "test")
    sigma = 0.5
    for _ in range(200):
        action, grown = param_noise_act(params, x, sigma, 0.01, rng)
        assert action == 0
        assert grown == pytest.approx(sigma * 1.01)
        sigma = grown
    assert sigma > 0.5 * 1.01**199


def test_param_noise_rejects_negative_sigma():
    """Ensure sigma is non-negative."""
    with pytest.raises(ValueError, match="sigma"):
        param_noise_act(random_net(0), np.ones(5), -1.0, 0.01, derive_stream(0, "test"))


def test_inclusion_frequency():
    """Ensure each replica sees a datapoint with probability p."""
    rng = derive_stream(0, "test")
    masks = np.array([inclusion_mask(5, 0.85, rng) for _ in range(10_000)])
    assert np.all(np.abs(masks.mean(axis=0) - 0.85) < 0.02)
    assert np.all(masks.sum(axis=1) >= 1)


def test_inclusion_forces_one_replica():
    """Ensure a datapoint always reaches at least one replica."""
    rng = derive_stream(0, "test")
    for _ in range(100):
        assert inclusion_mask(3, 1e-9, rng).sum() == 1


def test_single_replica_is_greedy():
    """Ensure a one-network ensemble acts greedily."""
    params = random_net(4)
    x = np.ones(5)
    assert bootstrap_act([params], x, derive_stream(0, "test")) == greedy_act(params, x)


@pytest.mark.parametrize(
    ("family", "overrides"),
    [
        ("dropout", {"keep": 1.0}),
        ("bootstrap", {"q": 1, "p": 1.0}),
        ("param-noise", {"sigma": 0.0}),
    ],
)
def test_reductions_match_greedy(family, overrides):
    """Ensure degenerate settings replay the greedy agent's action log exactly."""
    greedy, _ = play(AgentSpec.from_config("greedy", SMALL_NET), 200)
    reduced, _ = play(AgentSpec.from_config(family, SMALL_NET | overrides), 200)
    assert reduced == greedy


def test_bootstrap_replicas_differ():
    """Ensure replicas train on different data and stay distinct."""
    spec = AgentSpec.from_config("bootstrap", SMALL_NET | {"q": 3, "p": 0.5})
    _, agent = play(spec, 60)
    assert len(agent.ensemble) == 3
    assert agent.params is agent.ensemble[0]
    assert not np.array_equal(agent.ensemble[0].weights[0], agent.ensemble[1].weights[0])
    counts = agent.buffer.masks.sum(axis=0)
    assert np.all(counts < 60)


def test_neural_linear_without_representation_is_linear_ts():
    """Ensure a frozen identity representation reproduces LinearTS."""

    def reward(x, action):
        return float(x[0] * (action - 1) + 0.1 * x[1])

    linear_actions, linear = play(AgentSpec.from_config("linear"), 150, reward=reward)
    neural_actions, neural = play(
        AgentSpec.from_config(
            "neural-linear",
            {"hidden_layers": 0, "train_representation": False, "a0": 6.0, "b0": 6.0},
        ),
        150,
        reward=reward,
    )
    assert neural_actions == linear_actions
    for mine, theirs in zip(neural.posteriors, linear.posteriors, strict=True):
        np.testing.assert_allclose(mine.mean, theirs.mean, rtol=0, atol=1e-10)
        np.testing.assert_allclose(mine.precision, theirs.precision, rtol=0, atol=1e-10)
        assert mine.a == theirs.a
        assert mine.b == pytest.approx(theirs.b, abs=1e-10)


def test_neural_linear_rebuild_counts():
    """Ensure rebuilt posteriors have seen exactly the buffer's rows."""
    spec = AgentSpec.from_config("neural-linear", SMALL_NET | {"schedule": "rms2", "rate": 0.1})
    _, agent = play(spec, 40)
    assert agent.t == 40
    assert [p.count for p in agent.posteriors] == agent.buffer.action_counts().tolist()
    assert agent.posteriors[0].dim == 17


def test_training_waits_for_period(mocker):
    """Ensure the network retrains once per training period after the prologue."""
    spec = AgentSpec.from_config("greedy", SMALL_NET)
    train = mocker.patch("oncobandit.agents.neural.NeuralGreedyAgent.train")
    play(spec, 45)
    # prologue is 14 decisions; periods close at 20, 30 and 40
    assert train.call_count == 3


@pytest.mark.slow
@pytest.mark.parametrize("family", LEARNING_FAMILIES)
@pytest.mark.parametrize("seed", range(5))
def test_converges_on_constant_best_arm(family, seed):
    """Ensure every learning agent settles on the best arm."""
    actions, _ = play(AgentSpec.from_config(family), 1_000, seed=seed)
    assert actions[-100:].count(2) >= 95


def test_greedy_family_default_rate():
    """Ensure the greedy network uses the fixed rate."""
    _, agent = play(AgentSpec.from_config(AgentFamily.NEURAL_GREEDY, {"training_freq": 5}), 20)
    assert agent.train_state.last_rates
    assert set(agent.train_state.last_rates) == {0.01}
