"""Test the conjugate linear posterior and the LinearTS agent."""

import numpy as np
import pytest

from oncobandit.agents import AgentSpec, make_agent
from oncobandit.agents.linear import (
    NigPosterior,
    nig_sample,
    nig_thompson_act,
    nig_update,
    with_intercept,
)
from oncobandit.core import derive_stream
from oncobandit.errors import PosteriorError


def test_no_observations_is_prior():
    """Ensure a fresh posterior is the prior."""
    p = NigPosterior.prior(3, 0.25, 6.0, 6.0)
    batch = NigPosterior.from_batch(np.zeros((0, 3)), np.zeros(0), 0.25, 6.0, 6.0)
    assert np.array_equal(p.precision, 0.25 * np.eye(3))
    assert np.array_equal(batch.precision, p.precision)
    assert np.array_equal(batch.mean, p.mean)
    assert (batch.a, batch.b, batch.count) == (6.0, 6.0, 0)


def test_intercept_only_update():
    """Ensure the intercept-only worked example."""
    p = nig_update(NigPosterior.prior(1, 0.25, 6.0, 6.0), np.array([1.0]), 2.0)
    assert p.precision[0, 0] == pytest.approx(1.25)
    assert p.mean[0] == pytest.approx(1.6)
    assert p.a == pytest.approx(6.5)
    assert p.b == pytest.approx(6.4)
    assert p.count == 1


def test_sequential_matches_batch():
    """Ensure 200 sequential updates equal the closed-form batch posterior."""
    rng = np.random.default_rng(17)
    features = with_intercept(rng.standard_normal((200, 20)))
    targets = features @ rng.standard_normal(21) + 0.3 * rng.standard_normal(200)
    p = NigPosterior.prior(21, 0.25, 6.0, 6.0)
    for x, y in zip(features, targets, strict=True):
        p = nig_update(p, x, y)
    batch = NigPosterior.from_batch(features, targets, 0.25, 6.0, 6.0)
    np.testing.assert_allclose(p.mean, batch.mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(p.precision, batch.precision, rtol=1e-8)
    assert p.a == pytest.approx(batch.a, rel=1e-8)
    assert p.b == pytest.approx(batch.b, rel=1e-8)
    assert np.allclose(p.precision, p.precision.T)
    assert np.all(np.linalg.eigvalsh(p.precision) > 0)


@pytest.mark.parametrize(
    ("x", "y", "msg"),
    [
        (np.ones(2), 1.0, "does not match"),
        (np.array([1.0, np.nan, 1.0]), 1.0, "non-finite"),
        (np.ones(3), np.inf, "non-finite"),
    ],
)
def test_update_rejects_bad_input(x, y, msg):
    """Ensure malformed observations raise a posterior error."""
    with pytest.raises(PosteriorError, match=msg):
        nig_update(NigPosterior.prior(3, 0.25, 6.0, 6.0), x, y)


def test_sample_rejects_indefinite_precision():
    """Ensure sampling a broken posterior fails loudly."""
    p = NigPosterior(-np.eye(2), np.zeros(2), 6.0, 6.0, 0, 0.25, 6.0, 6.0)
    with pytest.raises(PosteriorError, match="positive definite"):
        nig_sample(p, derive_stream(0, "test"))


@pytest.mark.slow
def test_symmetric_priors_uniform_choice():
    """Ensure identical priors pick every arm about equally often."""
    posteriors = [NigPosterior.prior(3, 0.25, 6.0, 6.0)] * 7
    rng = derive_stream(1, "test")
    counts = np.bincount(
        [nig_thompson_act(posteriors, np.zeros(2), rng) for _ in range(10_000)], minlength=7
    )
    assert np.all(np.abs(counts / 10_000 - 1 / 7) < 0.02)


def test_trained_arm_dominates():
    """Ensure an arm with a clearly higher posterior mean is almost always chosen."""
    x = with_intercept(np.array([1.0]))
    posteriors = []
    for arm in range(3):
        p = NigPosterior.prior(2, 0.25, 6.0, 6.0)
        for _ in range(500):
            p = nig_update(p, x, 1.0 if arm == 0 else 0.0)
        posteriors.append(p)
    rng = derive_stream(2, "test")
    chosen = [nig_thompson_act(posteriors, np.array([1.0]), rng) for _ in range(1_000)]
    assert chosen.count(0) >= 990


def test_single_arm():
    """Ensure one arm is always arm 0."""
    posteriors = [NigPosterior.prior(2, 0.25, 6.0, 6.0)]
    assert nig_thompson_act(posteriors, np.zeros(1), derive_stream(0, "test")) == 0


def test_agent_updates_played_arm_only():
    """Ensure only the played arm's posterior changes."""
    agent = make_agent(AgentSpec.from_config("linear"), num_actions=3, context_dim=2, seed=4)
    agent.update(np.array([0.5, -1.0]), 1, 0.7)
    assert [p.count for p in agent.posteriors] == [0, 1, 0]
    assert agent.posteriors[1].dim == 3
    assert agent.t == 1


def test_agent_deterministic_given_seed():
    """Ensure the same seed replays the same actions."""

    def play(seed):
        agent = make_agent(
            AgentSpec.from_config("linear", {"initial_pulls": 0}),
            num_actions=4,
            context_dim=2,
            seed=seed,
        )
        rng = np.random.default_rng(0)
        actions = []
        for _ in range(50):
            x = rng.standard_normal(2)
            action = agent.act(x)
            agent.update(x, action, float(x[0] * action))
            actions.append(int(action))
        return actions

    assert play(3) == play(3)
    assert play(3) != play(4)
