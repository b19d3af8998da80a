"""Test the uniform reference policy."""

import numpy as np
import pytest

from oncobandit.agents.reference import uniform_act
from oncobandit.core import derive_stream


def test_single_arm_is_always_zero():
    """Ensure k = 1 can only pick arm 0."""
    rng = derive_stream(0, "explore")
    assert {int(uniform_act(1, rng)) for _ in range(100)} == {0}


def test_arm_frequencies():
    """Ensure 70,000 draws over 7 arms land within 2% of 1/7 each."""
    rng = derive_stream(0, "explore")
    draws = [int(uniform_act(7, rng)) for _ in range(70_000)]
    frequencies = np.bincount(draws, minlength=7) / len(draws)
    assert frequencies.shape == (7,)
    assert np.all(np.abs(frequencies - 1 / 7) <= 0.02)


def test_sequence_is_reproducible():
    """Ensure a fixed stream replays the same choices and another seed does not."""
    stream = derive_stream(3, "explore")
    twin = derive_stream(3, "explore")
    other = derive_stream(4, "explore")
    first = [int(uniform_act(7, stream)) for _ in range(50)]
    assert first == [int(uniform_act(7, twin)) for _ in range(50)]
    assert first != [int(uniform_act(7, other)) for _ in range(50)]


def test_rejects_no_arms():
    """Ensure k must be positive."""
    with pytest.raises(ValueError, match="at least 1"):
        uniform_act(0, derive_stream(0, "explore"))
