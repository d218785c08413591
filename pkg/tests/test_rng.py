import numpy as np
import pytest

from remind.rng import RNG_ALGORITHM, check_random_state, seeded_rng, split_rng


def test_same_seed_same_draws():
    a = seeded_rng(42).random(100)
    b = seeded_rng(42).random(100)
    np.testing.assert_array_equal(a, b)


def test_different_seeds_differ():
    assert not np.array_equal(seeded_rng(1).random(100), seeded_rng(2).random(100))


def test_algorithm_and_range():
    assert RNG_ALGORITHM == "PCG64"
    assert isinstance(seeded_rng(0).bit_generator, np.random.PCG64)
    seeded_rng(2**64 - 1)
    with pytest.raises(ValueError):
        seeded_rng(-1)
    with pytest.raises(ValueError):
        seeded_rng(2**64)


def test_split_is_reproducible_and_independent():
    a = [g.random(5) for g in split_rng(seeded_rng(3), 3)]
    b = [g.random(5) for g in split_rng(seeded_rng(3), 3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], a[1])


def test_check_random_state():
    g = seeded_rng(5)
    assert check_random_state(g) is g
    np.testing.assert_array_equal(check_random_state(None).random(3), seeded_rng(0).random(3))
    np.testing.assert_array_equal(check_random_state(7).random(3), seeded_rng(7).random(3))
    with pytest.raises(TypeError):
        check_random_state("7")
