"""Label space, softmax, adjacent differences, prediction rules."""

import numpy as np
import pytest

from uniord import autodiff as ad
from uniord.autodiff import Tape
from uniord.ordinal import (
    LabelSpace,
    adjacent_diff,
    predict_argmax,
    predict_expectation,
    softmax,
)


def test_label_space_basics():
    ls = LabelSpace(4)
    assert list(ls.labels) == [1, 2, 3, 4]
    assert ls.n_adjacent_pairs == 3
    ls.validate_label(1)
    ls.validate_label(4)
    with pytest.raises(ValueError):
        ls.validate_label(0)
    with pytest.raises(ValueError):
        ls.validate_label(5)
    with pytest.raises(ValueError):
        LabelSpace(1)


def test_softmax_uniform():
    assert np.allclose(softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-12)


def test_softmax_large_inputs_no_overflow():
    p = softmax(np.array([1000.0, 1000.0]))
    assert np.all(np.isfinite(p))
    assert np.allclose(p, [0.5, 0.5], atol=1e-12)


def test_softmax_direct_evaluation():
    p = softmax(np.array([1.0, 2.0, 1.0]))
    e = np.exp(1.0)
    e2 = np.exp(2.0)
    assert np.allclose(p, [e / (2 * e + e2), e2 / (2 * e + e2), e / (2 * e + e2)], atol=1e-12)
    assert np.allclose(p, [0.2119, 0.5761, 0.2119], atol=5e-5)


def test_softmax_preserves_pairwise_order():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.normal(size=6) * rng.uniform(0.1, 5)
        p = softmax(s)
        for j in range(5):
            assert (s[j] < s[j + 1]) == (p[j] < p[j + 1])


def test_adjacent_diff_directions():
    assert np.array_equal(adjacent_diff(np.array([3.0, 2.0, 1.0])), [1.0, 1.0])
    assert np.array_equal(adjacent_diff(np.array([1.0, 2.0, 3.0]), direction="r2l"), [1.0, 1.0])
    v = np.array([0.3, -1.2, 4.0, 4.0])
    assert np.allclose(adjacent_diff(v) + adjacent_diff(v, direction="r2l"), 0.0, atol=0)


def test_adjacent_diff_linearity():
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=5), rng.normal(size=5)
    a, b = 2.3, -0.7
    lhs = adjacent_diff(a * u + b * v)
    rhs = a * adjacent_diff(u) + b * adjacent_diff(v)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_adjacent_diff_errors():
    with pytest.raises(ValueError):
        adjacent_diff(np.array([1.0]))
    with pytest.raises(ValueError):
        adjacent_diff(np.array([1.0, 2.0]), direction="up")


def test_adjacent_diff_on_tape_values():
    tape = Tape()
    v = tape.leaf(np.array([3.0, 2.0, 1.0]))
    d = adjacent_diff(v)
    assert np.array_equal(d.value, [1.0, 1.0])
    r = adjacent_diff(v, direction="r2l")
    assert np.array_equal(r.value, [-1.0, -1.0])
    ad.backward(ad.vsum(r))
    assert np.array_equal(v.grad, [-1.0, 0.0, 1.0])


def test_predict_argmax():
    assert predict_argmax(np.array([0.1, 0.2, 0.4, 0.3])) == 3
    assert predict_argmax(np.array([0.5, 0.5])) == 1  # tie toward smaller label
    one_hot = np.zeros(6)
    one_hot[4] = 1.0
    assert predict_argmax(one_hot) == 5


def test_predict_argmax_shift_invariant_through_softmax():
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = rng.normal(size=7)
        assert predict_argmax(softmax(s)) == predict_argmax(softmax(s + 11.5))


def test_predict_expectation():
    one_hot = np.zeros(4)
    one_hot[2] = 1.0
    assert predict_expectation(one_hot) == 3
    assert predict_expectation(np.full(5, 0.2)) == 3  # mean 3
    assert predict_expectation(np.array([0.5, 0.0, 0.5])) == 2  # mean 2
    # half-way rounds away from zero: mean 1.5 -> 2
    assert predict_expectation(np.array([0.5, 0.5])) == 2
    # rounding never escapes the label range
    assert predict_expectation(np.array([1.0, 0.0])) == 1
    assert predict_expectation(np.array([0.0, 1.0])) == 2
