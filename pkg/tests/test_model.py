"""Predictor construction, forward passes, and checkpointing."""

import numpy as np
import pytest

from uniord import autodiff as ad
from uniord.autodiff import Tape
from uniord.model import (
    MLPSpec,
    ParameterSet,
    forward,
    forward_values,
    glorot_bound,
    init,
    load_checkpoint,
    save_checkpoint,
)


def spec(head="logits", hidden=(4, 3), seed=0):
    return MLPSpec(input_dim=2, hidden_dims=hidden, c=5, head=head, seed=seed)


# ---------------------------------------------------------------------------
# spec


def test_spec_validation():
    with pytest.raises(ValueError):
        MLPSpec(input_dim=0, hidden_dims=(4,), c=3)
    with pytest.raises(ValueError):
        MLPSpec(input_dim=2, hidden_dims=(0,), c=3)
    with pytest.raises(ValueError):
        MLPSpec(input_dim=2, hidden_dims=(4,), c=1)
    with pytest.raises(ValueError):
        MLPSpec(input_dim=2, hidden_dims=(4,), c=3, head="linear")
    with pytest.raises(ValueError):
        MLPSpec(input_dim=2, hidden_dims=(4,), c=3, activation="tanh")


def test_layer_dims():
    assert spec().layer_dims == [(2, 4), (4, 3), (3, 5)]
    assert spec(head="poisson").layer_dims == [(2, 4), (4, 3), (3, 5), (5, 1)]
    assert MLPSpec(input_dim=3, hidden_dims=(), c=4).layer_dims == [(3, 4)]


def test_spec_roundtrip():
    s = spec(head="poisson", seed=9)
    assert MLPSpec.from_dict(s.to_dict()) == s


# ---------------------------------------------------------------------------
# init


def test_glorot_bound_value():
    assert glorot_bound(3, 3) == 1.0


def test_init_determinism_and_ranges():
    a = init(spec(seed=7))
    b = init(spec(seed=7))
    other = init(spec(seed=8))
    for (_, pa), (_, pb) in zip(a.named(), b.named()):
        assert np.array_equal(pa.value, pb.value)
    assert any(
        not np.array_equal(pa.value, po.value)
        for (_, pa), (_, po) in zip(a.named(), other.named())
    )
    for (fan_in, fan_out), (w, bias) in zip(spec().layer_dims, a.layers):
        bound = glorot_bound(fan_in, fan_out)
        assert w.value.shape == (fan_out, fan_in)
        assert np.all(np.abs(w.value) < bound)
        assert np.array_equal(bias.value, np.zeros(fan_out))


def test_n_parameters():
    # (2*4+4) + (4*3+3) + (3*5+5) = 12 + 15 + 20
    assert init(spec()).n_parameters == 47
    assert init(spec(head="poisson")).n_parameters == 47 + 6


# ---------------------------------------------------------------------------
# forward


def test_forward_shapes():
    pset = init(spec())
    tape = Tape()
    out = forward(pset, tape.const(np.array([0.3, -0.2])))
    assert out.shape == (5,)
    pset_p = init(spec(head="poisson"))
    rate = forward(pset_p, Tape().const(np.array([0.3, -0.2])))
    assert rate.shape == () and rate.value > 0


def test_forward_input_dim_mismatch():
    pset = init(spec())
    with pytest.raises(ValueError):
        forward(pset, Tape().const(np.zeros(3)))
    with pytest.raises(ValueError):
        forward_values(pset, np.zeros((2, 3)))


@pytest.mark.parametrize("head", ["logits", "poisson"])
def test_forward_values_bit_identical_to_taped(head):
    pset = init(spec(head=head, seed=3))
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 2))
    batch = forward_values(pset, X)
    for i, x in enumerate(X):
        taped = forward(pset, Tape().const(x)).value
        if head == "poisson":
            assert batch[i] == taped
        else:
            assert np.array_equal(batch[i], taped)


def test_forward_values_accepts_single_row():
    pset = init(spec(seed=3))
    x = np.array([0.1, 0.2])
    assert np.array_equal(forward_values(pset, x), forward_values(pset, x[None, :]))


def test_first_layer_positive_homogeneity():
    # with zero biases the rectifier stack is positively homogeneous in x
    s = MLPSpec(input_dim=2, hidden_dims=(4,), c=3, seed=5)
    pset = init(s)
    x = np.array([0.4, -0.7])
    out1 = forward_values(pset, x)[0]
    out2 = forward_values(pset, 2.0 * x)[0]
    assert np.allclose(out2 - pset.layers[1][1].value, 2.0 * (out1 - pset.layers[1][1].value), atol=1e-12)


def test_forward_gradients_flow_to_all_parameters():
    pset = init(spec(seed=1))
    tape = Tape()
    pset.watch_all(tape)
    out = forward(pset, tape.const(np.array([0.5, 0.25])))
    ad.backward(ad.vsum(out))
    for name, p in pset.named():
        assert p.grad is not None, name


# ---------------------------------------------------------------------------
# values / load_values


def test_load_values_roundtrip_and_validation():
    pset = init(spec(seed=2))
    vals = pset.values()
    other = init(spec(seed=6))
    other.load_values(vals)
    for (_, pa), (_, pb) in zip(pset.named(), other.named()):
        assert np.array_equal(pa.value, pb.value)
    with pytest.raises(ValueError):
        other.load_values(vals[:-1])
    bad = [v.copy() for v in vals]
    bad[0] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        other.load_values(bad)


# ---------------------------------------------------------------------------
# checkpoints


@pytest.mark.parametrize("head", ["logits", "poisson"])
def test_checkpoint_roundtrip(tmp_path, head):
    pset = init(spec(head=head, seed=11))
    path = tmp_path / "model.json"
    save_checkpoint(pset, path)
    again = load_checkpoint(path)
    assert again.spec == pset.spec
    for (_, pa), (_, pb) in zip(pset.named(), again.named()):
        assert np.array_equal(pa.value, pb.value)
    X = np.random.default_rng(0).normal(size=(4, 2))
    assert np.array_equal(forward_values(pset, X), forward_values(again, X))


def test_checkpoint_version_guard():
    ckpt = init(spec()).to_checkpoint()
    ckpt["format_version"] = 99
    with pytest.raises(ValueError):
        ParameterSet.from_checkpoint(ckpt)
