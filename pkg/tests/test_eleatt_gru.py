import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aemsr.autograd import Tensor, check_gradients, ops
from aemsr.eleatt_gru import EleAttGRULayer, EleAttGRUStack, build_decoder, build_encoder, cell_step
from aemsr.errors import ConfigurationError, ContractError

from gradcases import BLOCKS
from oracles import gru_weights, vanilla_gru


def random_layer(rng, D, N):
    layer = EleAttGRULayer(D, N, rng)
    for p in layer.parameters():
        p.data += 0.3 * rng.standard_normal(p.shape)
    return layer


def test_forced_attention_is_bitwise_vanilla_gru():
    rng = np.random.default_rng(0)
    for _ in range(100):
        D, N, L = (int(v) for v in rng.integers(1, 9, size=3))
        layer = random_layer(rng, D, N)
        layer.force_attention_ones = True
        X = rng.standard_normal((1, L, D))
        h0 = rng.standard_normal((1, N))
        ours = layer(X, h0).data
        ref = vanilla_gru(X, h0, *gru_weights(layer))
        assert ours.tobytes() == ref.tobytes()


def test_saturated_gate_equals_vanilla_gru():
    # a bias of +800 drives the sigmoid to exactly 1.0 in float64
    rng = np.random.default_rng(1)
    layer = random_layer(rng, 5, 4)
    layer.b_a.data[:] = 800.0
    X = rng.standard_normal((2, 7, 5))
    ours = layer(X).data
    ref = vanilla_gru(X, np.zeros((2, 4)), *gru_weights(layer))
    assert ours.tobytes() == ref.tobytes()


def test_attention_gate_changes_output():
    rng = np.random.default_rng(2)
    layer = random_layer(rng, 3, 4)
    X = rng.standard_normal((1, 5, 3))
    free = layer(X).data
    layer.force_attention_ones = True
    assert not np.allclose(free, layer(X).data)


def test_step_matches_unrolled_layer():
    rng = np.random.default_rng(3)
    layer = random_layer(rng, 3, 4)
    X = rng.standard_normal((2, 6, 3))
    full = layer(X).data
    h = np.zeros((2, 4))
    for t in range(6):
        h = cell_step(layer, X[:, t], h).data
        np.testing.assert_allclose(h, full[:, t], atol=1e-14)
    single = cell_step(layer, X[0, 0], np.zeros(4))
    assert single.shape == (4,)


@given(st.integers(1, 6), st.integers(1, 6), st.floats(-50, 50))
@settings(max_examples=50, deadline=None)
def test_state_stays_in_unit_interval(D, N, scale):
    rng = np.random.default_rng(D * 7 + N)
    layer = random_layer(rng, D, N)
    out = layer(scale * rng.standard_normal((1, 8, D))).data
    assert np.all(np.abs(out) <= 1.0)


def test_lengths_freeze_state():
    rng = np.random.default_rng(4)
    layer = random_layer(rng, 3, 4)
    X = rng.standard_normal((2, 6, 3))
    out = layer(X, lengths=[6, 3]).data
    alone = layer(X[1:, :3]).data
    np.testing.assert_allclose(out[1, :3], alone[0], atol=1e-14)
    np.testing.assert_array_equal(out[1, 3:], np.repeat(out[1, 2:3], 3, axis=0))


@pytest.mark.parametrize("seed", range(3))
def test_cell_gradients(seed):
    fn, tensors = BLOCKS["eleatt_gru"](seed)
    errs = check_gradients(fn, tensors, max_entries=4, rng=np.random.default_rng(seed))
    assert max(errs.values()) < 1e-4, errs


def test_gradients_with_lengths_and_forced_gate():
    rng = np.random.default_rng(5)
    layer = random_layer(rng, 3, 2)
    X = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    R = rng.standard_normal((2, 4, 2))
    for force in (False, True):
        layer.force_attention_ones = force
        fn = lambda: ops.sum(ops.mul(layer(X, lengths=[4, 2]), R))
        errs = check_gradients(fn, {"x": X, **dict(layer.named_parameters())})
        relevant = {k: v for k, v in errs.items() if not (force and k in ("W_xa", "W_ha", "b_a"))}
        assert max(relevant.values()) < 1e-6, errs


def test_stack_names_and_shapes():
    rng = np.random.default_rng(6)
    enc = build_encoder(5, 8, 2, rng)
    names = [n for n, _ in enc.named_parameters()]
    assert "eleatt_gru/0/W_xa" in names and "eleatt_gru/1/b_h" in names
    assert enc.layers[1].input_dim == 8
    out = enc(rng.standard_normal((2, 4, 5)))
    assert out.shape == (2, 4, 8)
    assert len(enc.forward_states(rng.standard_normal((2, 4, 5)))) == 2
    assert len(build_decoder(10, 8, rng).layers) == 1


def test_contract_errors():
    rng = np.random.default_rng(7)
    layer = EleAttGRULayer(3, 2, rng)
    with pytest.raises(ContractError):
        layer(np.zeros((1, 4, 5)))
    with pytest.raises(ContractError):
        layer(np.zeros((1, 4, 3)), np.zeros((1, 3)))
    with pytest.raises(ContractError):
        layer(np.zeros((2, 4, 3)), lengths=[4, 0])
    with pytest.raises(ConfigurationError):
        EleAttGRUStack(3, 2, 0, rng)
    with pytest.raises(ConfigurationError):
        EleAttGRULayer(0, 2, rng)
