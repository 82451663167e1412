import numpy as np
import pytest

from refmod.errors import TrainingDivergedError, ValidationError
from refmod.neural import (
    Activation, AdamState, Gradients, Mlp, adam_step, backward, forward, load_network, polyak_update,
    save_network,
)


def reference_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Loop-based evaluation used as an oracle."""
    a = list(x)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = []
        for row, bias in zip(w, b):
            z.append(sum(wij * aj for wij, aj in zip(row, a)) + bias)
        kind = net.output if i == last else net.hidden
        if kind is Activation.RELU:
            a = [max(v, 0.0) for v in z]
        elif kind is Activation.TANH:
            a = [np.tanh(v) for v in z]
        else:
            a = z
    return np.array(a)


def test_zero_network_outputs_zero():
    net = Mlp.zeros([5, 7, 1], Activation.TANH)
    assert forward(net, np.ones(5))[0] == 0.0


def test_identity_layer():
    net = Mlp([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -2.0, 3.0])
    np.testing.assert_array_equal(forward(net, x), x)


def test_matches_loop_oracle():
    net = Mlp.init([3, 4, 2], seed=7)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(-1, 1, 3)
        np.testing.assert_allclose(forward(net, x), reference_forward(net, x), rtol=1e-12, atol=1e-12)


def test_batch_evaluation_is_row_independent():
    net = Mlp.init([4, 6, 2], seed=3)
    batch = np.random.default_rng(0).normal(size=(9, 4))
    perm = np.random.default_rng(1).permutation(9)
    np.testing.assert_allclose(forward(net, batch)[perm], forward(net, batch[perm]), rtol=1e-12)
    np.testing.assert_allclose(forward(net, batch)[2], forward(net, batch[2]), rtol=1e-12)


def test_tanh_output_stays_inside_unit_interval():
    net = Mlp.init([4, 8, 1], Activation.TANH, seed=2)
    out = forward(net, np.random.default_rng(0).uniform(-3, 3, size=(200, 4)))
    assert np.all(np.abs(out) < 1.0)


def test_zero_output_gradient_gives_zero_gradients():
    net = Mlp.init([3, 5, 1], seed=0)
    grads, d_in = backward(net, np.ones(3), np.zeros(1))
    assert all(np.all(g == 0.0) for g in grads.parameters())
    np.testing.assert_array_equal(d_in, np.zeros(3))


def test_input_gradient_of_linear_network():
    w = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])
    net = Mlp([w], [np.zeros(3)])
    d_out = np.array([1.0, -2.0, 4.0])
    _, d_in = backward(net, np.array([0.3, 0.7]), d_out)
    np.testing.assert_allclose(d_in, w.T @ d_out)


def _near_kink(net: Mlp, x: np.ndarray, threshold: float) -> bool:
    a = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = w @ a + b
        if np.any(np.abs(z) < threshold):
            return True
        a = np.maximum(z, 0.0)
    return False


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    net = Mlp.init([14, 300, 300, 1], seed=11)
    h = 1e-5
    accepted = 0
    worst = 0.0
    while accepted < 100:
        x = rng.uniform(-1, 1, 14)
        # piecewise-linear units: keep every preactivation away from its kink
        if _near_kink(net, x, 1e-4):
            continue
        accepted += 1
        grads, _ = backward(net, x, np.ones(1))
        for layer in range(len(net.weights)):
            for params, grad in ((net.weights[layer], grads.weights[layer]), (net.biases[layer], grads.biases[layer])):
                for _ in range(5):
                    idx = tuple(int(rng.integers(0, n)) for n in params.shape)
                    saved = params[idx]
                    params[idx] = saved + h
                    up = forward(net, x)[0]
                    params[idx] = saved - h
                    down = forward(net, x)[0]
                    params[idx] = saved
                    numeric = (up - down) / (2 * h)
                    analytic = grad[idx]
                    rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-5)
                    worst = max(worst, rel)
    assert worst < 1e-5


def test_input_gradient_matches_finite_differences():
    net = Mlp.init([6, 10, 1], Activation.TANH, seed=4)
    net.hidden = Activation.TANH
    x = np.random.default_rng(3).uniform(-1, 1, 6)
    _, d_in = backward(net, x, np.ones(1))
    h = 1e-6
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        numeric = (forward(net, x + e)[0] - forward(net, x - e)[0]) / (2 * h)
        assert d_in[j] == pytest.approx(numeric, rel=1e-6, abs=1e-9)


def test_adam_with_zero_gradient_keeps_parameters():
    net = Mlp.init([2, 3, 1], seed=0)
    state = AdamState.for_net(net)
    zero = Gradients([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    updated, new_state = adam_step(net, zero, state, 1e-3)
    for before, after in zip(net.parameters(), updated.parameters()):
        np.testing.assert_array_equal(before, after)
    assert new_state.t == 1
    assert all(np.all(m == 0.0) for m in new_state.m)


def _quadratic_grads(net: Mlp) -> Gradients:
    # loss = w1^2 + 2 w2^2 on the single weight row
    w1, w2 = net.weights[0][0]
    return Gradients([np.array([[2 * w1, 4 * w2]])], [np.zeros(1)])


def test_adam_step_descends():
    net = Mlp([np.array([[1.0, 0.0]])], [np.zeros(1)])
    updated, _ = adam_step(net, _quadratic_grads(net), AdamState.for_net(net), 1e-3)
    assert updated.weights[0][0, 0] < 1.0


def test_adam_converges_on_quadratic():
    net = Mlp([np.array([[1.0, -1.0]])], [np.zeros(1)])
    state = AdamState.for_net(net)
    for _ in range(2000):
        net, state = adam_step(net, _quadratic_grads(net), state, 1e-2)
    assert np.all(np.abs(net.weights[0]) < 1e-3)


def test_adam_rejects_non_finite_gradient():
    net = Mlp.init([2, 1], seed=0)
    bad = Gradients([np.full((1, 2), np.nan)], [np.zeros(1)])
    with pytest.raises(TrainingDivergedError):
        adam_step(net, bad, AdamState.for_net(net), 1e-3)


def test_polyak_update_interpolates():
    target = Mlp.zeros([2, 2])
    online = Mlp([np.ones((2, 2))], [np.ones(2)])
    mixed = polyak_update(target, online, 0.25)
    np.testing.assert_allclose(mixed.weights[0], 0.25)
    np.testing.assert_array_equal(polyak_update(target, online, 1.0).weights[0], online.weights[0])


def test_dimension_mismatch_is_rejected():
    net = Mlp.init([3, 2], seed=0)
    with pytest.raises(ValidationError):
        forward(net, np.ones(4))
    with pytest.raises(ValidationError):
        Mlp([np.ones((2, 3)), np.ones((1, 4))], [np.zeros(2), np.zeros(1)])


def test_network_file_is_bit_exact(tmp_path):
    net = Mlp.init([14, 12, 1], Activation.TANH, seed=5)
    loaded = load_network(save_network(net, tmp_path / "actor.rmnn"))
    assert loaded.sizes == net.sizes
    assert loaded.output is Activation.TANH
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert a.tobytes() == b.tobytes()


def test_corrupt_network_file_is_rejected(tmp_path):
    path = save_network(Mlp.init([2, 2], seed=0), tmp_path / "net.rmnn")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValidationError):
        load_network(path)
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(ValidationError):
        load_network(path)
