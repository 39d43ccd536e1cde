import numpy as np
import pytest

from helpers import finite_difference_check, gradient_check_suite, numpy_mlp, random_network
from vecedge.nn import (AdamState, CheckpointError, CheckpointVersionError, Layer, Mlp, adam_step, backward,
                        forward, init_mlp, load_params, save_params)


def test_identity_layer_passes_input():
    net = Mlp([Layer(np.eye(3), np.zeros(3), "identity")])
    x = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(net(x), x)


def test_zero_weights_output_bias_activation():
    net = Mlp([Layer(np.zeros((2, 3)), np.array([0.5, -0.2]), "tanh")])
    assert np.allclose(net(np.ones(3)), np.tanh([0.5, -0.2]))


def test_forward_matches_independent_evaluation(rng):
    net = random_network(rng, [5, 7, 3], ["relu", "tanh"])
    x = rng.normal(size=(4, 5))
    assert np.allclose(forward(net, x)[0], numpy_mlp(net, x), rtol=1e-12)
    assert np.allclose(forward(net, x[0])[0], numpy_mlp(net, x[0]), rtol=1e-12)


def test_shape_mismatch(rng):
    net = init_mlp([4, 3], ["relu"], rng)
    with pytest.raises(ValueError):
        forward(net, np.zeros(5))


def test_layers_must_chain():
    with pytest.raises(ValueError):
        Mlp([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.zeros((1, 4)), np.zeros(1))])


def test_three_layer_gradient_check(rng):
    net = random_network(rng, [6, 8, 5, 3], ["relu", "tanh", "identity"])
    x, g = rng.normal(size=(3, 6)), rng.normal(size=(3, 3))
    assert finite_difference_check(net, x, g, rng, per_tensor=1000) <= 1e-4


def test_gradient_suite_all_shapes():
    assert gradient_check_suite(seed=1) <= 1e-4


def test_identity_network_input_gradient():
    net = Mlp([Layer(np.eye(3), np.zeros(3), "identity")])
    _, cache = forward(net, np.ones(3))
    g = np.array([0.3, -1.0, 2.0])
    _, gin = backward(net, cache, g)
    assert np.array_equal(gin, g)


def test_zero_output_grad(rng):
    net = random_network(rng, [4, 5, 2], ["relu", "tanh"])
    _, cache = forward(net, rng.normal(size=(2, 4)))
    grads, gin = backward(net, cache, np.zeros((2, 2)))
    assert all(not dw.any() and not db.any() for dw, db in grads) and not gin.any()


def test_tanh_head_bounds_output(rng):
    net = init_mlp([3, 16, 4], ["relu", "tanh"], rng)
    out = net(rng.normal(0, 100, size=(50, 3)))
    assert np.all(np.abs(out) <= 1)


def test_deterministic_init():
    a = init_mlp([3, 4, 2], ["relu", "tanh"], np.random.default_rng(9))
    b = init_mlp([3, 4, 2], ["relu", "tanh"], np.random.default_rng(9))
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_init_bounds(rng):
    net = init_mlp([100, 50, 4], ["relu", "tanh"], rng, final_scale=1e-3)
    assert np.abs(net.layers[0].weight).max() <= 0.1
    assert np.abs(net.layers[1].weight).max() <= 1e-3 / np.sqrt(50)


def _scalar_net(value):
    return Mlp([Layer(np.array([[value]]), np.array([0.0]), "identity")])


def test_adam_zero_gradient_keeps_params():
    net = _scalar_net(0.7)
    st = AdamState.for_net(net, 1e-3)
    adam_step(net, [(np.zeros((1, 1)), np.zeros(1))], st)
    assert net.layers[0].weight[0, 0] == 0.7 and st.step == 1


def test_adam_first_step_is_signed_learning_rate():
    for g in (3.0, -0.02):
        net = _scalar_net(0.0)
        st = AdamState.for_net(net, 5e-4)
        adam_step(net, [(np.array([[g]]), np.zeros(1))], st)
        expected = -5e-4 * g / (abs(g) + 1e-8)
        assert net.layers[0].weight[0, 0] == pytest.approx(expected, rel=1e-9)


def test_adam_constant_gradient_descends():
    net = _scalar_net(1.0)
    st = AdamState.for_net(net, 1e-2)
    for _ in range(100):
        adam_step(net, [(np.array([[2.0]]), np.zeros(1))], st)
    assert net.layers[0].weight[0, 0] < 1.0 - 0.5


def test_checkpoint_roundtrip(tmp_path, rng):
    net = init_mlp([5, 6, 2], ["relu", "tanh"], rng, dtype=np.float32)
    save_params(net, tmp_path / "n.npz")
    back = load_params(tmp_path / "n.npz")
    assert [l.activation for l in back.layers] == ["relu", "tanh"]
    for p, q in zip(net.params(), back.params()):
        assert p.dtype == q.dtype and p.tobytes() == q.tobytes()


def test_truncated_checkpoint(tmp_path, rng):
    save_params(init_mlp([5, 2], ["relu"], rng), tmp_path / "n.npz")
    data = (tmp_path / "n.npz").read_bytes()
    (tmp_path / "t.npz").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "t.npz")


def test_garbage_checkpoint(tmp_path):
    (tmp_path / "g.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "g.npz")


def test_wrong_version(tmp_path, rng):
    import json
    net = init_mlp([2, 1], ["identity"], rng)
    meta = {"format": "vecedge-mlp", "version": 99,
            "layers": [{"shape": [1, 2], "activation": "identity"}], "dtype": "float64"}
    np.savez(tmp_path / "v.npz", meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             w0=net.layers[0].weight, b0=net.layers[0].bias)
    with pytest.raises(CheckpointVersionError):
        load_params(tmp_path / "v.npz")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_params(tmp_path / "absent.npz")
