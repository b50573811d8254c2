import numpy as np
import pytest

from lsbmp import nn


def fd_wrt_array(f, arr, delta=1e-5):
    """Central finite differences of scalar f() wrt every entry of arr,
    mutating arr in place around its original values."""
    g = np.empty_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + delta
        hi = f()
        arr[i] = orig - delta
        lo = f()
        arr[i] = orig
        g[i] = (hi - lo) / (2 * delta)
        it.iternext()
    return g


def assert_close_rel(a, b, rel=1e-4, abs_tol=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    err = np.abs(a - b) - rel * np.maximum(np.abs(a), np.abs(b)) - abs_tol
    assert err.max() <= 0, f"max violation {err.max()}"


def check_gradients(net, x, rel=1e-4):
    """Backward gradients vs central finite differences for a linear loss
    L = sum(y * R) with fixed random R (so dL/dy = R)."""
    rng = np.random.default_rng(123)
    y, cache = net.forward(x, want_cache=True)
    R = rng.standard_normal(y.shape)
    grads, dx = net.backward(cache, R)

    def loss():
        return float((net.forward(x) * R).sum())

    for p, g in zip(net.params(), grads):
        assert_close_rel(g, fd_wrt_array(loss, p), rel=rel)
    xa = np.array(x, dtype=float)

    def loss_x():
        return float((net.forward(xa) * R).sum())

    assert_close_rel(dx, fd_wrt_array(loss_x, xa), rel=rel)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_identity_dense_forward():
    net = nn.Network([nn.Dense(2, 2, W=np.eye(2), b=np.zeros(2))])
    assert np.array_equal(net.forward(np.array([3.0, 4.0])), [3.0, 4.0])


def test_dense_relu_clips():
    net = nn.Network([nn.Dense(1, 1, W=[[2.0]], b=[1.0]), nn.Relu()])
    assert net.forward(np.array([-3.0])) == np.array([0.0])


def test_batch_matches_per_sample():
    rng = np.random.default_rng(0)
    net = nn.mlp([4, 8, 6, 3], rng=rng)
    x = rng.standard_normal((5, 4))
    batched = net.forward(x)
    for i in range(5):
        assert np.max(np.abs(batched[i] - net.forward(x[i]))) < 1e-12


def test_forward_rejects_bad_width():
    net = nn.mlp([4, 3], rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.forward(np.zeros(5))


def test_construction_rejects_incompatible_layers():
    with pytest.raises(ValueError):
        nn.Network([nn.Dense(3, 4), nn.Dense(5, 2)])


def test_nonfinite_forward_names_layer():
    net = nn.Network([nn.Dense(1, 1, W=[[1e308]], b=[0.0]),
                      nn.Dense(1, 1, W=[[1e308]], b=[0.0])])
    with np.errstate(over="ignore"), pytest.raises(nn.NumericError, match="layer 1"):
        net.forward(np.array([1.0]))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_identity_dense_bias_gradient():
    net = nn.Network([nn.Dense(2, 2, W=np.eye(2), b=np.zeros(2))])
    _, cache = net.forward(np.array([5.0, -1.0]), want_cache=True)
    grads, _ = net.backward(cache, np.array([1.0, 1.0]))
    assert np.array_equal(grads[1], [1.0, 1.0])


def test_sigmoid_derivative_at_zero():
    net = nn.Network([nn.Dense(1, 1, W=[[1.0]], b=[0.0]), nn.Sigmoid()])
    _, cache = net.forward(np.array([0.0]), want_cache=True)
    _, dx = net.backward(cache, np.array([1.0]))
    assert dx == pytest.approx(0.25, abs=1e-12)


def test_backward_rejects_foreign_cache():
    net1 = nn.mlp([2, 2], rng=np.random.default_rng(0))
    net2 = nn.mlp([2, 2], rng=np.random.default_rng(1))
    _, cache = net1.forward(np.zeros(2), want_cache=True)
    with pytest.raises(ValueError):
        net2.backward(cache, np.zeros(2))


def test_gradients_dense_tanh_sigmoid():
    rng = np.random.default_rng(7)
    net = nn.Network([nn.Dense(5, 7), nn.Tanh(), nn.Dense(7, 4), nn.Sigmoid(),
                      nn.Dense(4, 3)])
    net.init_params(rng)
    assert net.param_count <= 200
    check_gradients(net, rng.standard_normal((3, 5)))


def test_gradients_relu():
    rng = np.random.default_rng(8)
    net = nn.Network([nn.Dense(6, 8), nn.Relu(), nn.Dense(8, 2)])
    net.init_params(rng)
    # keep pre-activations away from the relu kink so the FD oracle is valid
    x = rng.standard_normal((4, 6)) + 0.5
    check_gradients(net, x)


def test_gradients_conv():
    rng = np.random.default_rng(9)
    conv = nn.Conv2D(2, 3, 3, 2, 7, 7)
    net = nn.Network([conv, nn.Tanh(), nn.Dense(conv.out_dim, 4)])
    net.init_params(rng)
    check_gradients(net, rng.standard_normal((2, conv.in_dim)))


def test_gradients_spatial_soft_argmax():
    rng = np.random.default_rng(10)
    ssam = nn.SpatialSoftArgmax(2, 4, 5, temperature=0.7)
    net = nn.Network([nn.Dense(10, ssam.in_dim), nn.Tanh(), ssam,
                      nn.Dense(ssam.out_dim, 3)])
    net.init_params(rng)
    check_gradients(net, rng.standard_normal((2, 10)))


# ---------------------------------------------------------------------------
# jacobian
# ---------------------------------------------------------------------------


def test_jacobian_linear_net_is_weight_matrix():
    rng = np.random.default_rng(11)
    M = rng.standard_normal((3, 4))
    net = nn.Network([nn.Dense(4, 3, W=M.T, b=np.zeros(3))])
    J = net.jacobian(rng.standard_normal(4))
    assert np.max(np.abs(J - M)) < 1e-12


def test_jacobian_tanh_at_zero_is_weight_product():
    rng = np.random.default_rng(12)
    W1 = rng.standard_normal((4, 5))
    W2 = rng.standard_normal((5, 2))
    net = nn.Network([nn.Dense(4, 5, W=W1, b=np.zeros(5)), nn.Tanh(),
                      nn.Dense(5, 2, W=W2, b=np.zeros(2))])
    J = net.jacobian(np.zeros(4))
    assert np.max(np.abs(J - (W1 @ W2).T)) < 1e-12


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(13)
    net = nn.mlp([4, 6, 6, 3], rng=rng)
    x = rng.standard_normal(4)
    J = net.jacobian(x)
    delta = 1e-5
    for j in range(4):
        e = np.zeros(4)
        e[j] = delta
        col = (net.forward(x + e) - net.forward(x - e)) / (2 * delta)
        assert_close_rel(J[:, j], col, rel=1e-4)


# ---------------------------------------------------------------------------
# spatial soft arg-max behavior
# ---------------------------------------------------------------------------


def test_ssam_near_delta_softmax():
    ssam = nn.SpatialSoftArgmax(1, 8, 8, temperature=0.01)
    a = np.zeros(64)
    a[2 * 8 + 5] = 100.0          # row 2, col 5
    (x, y) = nn.Network([ssam]).forward(a)
    assert abs(x - (5 + 0.5) / 8) < 1e-6
    assert abs(y - (2 + 0.5) / 8) < 1e-6


def test_ssam_uniform_map_is_center():
    ssam = nn.SpatialSoftArgmax(1, 5, 5, temperature=1.0)
    out = nn.Network([ssam]).forward(np.full(25, 3.7))
    assert np.allclose(out, [0.5, 0.5], atol=1e-12)


def test_ssam_hand_evaluated_2x2():
    ssam = nn.SpatialSoftArgmax(1, 2, 2, temperature=1.0)
    out = nn.Network([ssam]).forward(np.array([1.0, 0.0, 0.0, 0.0]))
    w = np.exp([1.0, 0.0, 0.0, 0.0])
    w /= w.sum()
    xs = np.array([0.25, 0.75, 0.25, 0.75])
    ys = np.array([0.25, 0.25, 0.75, 0.75])
    assert np.allclose(out, [w @ xs, w @ ys], atol=1e-12)


def test_ssam_output_range_and_shift_invariance():
    rng = np.random.default_rng(14)
    ssam = nn.SpatialSoftArgmax(3, 6, 7, temperature=0.5)
    net = nn.Network([ssam])
    for _ in range(25):
        a = rng.standard_normal((2, ssam.in_dim)) * 50
        out = net.forward(a)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        shifted = a.reshape(2, 3, -1) + rng.standard_normal((2, 3, 1)) * 10
        out2 = net.forward(shifted.reshape(2, -1))
        assert np.max(np.abs(out - out2)) < 1e-9


def test_ssam_rejects_bad_temperature():
    with pytest.raises(ValueError):
        nn.SpatialSoftArgmax(1, 4, 4, temperature=0.0)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_closed_form():
    p = [np.array([1.0])]
    state = nn.AdamState(p, lr=1e-3, eps=1e-8)
    nn.adam_step(p, [np.array([1.0])], state)
    assert p[0][0] == pytest.approx(1.0 - 1e-3 / (1.0 + 1e-8), abs=1e-15)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    p = [np.array([2.0, -3.0])]
    state = nn.AdamState(p)
    nn.adam_step(p, [np.zeros(2)], state)
    assert np.array_equal(p[0], [2.0, -3.0])
    assert state.t == 1


def test_adam_descends_quadratic():
    # oracle: run the scalar Adam recursion independently
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w_ref, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        g = 2 * w_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w_ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

    p = [np.array([1.0])]
    state = nn.AdamState(p, lr=lr)
    for _ in range(100):
        nn.adam_step(p, [2 * p[0]], state)
    assert p[0][0] == pytest.approx(w_ref, abs=1e-12)
    assert abs(p[0][0]) < 1.0


def test_adam_rejects_shape_mismatch():
    p = [np.zeros(3)]
    state = nn.AdamState(p)
    with pytest.raises(ValueError):
        nn.adam_step(p, [np.zeros(4)], state)


# ---------------------------------------------------------------------------
# serialization and determinism
# ---------------------------------------------------------------------------


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    conv = nn.Conv2D(1, 2, 3, 1, 6, 6)
    ssam = nn.SpatialSoftArgmax(2, conv.out_height, conv.out_width, 0.3)
    net = nn.Network([conv, nn.Relu(), ssam, nn.Dense(4, 2), nn.Sigmoid()])
    net.init_params(rng)
    path = tmp_path / "net.json"
    net.save(path)
    loaded = nn.Network.load(path)
    x = rng.standard_normal((3, net.in_dim))
    assert np.array_equal(net.forward(x), loaded.forward(x))


def test_json_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="format"):
        nn.Network.from_json_dict({"format": "lsbmp-net-v999", "layers": []})


def test_seeded_init_is_bit_identical():
    a = nn.mlp([8, 8, 2], rng=np.random.default_rng(42))
    b = nn.mlp([8, 8, 2], rng=np.random.default_rng(42))
    for pa, pb in zip(a.params(), b.params()):
        assert np.array_equal(pa, pb)
