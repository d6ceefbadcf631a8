import numpy as np
import pytest

from hedgelab.nn import AdamState, DenseNet, adam_step, load_checkpoint, save_checkpoint, soft_update

from oracles import finite_diff_param_grads, scalar_net_forward


def make_net(sizes, seed=0, **kw):
    return DenseNet.build(sizes, np.random.default_rng(seed), **kw)


def test_forward_identity_single_layer():
    net = make_net([3, 3])
    net.layers[0].w[...] = np.eye(3)
    net.layers[0].b[...] = 0.0
    x = np.random.default_rng(1).normal(size=(5, 3))
    y, _ = net.forward(x)
    np.testing.assert_allclose(y, x, rtol=1e-15)


def test_forward_zero_weights_bias_relu():
    net = make_net([3, 4, 2])
    for l in net.layers:
        l.w[...] = 0.0
    net.layers[0].b[...] = np.array([1.0, -2.0, 0.5, -0.1])
    net.layers[1].b[...] = np.array([0.3, -0.4])
    y, _ = net.forward(np.ones((6, 3)))
    np.testing.assert_allclose(y, np.tile([0.3, -0.4], (6, 1)), rtol=1e-15)


def test_forward_matches_scalar_reimplementation():
    net = make_net([4, 7, 5, 2], seed=3)
    x = np.random.default_rng(4).normal(size=(3, 4))
    y, _ = net.forward(x, mode="eval")
    for row in range(3):
        want = scalar_net_forward(net, x[row])
        np.testing.assert_allclose(y[row], want, rtol=1e-12)


def test_forward_rejects_bad_width():
    net = make_net([4, 3])
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 5)))


def test_backward_zero_at_optimum():
    # squared loss with target equal to output has zero gradient
    net = make_net([3, 4, 1], seed=5)
    x = np.random.default_rng(6).normal(size=(8, 3))
    y, tape = net.forward(x)
    grads, _ = net.backward(tape, np.zeros_like(y))
    for g in grads:
        assert np.all(g == 0.0)


def test_backward_identity_layer_dx():
    net = make_net([3, 2], seed=7)
    x = np.random.default_rng(8).normal(size=(4, 3))
    _, tape = net.forward(x)
    dy = np.random.default_rng(9).normal(size=(4, 2))
    _, dx = net.backward(tape, dy)
    np.testing.assert_allclose(dx, dy @ net.layers[0].w.T, rtol=1e-13)


def test_tape_single_use():
    net = make_net([2, 2])
    _, tape = net.forward(np.zeros((1, 2)))
    net.backward(tape, np.ones((1, 2)))
    with pytest.raises(RuntimeError):
        net.backward(tape, np.ones((1, 2)))


def relu_kink_distance(net, x):
    """Smallest |pre-activation| over all ReLU units; 'inf' if none."""
    _, tape = net.forward(x, mode="eval")
    dist = np.inf
    for l, cache in zip(net.layers, tape.caches):
        if l.activation == "relu":
            dist = min(dist, float(np.abs(cache["z"]).min()))
    return dist


def _fd_check(net, x, target, rtol=1e-5, h=1e-5):
    def loss():
        y, _ = net.forward(x, mode="eval")
        return 0.5 * float(((y - target) ** 2).sum())

    y, tape = net.forward(x, mode="eval")
    grads, _ = net.backward(tape, y - target)
    fd = finite_diff_param_grads(loss, net.params(), h=h)
    for g, f, p in zip(grads, fd, net.params()):
        denom = np.maximum(np.abs(f), 1e-8)
        rel = np.abs(g - f) / denom
        assert rel.max() < rtol, f"rel err {rel.max():.2e} on shape {p.shape}"


def test_gradients_match_finite_differences():
    # 20 random nets, resampling any draw whose ReLU units sit near a kink
    # (finite differences cross the kink there and disagree by construction)
    rng = np.random.default_rng(42)
    checked = 0
    attempts = 0
    while checked < 20:
        attempts += 1
        assert attempts < 200
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(2, 6))] + [int(rng.integers(2, 16)) for _ in range(depth)] + [1]
        net = make_net(sizes, seed=100 + attempts)
        x = rng.normal(size=(6, sizes[0]))
        target = rng.normal(size=(6, 1))
        if relu_kink_distance(net, x) < 1e-3:
            continue
        _fd_check(net, x, target)
        checked += 1


def test_gradients_with_eval_mode_batchnorm():
    net = make_net([3, 8, 1], seed=11, batch_norm=True)
    # push running stats away from init so the check is non-trivial
    net.layers[0].running_mean[...] = np.linspace(-0.3, 0.4, 8)
    net.layers[0].running_var[...] = np.linspace(0.5, 2.0, 8)
    x = np.random.default_rng(12).normal(size=(5, 3))
    target = np.zeros((5, 1))
    _fd_check(net, x, target)


def test_train_mode_batchnorm_gradients():
    # gradients through batch statistics themselves
    net = make_net([3, 6, 1], seed=13, batch_norm=True)
    x = np.random.default_rng(14).normal(size=(16, 3))
    target = np.random.default_rng(15).normal(size=(16, 1))
    frozen = net.clone()  # forward in train mode mutates running stats

    def loss():
        y, _ = frozen.forward(x, mode="train")
        return 0.5 * float(((y - target) ** 2).sum())

    y, tape = frozen.forward(x, mode="train")
    grads, _ = frozen.backward(tape, y - target)
    fd = finite_diff_param_grads(loss, frozen.params(), h=1e-6)
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=2e-4, atol=1e-9)


def test_batchnorm_train_moments():
    net = make_net([2, 6, 1], seed=16, batch_norm=True)
    net.layers[0].gamma[...] = 1.7
    net.layers[0].beta[...] = -0.3
    # build an input whose pre-activations have std >> bn eps
    x = np.random.default_rng(17).normal(scale=8.0, size=(256, 2))
    l0 = net.layers[0]
    z = x @ l0.w + l0.b
    inv = 1.0 / np.sqrt(z.var(axis=0) + 1e-5)
    out = l0.gamma * (z - z.mean(axis=0)) * inv + l0.beta
    assert np.allclose(out.mean(axis=0), -0.3, atol=1e-10)
    assert np.allclose(out.std(axis=0), 1.7, atol=1e-6)


def test_dropout_expectation_matches_eval():
    net = make_net([3, 16, 1], seed=18, dropout=0.25)
    x = np.random.default_rng(19).normal(size=(4, 3))
    y_eval, _ = net.forward(x, mode="eval")
    rng = np.random.default_rng(20)
    n = 10_000
    acc = np.zeros_like(y_eval)
    sq = np.zeros_like(y_eval)
    for _ in range(n):
        y, _ = net.forward(x, mode="train", rng=rng)
        acc += y
        sq += y * y
    mean = acc / n
    se = np.sqrt(np.maximum(sq / n - mean**2, 0.0) / n)
    assert np.all(np.abs(mean - y_eval) < 3 * se + 1e-9)


def test_adam_zero_grad_no_motion():
    net = make_net([2, 3, 1], seed=21)
    before = [p.copy() for p in net.params()]
    opt = AdamState(net.params(), lr=1e-3)
    opt.step(net.params(), [np.zeros_like(p) for p in net.params()])
    for b, p in zip(before, net.params()):
        np.testing.assert_array_equal(b, p)


def test_adam_first_step_hand_oracle():
    # scalar, g=1: step = -lr * 1 / (1 + eps) (frozen hand evaluation)
    p = [np.array([0.0])]
    opt = AdamState(p, lr=1e-3)
    adam_step(opt, p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-9.99999990000000e-4, abs=1e-18)


def test_adam_symmetry_and_scale_invariance():
    p = [np.array([1.0, 1.0])]
    opt = AdamState(p, lr=1e-2)
    opt.step(p, [np.array([0.5, 0.5])])
    assert p[0][0] == p[0][1]
    # sign pattern of the first update is invariant to positive gradient scaling
    for scale in (1.0, 7.3, 1e4):
        q = [np.array([0.3, -0.4])]
        opt2 = AdamState(q, lr=1e-3)
        opt2.step(q, [scale * np.array([1.0, -2.0])])
        assert q[0][0] < 0.3 and q[0][1] > -0.4


def test_adam_shape_mismatch():
    p = [np.zeros(3)]
    opt = AdamState(p, lr=1e-3)
    with pytest.raises(ValueError):
        opt.step(p, [np.zeros(4)])


def test_soft_update_endpoints_and_scalar():
    a = make_net([2, 2], seed=22)
    b = make_net([2, 2], seed=23)
    a0 = [p.copy() for p in a.params()]
    soft_update(a, b, rho=1.0)
    for p, q in zip(a.params(), a0):
        np.testing.assert_array_equal(p, q)
    soft_update(a, b, rho=0.0)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    # scalar case: 0.999*2 + 0.001*4 = 2.002
    a.params()[0][...] = 2.0
    b.params()[0][...] = 4.0
    soft_update(a, b, rho=0.999)
    assert a.params()[0].flat[0] == pytest.approx(2.002, rel=1e-12)


def test_soft_update_architecture_mismatch():
    a = make_net([2, 3, 1])
    b = make_net([2, 4, 1])
    with pytest.raises(ValueError):
        soft_update(a, b, rho=0.5)


def test_soft_update_contraction_factor():
    a = make_net([3, 5, 1], seed=24)
    b = make_net([3, 5, 1], seed=25)
    gap_before = max(np.abs(p - q).max() for p, q in zip(a.params(), b.params()))
    soft_update(a, b, rho=0.999)
    gap_after = max(np.abs(p - q).max() for p, q in zip(a.params(), b.params()))
    assert gap_after == pytest.approx(0.999 * gap_before, rel=1e-9)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = make_net([5, 10, 15, 10, 1], seed=26, batch_norm=True, dropout=0.25)
    # dirty the running stats so they are non-trivial
    x = np.random.default_rng(27).normal(size=(64, 5))
    net.forward(x, mode="train", rng=np.random.default_rng(28))
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, str(path), extra={"step": 17})
    loaded, extra = load_checkpoint(str(path))
    assert extra == {"step": 17}
    for p, q in zip(net.params(), loaded.params()):
        np.testing.assert_array_equal(p, q)
    for l, m in zip(net.layers, loaded.layers):
        if l.bn:
            np.testing.assert_array_equal(l.running_mean, m.running_mean)
            np.testing.assert_array_equal(l.running_var, m.running_var)
    y0, _ = net.forward(x, mode="eval")
    y1, _ = loaded.forward(x, mode="eval")
    np.testing.assert_array_equal(y0, y1)
    # saving the loaded net reproduces the same bytes
    path2 = tmp_path / "net2.ckpt"
    save_checkpoint(loaded, str(path2), extra={"step": 17})
    assert path.read_bytes() == path2.read_bytes()
