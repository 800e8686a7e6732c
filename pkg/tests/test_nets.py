"""Dense-net forward/backward against analytic and finite-difference oracles."""

import numpy as np
import pytest

from pegbench.nets import (
    Adam,
    DenseNet,
    finite_difference_gradients,
    net_gradients,
    polyak_update,
    silu,
)


def sq_loss(target):
    """loss = sum((y - target)^2), with its output gradient."""

    def fn(y):
        d = y - target
        return float(np.sum(d * d)), 2.0 * d

    return fn


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestForward:
    def test_zero_params_zero_output(self):
        net = DenseNet((4, 8, 3))
        for w in net.weights:
            w[:] = 0.0
        y = net.forward(np.ones((2, 4)))
        assert np.all(y == 0.0)

    def test_hand_computed_two_unit_path(self):
        # 1 -> 1 -> 1 net, weights 2 then 3, biases 0: y = 3 * silu(2x)
        net = DenseNet((1, 1, 1))
        net.weights[0][:] = 2.0
        net.weights[1][:] = 3.0
        net.biases[0][:] = 0.0
        net.biases[1][:] = 0.0
        x = np.array([[0.5]])
        expect = 3.0 * float(silu(np.array([1.0]))[0])
        assert net.forward(x)[0, 0] == pytest.approx(expect, rel=1e-12)

    def test_deterministic(self):
        net = DenseNet((6, 16, 2), rng=np.random.default_rng(3))
        x = np.random.default_rng(1).normal(size=(5, 6))
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_dimension_mismatch(self):
        net = DenseNet((4, 8, 3))
        with pytest.raises(ValueError):
            net.forward(np.ones((2, 5)))


class TestGradients:
    def test_linear_net_squared_loss_analytic(self):
        # single affine layer, loss (y - t)^2: dW = 2 (y - t) x
        net = DenseNet((3, 1))
        net.weights[0][:] = np.array([[1.0], [2.0], [-1.0]])
        net.biases[0][:] = 0.5
        x = np.array([[0.3, -0.2, 0.6]])
        t = np.array([[0.0]])
        loss, grads, gx = net_gradients(net, sq_loss(t), x)
        y = net.forward(x)
        assert np.allclose(grads[0], 2.0 * (y - t) * x.T)
        assert np.allclose(grads[1], 2.0 * (y - t).ravel())
        assert np.allclose(gx, 2.0 * (y - t) @ net.weights[0].T)

    def test_zero_loss_zero_grads(self):
        net = DenseNet((2, 4, 1), rng=np.random.default_rng(0))

        def zero_loss(y):
            return 0.0, np.zeros_like(y)

        _, grads, gx = net_gradients(net, zero_loss, np.ones((3, 2)))
        assert all(np.all(g == 0) for g in grads)
        assert np.all(gx == 0)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_finite_differences_small(self, seed):
        rng = np.random.default_rng(seed)
        net = DenseNet((5, 11, 7, 2), rng=rng)
        x = rng.normal(size=(4, 5))
        t = rng.normal(size=(4, 2))
        _, grads, _ = net_gradients(net, sq_loss(t), x)
        fd = finite_difference_gradients(net, sq_loss(t), x)
        worst = max(float(rel_err(g, f).max()) for g, f in zip(grads, fd))
        assert worst < 1e-4

    def test_matches_finite_differences_wide(self):
        # the 6 -> 256 -> 256 -> 3 shape, full coordinate sweep
        rng = np.random.default_rng(7)
        net = DenseNet((6, 256, 256, 3), rng=rng)
        x = rng.normal(size=(2, 6))
        t = rng.normal(size=(2, 3))
        _, grads, _ = net_gradients(net, sq_loss(t), x)
        params = net.params()
        coords = []
        crng = np.random.default_rng(11)
        for i, p in enumerate(params):
            picks = crng.choice(p.size, size=min(80, p.size), replace=False)
            coords.extend((i, int(j)) for j in picks)
        fd = finite_difference_gradients(net, sq_loss(t), x, coords=coords)
        worst = 0.0
        for i, j in coords:
            worst = max(worst, float(rel_err(grads[i].flat[j], fd[i].flat[j])))
        assert worst < 1e-4

    def test_input_gradient_matches_fd(self):
        rng = np.random.default_rng(5)
        net = DenseNet((4, 16, 2), rng=rng)
        x = rng.normal(size=(1, 4))
        t = rng.normal(size=(1, 2))
        _, _, gx = net_gradients(net, sq_loss(t), x)
        h = 1e-5
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, j] += h
            xm[0, j] -= h
            lp, _ = sq_loss(t)(net.forward(xp))
            lm, _ = sq_loss(t)(net.forward(xm))
            fd = (lp - lm) / (2 * h)
            assert rel_err(gx[0, j], fd) < 1e-4


class TestAdam:
    def test_quadratic_minimization(self):
        # minimize (w - 3)^2 elementwise
        p = [np.zeros(4)]
        opt = Adam(p, lr=0.05)
        for _ in range(2000):
            g = [2.0 * (p[0] - 3.0)]
            opt.step(p, g)
        assert np.allclose(p[0], 3.0, atol=1e-3)

    def test_state_round_trip(self):
        p = [np.ones(3)]
        opt = Adam(p, lr=0.01)
        opt.step(p, [np.ones(3)])
        st = opt.state()
        opt2 = Adam([np.ones(3)], lr=0.01)
        opt2.load_state(st)
        assert opt2.t == opt.t
        assert np.allclose(opt2.m[0], opt.m[0])
        assert np.allclose(opt2.v[0], opt.v[0])


def test_polyak_moves_target():
    a = DenseNet((2, 4, 1), rng=np.random.default_rng(0))
    b = DenseNet((2, 4, 1), rng=np.random.default_rng(1))
    before = [w.copy() for w in a.weights]
    polyak_update(a, b, tau=0.25)
    for w0, wa, wb in zip(before, a.weights, b.weights):
        assert np.allclose(wa, 0.75 * w0 + 0.25 * wb)
    polyak_update(a, b, tau=1.0)
    for wa, wb in zip(a.weights, b.weights):
        assert np.allclose(wa, wb)
    for ba, bb in zip(a.biases, b.biases):
        assert np.allclose(ba, bb)
