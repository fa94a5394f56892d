import numpy as np
import pytest

from dfmup.errors import ParameterError
from dfmup.nn import layers as L

H = 1e-4


def fd_check(f, args, grads, rng, n_probe=40, tol=1e-4):
    """Central differences of the scalar f at random entries of each argument."""
    for a, g in zip(args, grads):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in rng.choice(flat.size, min(n_probe, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + H
            fp = f()
            flat[i] = old - H
            fm = f()
            flat[i] = old
            fd = (fp - fm) / (2 * H)
            scale = max(abs(fd), abs(gflat[i]), 1e-7)
            assert abs(fd - gflat[i]) / scale < tol, (i, fd, gflat[i])


def direct_conv(x, w, b):
    """Brute-force zero-padded cross-correlation, channels-first single sample."""
    cin, nx, ny, nz = x.shape
    xp = np.zeros((cin, nx + 2, ny + 2, nz + 2))
    xp[:, 1:-1, 1:-1, 1:-1] = x
    out = np.zeros((w.shape[0], nx, ny, nz))
    for o in range(w.shape[0]):
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    out[o, i, j, k] = (xp[:, i:i + 3, j:j + 3, k:k + 3] * w[o]).sum() + b[o]
    return out


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((1, 4, 5, 6))
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(L.conv3d_forward(x, w, np.zeros(1)), x)


def test_conv_ones_direct_sum():
    y = L.conv3d_forward(np.ones((1, 2, 2, 2)), np.ones((1, 1, 3, 3, 3)), np.zeros(1))
    # every cell of a 2^3 block sees all 8 cells within its 3^3 window
    np.testing.assert_array_equal(y, np.full((1, 2, 2, 2), 8.0))


def test_conv_matches_direct(rng):
    x = rng.standard_normal((3, 4, 3, 5))
    w = rng.standard_normal((2, 3, 3, 3, 3))
    b = rng.standard_normal(2)
    np.testing.assert_allclose(L.conv3d_forward(x, w, b), direct_conv(x, w, b), atol=1e-12)
    batch = L.conv3d_forward(np.stack([x, 2 * x]), w, b)
    np.testing.assert_allclose(batch[1], direct_conv(2 * x, w, b), atol=1e-12)


def test_conv_shape_contract():
    y = L.conv3d_forward(np.zeros((6, 8, 8, 8)), np.zeros((48, 6, 3, 3, 3)), np.zeros(48))
    assert y.shape == (48, 8, 8, 8)
    with pytest.raises(ParameterError):
        L.conv3d_forward(np.zeros((5, 4, 4, 4)), np.zeros((2, 6, 3, 3, 3)), np.zeros(2))
    with pytest.raises(ParameterError):
        L.conv3d_forward(np.zeros((6, 4, 4, 4)), np.zeros((2, 6, 2, 2, 2)), np.zeros(2))


def test_pool_examples():
    y, arg = L.maxpool3d(np.full((2, 4, 4, 4), 3.0))
    assert y.shape == (2, 2, 2, 2) and np.all(y == 3.0) and not arg.any()
    block = np.arange(1.0, 9.0).reshape(1, 2, 2, 2)
    y, arg = L.maxpool3d(block)
    assert y.item() == 8.0 and arg.item() == 7
    with pytest.raises(ParameterError):
        L.maxpool3d(np.zeros((1, 3, 4, 4)))


def test_batchnorm_training_and_inference(rng):
    x = rng.standard_normal((4, 3, 2, 2, 2)) * 5 + 2
    rm, rv = np.zeros(3), np.ones(3)
    y = L.batchnorm(x, np.ones(3), np.zeros(3), rm, rv, training=True)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3, 4)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3, 4)), 1, atol=1e-5)    # eps shifts the variance slightly
    assert np.all(rm != 0) and np.all(rv >= 0)
    ident = L.batchnorm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=False)
    np.testing.assert_allclose(ident, x / np.sqrt(1 + L.BN_EPS), rtol=1e-12)
    const = L.batchnorm(np.full((2, 1, 2, 2, 2), 4.0), np.ones(1), np.zeros(1), np.zeros(1), np.ones(1))
    np.testing.assert_array_equal(const, 0.0)
    with pytest.raises(ParameterError):
        L.batchnorm(x[:1], np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=True)


def test_running_stats_update():
    x = np.concatenate([np.zeros((1, 2, 2, 1)), np.full((1, 2, 2, 1), 2.0)])
    rm, rv = np.zeros(1), np.ones(1)
    L.bn_forward(x, np.ones(1), np.zeros(1), rm, rv, training=True)
    assert rm[0] == pytest.approx(0.1)
    # unbiased variance of {0,0,0,0,2,2,2,2} is 8/7
    assert rv[0] == pytest.approx(0.9 + 0.1 * 8 / 7)


def test_conv_gradients(rng):
    x = rng.standard_normal((2, 3, 4, 2, 3))
    w = rng.standard_normal((4, 3, 3, 3, 3))
    b = rng.standard_normal(4)
    r = rng.standard_normal((2, 3, 4, 2, 4))
    f = lambda: float((L.conv_cl_forward(x, w, b)[0] * r).sum())
    _, cache = L.conv_cl_forward(x, w, b)
    dx, dw, db = L.conv_cl_backward(r, cache)
    fd_check(f, [x, w, b], [dx, dw, db], rng)


@pytest.mark.parametrize("training", [True, False])
def test_bn_gradients(rng, training):
    x = rng.standard_normal((3, 2, 2, 2, 4))
    g, o = rng.uniform(0.5, 2, 4), rng.standard_normal(4)
    rm, rv = rng.standard_normal(4), rng.uniform(0.5, 2, 4)
    r = rng.standard_normal(x.shape)
    f = lambda: float((L.bn_forward(x, g, o, rm.copy(), rv.copy(), training)[0] * r).sum())
    _, cache = L.bn_forward(x, g, o, rm.copy(), rv.copy(), training)
    dx, dg, do = L.bn_backward(r, cache)
    fd_check(f, [x, g, o], [dx, dg, do], rng)


def test_pool_relu_gap_linear_gradients(rng):
    # distinct values away from zero keep the check clear of ReLU and argmax switches
    x = rng.permutation(np.linspace(0.05, 3, 2 * 4 * 4 * 2 * 3)).reshape(2, 4, 4, 2, 3) * rng.choice([-1, 1], (2, 4, 4, 2, 3))
    r = rng.standard_normal((2, 2, 2, 1, 3))
    f = lambda: float((L.pool_cl_forward(L.relu_forward(x)[0])[0] * r).sum())
    h, mask = L.relu_forward(x)
    _, pc = L.pool_cl_forward(h)
    dx = L.relu_backward(L.pool_cl_backward(r, pc), mask)
    fd_check(f, [x], [dx], rng, n_probe=48)

    y, shape = L.gap_forward(x)
    rg = rng.standard_normal(y.shape)
    fd_check(lambda: float((L.gap_forward(x)[0] * rg).sum()), [x], [L.gap_backward(rg, shape)], rng)

    xi, w, b = rng.standard_normal((5, 4)), rng.standard_normal((3, 4)), rng.standard_normal(3)
    rl = rng.standard_normal((5, 3))
    dxi, dw, db = L.linear_backward(rl, xi, w)
    fd_check(lambda: float((L.linear_forward(xi, w, b)[0] * rl).sum()), [xi, w, b], [dxi, dw, db], rng)


def test_mse_loss_examples():
    t = np.arange(6.0).reshape(1, 6)
    loss, d = L.mse_loss(t, t)
    assert loss == 0 and not d.any()
    l1, _ = L.mse_loss(t + 0.5, t)
    l2, _ = L.mse_loss(t + 1.0, t)
    assert l2 == pytest.approx(4 * l1)
