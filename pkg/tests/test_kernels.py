import numpy as np
import pytest
from scipy.signal import correlate2d

from grn import kernels
from grn.kernels import available_backends

BACKENDS = available_backends()


def test_python_backend_always_present():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.fixture(params=sorted(BACKENDS))
def impl(request):
    return BACKENDS[request.param]


def _phasors(rng, shape):
    return np.exp(1j * rng.uniform(-np.pi, np.pi, size=shape))


def test_band_plv_matches_pairwise_loop(impl):
    rng = np.random.default_rng(0)
    pa, pb = _phasors(rng, (3, 4, 64)), _phasors(rng, (3, 5, 64))
    out = impl.band_plv(pa, pb)
    assert out.shape == (3, 4, 5)
    for b in range(3):
        for i in range(4):
            for j in range(5):
                ref = abs(np.mean(pa[b, i] * np.conj(pb[b, j])))
                assert out[b, i, j] == pytest.approx(ref, abs=1e-13)


def test_msc_mean_matches_direct_formula(impl):
    rng = np.random.default_rng(1)
    xa = rng.standard_normal((6, 3, 10)) + 1j * rng.standard_normal((6, 3, 10))
    xb = rng.standard_normal((6, 4, 10)) + 1j * rng.standard_normal((6, 4, 10))
    out = impl.msc_mean(xa, xb)
    for i in range(3):
        for j in range(4):
            sxy = np.sum(xa[:, i] * np.conj(xb[:, j]), axis=0)
            sxx = np.sum(np.abs(xa[:, i]) ** 2, axis=0)
            syy = np.sum(np.abs(xb[:, j]) ** 2, axis=0)
            assert out[i, j] == pytest.approx(np.mean(np.abs(sxy) ** 2 / (sxx * syy)), abs=1e-13)


def test_msc_mean_zero_power_gives_zero(impl):
    rng = np.random.default_rng(2)
    xa = rng.standard_normal((4, 2, 5)) + 0j
    xa[:, 1] = 0
    out = impl.msc_mean(xa, xa.copy())
    assert out[1, 1] == 0.0 and out[0, 1] == 0.0
    assert out[0, 0] == pytest.approx(1.0, abs=1e-12)


def _conv_oracle(x, w, b):
    n, ci, H, W = x.shape
    co, _, kh, kw = w.shape
    out = np.zeros((n, co, H - kh + 1, W - kw + 1))
    for s in range(n):
        for o in range(co):
            acc = np.full(out.shape[2:], b[o])
            for c in range(ci):
                acc += correlate2d(x[s, c], w[o, c], mode="valid")
            out[s, o] = acc
    return out


def test_conv2d_forward_matches_correlate2d(impl):
    rng = np.random.default_rng(3)
    x, w, b = rng.standard_normal((3, 2, 6, 6)), rng.standard_normal((4, 2, 3, 3)), rng.standard_normal(4)
    np.testing.assert_allclose(impl.conv2d_forward(x, w, b), _conv_oracle(x, w, b), rtol=0, atol=1e-12)


def test_conv2d_backward_is_adjoint_of_forward(impl):
    rng = np.random.default_rng(4)
    x, w = rng.standard_normal((2, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
    g = rng.standard_normal((2, 3, 3, 3))
    gx, gw, gb = impl.conv2d_backward(x, w, g)
    zero = np.zeros(3)
    # <conv(x, w), g> is bilinear, so its gradients are exact directional derivatives
    dx, dw = rng.standard_normal(x.shape), rng.standard_normal(w.shape)
    assert np.sum(_conv_oracle(dx, w, zero) * g) == pytest.approx(np.sum(gx * dx), rel=1e-12)
    assert np.sum(_conv_oracle(x, dw, zero) * g) == pytest.approx(np.sum(gw * dw), rel=1e-12)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-13)


def test_conv2d_backward_rejects_bad_gradient_shape(impl):
    x, w = np.zeros((1, 2, 5, 5)), np.zeros((3, 2, 3, 3))
    with pytest.raises(ValueError):
        impl.conv2d_backward(x, w, np.zeros((1, 3, 5, 5)))


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backends_agree():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    rng = np.random.default_rng(5)
    pa, pb = _phasors(rng, (5, 8, 128)), _phasors(rng, (5, 8, 128))
    np.testing.assert_allclose(cy.band_plv(pa, pb), py.band_plv(pa, pb), rtol=0, atol=1e-13)
    xa = rng.standard_normal((3, 8, 20)) + 1j * rng.standard_normal((3, 8, 20))
    xb = rng.standard_normal((3, 8, 20)) + 1j * rng.standard_normal((3, 8, 20))
    np.testing.assert_allclose(cy.msc_mean(xa, xb), py.msc_mean(xa, xb), rtol=0, atol=1e-13)
    x, w, b = rng.standard_normal((6, 2, 8, 8)), rng.standard_normal((8, 2, 3, 3)), rng.standard_normal(8)
    np.testing.assert_allclose(cy.conv2d_forward(x, w, b), py.conv2d_forward(x, w, b), rtol=0, atol=1e-12)
    g = rng.standard_normal((6, 8, 6, 6))
    for a, c in zip(cy.conv2d_backward(x, w, g), py.conv2d_backward(x, w, g)):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-11)
