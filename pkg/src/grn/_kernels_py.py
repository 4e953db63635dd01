"""Pure numpy implementations of the hot kernels.

Reference versions for ``grn._kernels``; both must agree to rounding error.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def band_plv(pa, pb):
    """Per-band PLV matrices from unit phasors.

    pa, pb : complex arrays [B, C, T]. Returns real [B, C, C] with
    out[b, i, j] = |mean_t pa[b, i, t] * conj(pb[b, j, t])|.
    """
    pa = np.asarray(pa, dtype=np.complex128)
    pb = np.asarray(pb, dtype=np.complex128)
    T = pa.shape[-1]
    return np.abs(pa @ np.conj(pb).transpose(0, 2, 1)) / T


def msc_mean(xa, xb):
    """Band-averaged magnitude-squared coherence from windowed spectra.

    xa, xb : complex arrays [S, C, F] (Welch segments, channels, bins).
    Bins where either auto-spectrum vanishes contribute 0.
    """
    xa = np.asarray(xa, dtype=np.complex128)
    xb = np.asarray(xb, dtype=np.complex128)
    sxy = np.einsum("sif,sjf->ijf", xa, np.conj(xb))
    saa = np.einsum("sif,sif->if", xa, np.conj(xa)).real
    sbb = np.einsum("sjf,sjf->jf", xb, np.conj(xb)).real
    den = saa[:, None, :] * sbb[None, :, :]
    num = sxy.real**2 + sxy.imag**2
    coh = np.zeros_like(den)
    np.divide(num, den, out=coh, where=den > 0)
    return coh.mean(axis=-1)


def conv2d_forward(x, w, b):
    """Valid (no padding) stride-1 cross-correlation.

    x [N, Cin, H, W], w [Cout, Cin, kh, kw], b [Cout] -> [N, Cout, H-kh+1, W-kw+1]
    """
    kh, kw = w.shape[2], w.shape[3]
    cols = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N, Cin, Ho, Wo, kh, kw
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, Cout
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, gout):
    """Gradients of conv2d_forward w.r.t. (x, w, b) given upstream gout."""
    kh, kw = w.shape[2], w.shape[3]
    expect = (x.shape[0], w.shape[0], x.shape[2] - kh + 1, x.shape[3] - kw + 1)
    if gout.shape != expect:
        raise ValueError("conv2d_backward: gradient shape does not match the forward output")
    cols = sliding_window_view(x, (kh, kw), axis=(2, 3))
    gw = np.tensordot(gout, cols, axes=([0, 2, 3], [0, 2, 3]))
    gb = gout.sum(axis=(0, 2, 3))
    padded = np.pad(gout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    w_flip = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    gx = conv2d_forward(padded, w_flip, np.zeros(w.shape[1]))
    return gx, np.ascontiguousarray(gw), gb
