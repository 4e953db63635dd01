import logging

import numpy as np
import pytest
import scipy.signal as ss

from grn.errors import ConfigError, LeakageError
from grn.signal import DEFAULT_BANDS, EegSegment, SynthConfig, gen_synthetic_dataset
from grn.synchrony import (
    SynchronyCache,
    WelchConfig,
    analytic_signal,
    band_bin_mask,
    build_resonance_tensor,
    coherence_matrix,
    instantaneous_phase,
    plv_matrix,
    plv_pair,
    welch_csd,
)

FS = 128.0
T = 512
BANDS = {b.name: b for b in DEFAULT_BANDS}


@pytest.fixture(scope="module")
def ds():
    return gen_synthetic_dataset(SynthConfig(n_subjects=3, n_trials_per_class=2, seed=4))


def noise_seg(seed, C=4, subject=0):
    return EegSegment(np.random.default_rng(seed).standard_normal((C, T)), FS, subject)


# -- analytic signal / PLV ----------------------------------------------------

def test_analytic_signal_matches_scipy_hilbert():
    x = np.random.default_rng(0).standard_normal((3, 256))
    np.testing.assert_allclose(analytic_signal(x), ss.hilbert(x, axis=-1), rtol=0, atol=1e-12)


def test_analytic_signal_rejects_odd_length():
    with pytest.raises(ValueError):
        analytic_signal(np.zeros(255))


def test_phase_of_cosine_is_linear():
    t = np.arange(T) / FS
    ph = instantaneous_phase(np.cos(2 * np.pi * 8 * t))
    expect = np.angle(np.exp(1j * 2 * np.pi * 8 * t))
    np.testing.assert_allclose(np.exp(1j * ph), np.exp(1j * expect), atol=1e-10)


def test_plv_of_constant_offset_is_one():
    t = np.arange(T) / FS
    a = instantaneous_phase(np.sin(2 * np.pi * 10 * t))
    b = instantaneous_phase(np.sin(2 * np.pi * 10 * t + 1.3))
    assert plv_pair(a, b) == pytest.approx(1.0, abs=1e-12)


def test_plv_pair_length_mismatch():
    with pytest.raises(ValueError):
        plv_pair(np.zeros(8), np.zeros(9))


def test_plv_matrix_matches_loop_and_transposes():
    a, b = noise_seg(1), noise_seg(2)
    band = BANDS["alpha"]
    m = plv_matrix(a, b, band).values
    from grn.signal import bandpass_array

    pa = instantaneous_phase(bandpass_array(a.data, FS, band.lo, band.hi))
    pb = instantaneous_phase(bandpass_array(b.data, FS, band.lo, band.hi))
    for i in range(4):
        for j in range(4):
            assert m[i, j] == pytest.approx(plv_pair(pa[i], pb[j]), abs=1e-12)
    np.testing.assert_allclose(plv_matrix(b, a, band).values, m.T, rtol=0, atol=1e-12)


def test_plv_self_diagonal_is_one():
    a = noise_seg(3)
    for band in DEFAULT_BANDS:
        assert np.allclose(np.diag(plv_matrix(a, a, band).values), 1.0, atol=1e-9)


def test_plv_matrix_rejects_mismatched_segments():
    with pytest.raises(ValueError):
        plv_matrix(noise_seg(0, C=4), noise_seg(1, C=3), BANDS["alpha"])


# -- Welch / coherence --------------------------------------------------------

def test_welch_csd_matches_scipy():
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal(T), rng.standard_normal(T)
    cfg = WelchConfig(256, 0.5)
    f, mine = welch_csd(x, y, cfg, FS)
    f_ref, ref = ss.csd(x, y, fs=FS, window="hann", nperseg=256, noverlap=128, detrend=False)
    np.testing.assert_allclose(f, f_ref)
    # scipy conjugates the first argument; ours conjugates the second
    np.testing.assert_allclose(mine, np.conj(ref), rtol=1e-10, atol=1e-14)


def test_coherence_matches_scipy_band_average():
    a, b = noise_seg(6), noise_seg(7)
    cfg = WelchConfig(128, 0.5)
    m = coherence_matrix(a, b, cfg).values
    mask = band_bin_mask(cfg, FS, DEFAULT_BANDS)
    for i, j in [(0, 0), (1, 3), (2, 1)]:
        _, coh = ss.coherence(a.data[i], b.data[j], fs=FS, window="hann", nperseg=128, noverlap=64, detrend=False)
        assert m[i, j] == pytest.approx(coh[mask].mean(), abs=1e-12)


def test_self_coherence_diagonal_is_one():
    a = noise_seg(8)
    np.testing.assert_allclose(np.diag(coherence_matrix(a, a).values), 1.0, atol=1e-9)


def test_self_coherence_all_ones_for_coherent_channels():
    # channels that are scaled copies of one signal are coherent pairwise, not only with themselves
    s = np.random.default_rng(11).standard_normal(T)
    a = EegSegment(np.outer([1.0, -2.0, 0.5, 3.0], s), FS)
    np.testing.assert_allclose(coherence_matrix(a, a).values, 1.0, atol=1e-9)


def test_delayed_copy_stays_coherent():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 4096))
    a, b = EegSegment(x, FS), EegSegment(np.roll(x, 3, axis=1), FS)
    m = coherence_matrix(a, b, WelchConfig(256, 0.5)).values
    np.testing.assert_allclose(np.diag(m), 1.0, atol=1e-2)


def test_independent_noise_coherence_is_small():
    vals = []
    for k in range(100):
        rng = np.random.default_rng(100 + k)
        a = EegSegment(rng.standard_normal((2, 4096)), FS)
        b = EegSegment(rng.standard_normal((2, 4096)), FS)
        vals.append(coherence_matrix(a, b, WelchConfig(256, 0.5)).values.mean())
    # 31 segments at 50% overlap: expected bias near 1/n_segments, with Hann overlap correlation
    assert np.mean(vals) < 0.15


def test_hann_leakage_bound():
    n, L = 4096, 256
    f0 = 16 * FS / L  # bin-aligned
    x = np.sin(2 * np.pi * f0 * np.arange(n) / FS)
    f, psd = welch_csd(x, x, WelchConfig(L, 0.5), FS)
    k0 = int(np.argmax(psd.real))
    assert f[k0] == pytest.approx(f0)
    far = np.abs(np.arange(len(f)) - k0) >= 3
    assert 10 * np.log10(psd.real[k0] / psd.real[far].max()) >= 30


def test_welch_csd_conjugate_symmetry():
    rng = np.random.default_rng(13)
    x, y = rng.standard_normal(T), rng.standard_normal(T)
    _, xy = welch_csd(x, y, WelchConfig(), FS)
    _, yx = welch_csd(y, x, WelchConfig(), FS)
    np.testing.assert_allclose(xy, np.conj(yx), rtol=0, atol=1e-12)


def test_plv_invariant_to_channel_scaling():
    a, b = noise_seg(14), noise_seg(15)
    scaled = a.data.copy()
    scaled[1] *= 10
    band = BANDS["beta"]
    np.testing.assert_allclose(plv_matrix(a.with_data(scaled), b, band).values, plv_matrix(a, b, band).values,
                               rtol=0, atol=1e-12)


def test_coherence_zero_channel_flagged(caplog):
    data = np.random.default_rng(9).standard_normal((3, T))
    data[2] = 0
    a = EegSegment(data, FS)
    with caplog.at_level(logging.WARNING, logger="grn.synchrony"):
        m = coherence_matrix(a, noise_seg(10, C=3))
    assert m.degenerate
    assert np.all(m.values[2] == 0)
    assert "zero" in caplog.text


def test_welch_config_validation():
    with pytest.raises(ConfigError):
        WelchConfig(100).validate(T)
    with pytest.raises(ConfigError):
        WelchConfig(512).validate(T)
    with pytest.raises(ConfigError):
        WelchConfig(256, 1.0).validate(T)


# -- resonance tensor ---------------------------------------------------------

def test_resonance_tensor_shape_range_and_guard(ds):
    sample = next(s for s in ds if s.subject_id == 0)
    refs = [next(s for s in ds if s.subject_id == k) for k in (1, 2)]
    rt = build_resonance_tensor(sample, refs)
    assert rt.values.shape == (2, 8, 8, 2)
    assert rt.reference_subject_ids == [1, 2]
    assert rt.values.min() >= -1e-9 and rt.values.max() <= 1 + 1e-9
    with pytest.raises(LeakageError):
        build_resonance_tensor(sample, refs + [sample])


def test_self_reference_tensor_has_unit_plv_diagonal(ds):
    rt = build_resonance_tensor(ds[0], [ds[0]] * 3, guard=False).values
    for k in range(3):
        np.testing.assert_allclose(np.diag(rt[k, :, :, 0]), 1.0, atol=1e-9)


def test_resonance_tensor_is_band_average_of_plv(ds):
    sample, ref = ds[0], next(s for s in ds if s.subject_id == 1)
    rt = build_resonance_tensor(sample, [ref]).values[0]
    plv = np.mean([plv_matrix(sample, ref, b).values for b in DEFAULT_BANDS], axis=0)
    np.testing.assert_allclose(rt[..., 0], plv, rtol=0, atol=1e-12)
    np.testing.assert_allclose(rt[..., 1], coherence_matrix(sample, ref).values, rtol=0, atol=1e-12)


def test_cache_matches_direct_build(ds):
    cache = SynchronyCache(ds)
    i = 0
    refs = [j for j in range(len(ds)) if ds[j].subject_id != ds[i].subject_id][:3]
    direct = build_resonance_tensor(ds[i], [ds[j] for j in refs]).values
    np.testing.assert_allclose(cache.tensor(i, refs), direct, rtol=0, atol=1e-12)
    n = len(cache)
    cache.tensor(i, refs)
    assert len(cache) == n
