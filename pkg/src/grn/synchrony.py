"""Phase locking value, Welch coherence and multi-subject resonance tensors."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from . import kernels
from .errors import ConfigError, LeakageError
from .signal import DEFAULT_BANDS, BandDef, EegSegment, bandpass_array

log = logging.getLogger(__name__)

PLV, COH = "PLV", "CoH"


@dataclass(frozen=True)
class WelchConfig:
    segment_len: int = 256
    overlap: float = 0.5
    window: str = "hann"

    @property
    def step(self) -> int:
        return self.segment_len - int(round(self.segment_len * self.overlap))

    def n_segments(self, n: int) -> int:
        if n < self.segment_len:
            return 0
        return 1 + (n - self.segment_len) // self.step

    def validate(self, n: int) -> None:
        L = self.segment_len
        if L < 2 or L & (L - 1):
            raise ConfigError(f"welch segment_len must be a power of two, got {L}")
        if not 0 <= self.overlap < 1:
            raise ConfigError(f"welch overlap must lie in [0, 1), got {self.overlap}")
        if self.window != "hann":
            raise ConfigError(f"only the Hann window is supported, got {self.window!r}")
        if self.n_segments(n) < 2:
            raise ConfigError(
                f"welch segment_len={L}, overlap={self.overlap} gives fewer than 2 segments for {n} samples"
            )


@dataclass
class SyncMatrix:
    values: np.ndarray
    kind: str
    band: BandDef | None = None
    degenerate: bool = False


@dataclass
class ResonanceTensor:
    values: np.ndarray  # [K_r, C, C, 2]; last axis (PLV, CoH)
    reference_subject_ids: list = field(default_factory=list)


# -- phase --------------------------------------------------------------------

def analytic_signal(x) -> np.ndarray:
    """FFT analytic signal along the last axis (even length only)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 4 or n % 2:
        raise ValueError(f"analytic_signal needs an even length >= 4, got {n}")
    h = np.zeros(n)
    h[0] = h[n // 2] = 1.0
    h[1 : n // 2] = 2.0
    return np.fft.ifft(np.fft.fft(x, axis=-1) * h, axis=-1)


def instantaneous_phase(x) -> np.ndarray:
    return np.angle(analytic_signal(x))


def plv_pair(phase_a, phase_b) -> float:
    phase_a = np.asarray(phase_a, dtype=np.float64)
    phase_b = np.asarray(phase_b, dtype=np.float64)
    if phase_a.shape != phase_b.shape:
        raise ValueError(f"phase length mismatch: {phase_a.shape} vs {phase_b.shape}")
    return float(np.abs(np.mean(np.exp(1j * (phase_a - phase_b)))))


def band_phasors(data, fs, bands) -> np.ndarray:
    """Unit phasors exp(i*phase) of each band-passed channel, shape [B, C, T]."""
    out = np.empty((len(bands),) + np.shape(data), dtype=np.complex128)
    for k, band in enumerate(bands):
        band.validate(fs)
        out[k] = np.exp(1j * instantaneous_phase(bandpass_array(data, fs, band.lo, band.hi)))
    return out


def _check_pair(a: EegSegment, b: EegSegment):
    if a.data.shape != b.data.shape or a.fs != b.fs:
        raise ValueError(
            f"segment mismatch: shapes {a.data.shape} vs {b.data.shape}, fs {a.fs} vs {b.fs}"
        )


def plv_matrix(seg_a: EegSegment, seg_b: EegSegment, band: BandDef) -> SyncMatrix:
    """PLV between every channel of ``seg_a`` (rows) and of ``seg_b`` (columns)."""
    _check_pair(seg_a, seg_b)
    pa = band_phasors(seg_a.data, seg_a.fs, [band])
    pb = band_phasors(seg_b.data, seg_b.fs, [band])
    return SyncMatrix(kernels.band_plv(pa, pb)[0], PLV, band)


# -- spectra ------------------------------------------------------------------

def welch_freqs(cfg: WelchConfig, fs: float) -> np.ndarray:
    return np.fft.rfftfreq(cfg.segment_len, d=1.0 / fs)


def welch_spectra(x, cfg: WelchConfig) -> np.ndarray:
    """Hann-windowed one-sided FFTs of each Welch segment, shape [S, ..., F]."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    cfg.validate(n)
    L = cfg.segment_len
    w = get_window(cfg.window, L)
    starts = range(0, cfg.n_segments(n) * cfg.step, cfg.step)
    return np.stack([np.fft.rfft(x[..., s : s + L] * w, axis=-1) for s in starts])


def welch_csd(x, y, cfg: WelchConfig, fs: float):
    """One-sided Welch cross-spectral density, X * conj(Y) averaged over segments.

    Returns ``(freqs, csd)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"welch_csd length mismatch: {x.shape} vs {y.shape}")
    L = cfg.segment_len
    w = get_window(cfg.window, L)
    X = welch_spectra(x, cfg)
    Y = welch_spectra(y, cfg)
    csd = np.mean(X * np.conj(Y), axis=0) / (fs * np.sum(w**2))
    # one-sided density; DC and Nyquist are not mirrored
    csd[..., 1 : (L + 1) // 2] *= 2
    return welch_freqs(cfg, fs), csd


def band_bin_mask(cfg: WelchConfig, fs: float, bands) -> np.ndarray:
    f = welch_freqs(cfg, fs)
    mask = np.zeros(f.shape, dtype=bool)
    for band in bands:
        mask |= (f >= band.lo) & (f < band.hi)
    if not mask.any():
        raise ConfigError("no Welch frequency bins fall inside the given bands")
    return mask


def band_spectra(data, fs, cfg: WelchConfig, bands) -> np.ndarray:
    """Welch segment spectra restricted to bins inside the band union, [S, C, F]."""
    return np.ascontiguousarray(welch_spectra(data, cfg)[..., band_bin_mask(cfg, fs, bands)])


def coherence_matrix(seg_a: EegSegment, seg_b: EegSegment, cfg: WelchConfig = WelchConfig(), bands=DEFAULT_BANDS) -> SyncMatrix:
    """Band-averaged magnitude-squared coherence between all channel pairs.

    Pairs involving a channel with zero power are reported as 0 and the
    result is flagged ``degenerate``.
    """
    _check_pair(seg_a, seg_b)
    xa = band_spectra(seg_a.data, seg_a.fs, cfg, bands)
    xb = band_spectra(seg_b.data, seg_b.fs, cfg, bands)
    values = kernels.msc_mean(xa, xb)
    degenerate = bool(_has_silent_channel(xa) or _has_silent_channel(xb))
    if degenerate:
        log.warning("coherence: all-zero channel power, affected pairs set to 0")
    return SyncMatrix(values, COH, None, degenerate)


def _has_silent_channel(spectra) -> bool:
    power = np.sum(np.abs(spectra) ** 2, axis=(0, 2))
    return bool(np.any(power == 0))


# -- resonance tensor ---------------------------------------------------------

def build_resonance_tensor(sample: EegSegment, refs, bands=DEFAULT_BANDS, cfg: WelchConfig = WelchConfig(), guard: bool = True) -> ResonanceTensor:
    """Stack band-averaged PLV and CoH matrices of ``sample`` against each reference.

    With ``guard`` set, a reference from the sample's own subject is a
    LeakageError.
    """
    refs = list(refs)
    if not refs:
        raise ValueError("need at least one reference segment")
    ids = [r.subject_id for r in refs]
    if guard and sample.subject_id in ids:
        raise LeakageError(f"reference set {ids} contains the sample's subject {sample.subject_id}")
    pa = band_phasors(sample.data, sample.fs, bands)
    xa = band_spectra(sample.data, sample.fs, cfg, bands)
    C = sample.n_channels
    out = np.empty((len(refs), C, C, 2))
    for k, ref in enumerate(refs):
        _check_pair(sample, ref)
        out[k, :, :, 0] = kernels.band_plv(pa, band_phasors(ref.data, ref.fs, bands)).mean(axis=0)
        out[k, :, :, 1] = kernels.msc_mean(xa, band_spectra(ref.data, ref.fs, cfg, bands))
    return ResonanceTensor(out, ids)


class SynchronyCache:
    """Memoised pairwise (PLV, CoH) matrices over the segments of one dataset.

    Per-segment phasors and band spectra are computed once; each ordered pair
    is computed at most once. Not thread-safe; use one instance per worker.
    """

    def __init__(self, dataset, bands=DEFAULT_BANDS, cfg: WelchConfig = WelchConfig()):
        self.dataset = dataset
        self.bands = tuple(bands)
        self.cfg = cfg
        cfg.validate(dataset.n_samples)
        for b in self.bands:
            b.validate(dataset.fs)
        self._phasors = {}
        self._spectra = {}
        self._pairs = {}

    def _seg(self, i):
        if i not in self._phasors:
            seg = self.dataset[i]
            self._phasors[i] = band_phasors(seg.data, seg.fs, self.bands)
            self._spectra[i] = band_spectra(seg.data, seg.fs, self.cfg, self.bands)
        return self._phasors[i], self._spectra[i]

    def pair(self, i: int, j: int) -> np.ndarray:
        """[C, C, 2] block: band-averaged PLV and CoH of segment i vs segment j."""
        key = (i, j)
        hit = self._pairs.get(key)
        if hit is None:
            pa, xa = self._seg(i)
            pb, xb = self._seg(j)
            hit = np.stack([kernels.band_plv(pa, pb).mean(axis=0), kernels.msc_mean(xa, xb)], axis=-1)
            self._pairs[key] = hit
        return hit

    def tensor(self, i: int, refs) -> np.ndarray:
        return np.stack([self.pair(i, j) for j in refs])

    def __len__(self):
        return len(self._pairs)
