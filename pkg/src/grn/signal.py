"""Synthetic multi-subject EEG, FFT band-pass filtering and DE features."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

# Smoothing time constant (seconds) of the per-trial phase-jitter process.
PHASE_JITTER_TAU = 0.1
VARIANCE_FLOOR = 1e-12

DATASET_MAGIC = b"GRN1"
DATASET_VERSION = 1


@dataclass(frozen=True)
class BandDef:
    name: str
    lo: float
    hi: float

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def validate(self, fs: float) -> None:
        if not (0 < self.lo < self.hi < fs / 2):
            raise ConfigError(
                f"band {self.name!r} [{self.lo}, {self.hi}) Hz must satisfy "
                f"0 < lo < hi < fs/2 = {fs / 2}"
            )


DEFAULT_BANDS = (
    BandDef("delta", 1.0, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("alpha", 8.0, 14.0),
    BandDef("beta", 14.0, 31.0),
    BandDef("gamma", 31.0, 50.0),
)


@dataclass
class EegSegment:
    """One multi-channel EEG window, ``data`` is [C x T]."""

    data: np.ndarray
    fs: float
    subject_id: int = 0
    trial_id: int = 0
    label: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"segment data must be 2-D [C x T], got shape {self.data.shape}")
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        C, T = self.data.shape
        if C < 2:
            raise ValueError(f"segment needs at least 2 channels, got {C}")
        if T < 2 * self.fs:
            raise ValueError(f"segment needs at least 2 s of data ({2 * self.fs:g} samples), got {T}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("segment data contains non-finite values")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "EegSegment":
        return EegSegment(data, self.fs, self.subject_id, self.trial_id, self.label)


@dataclass
class FeatureGrid:
    values: np.ndarray  # [C x B]
    subject_id: int = 0
    trial_id: int = 0
    label: int = 0


@dataclass
class SynthConfig:
    n_subjects: int = 6
    n_trials_per_class: int = 20
    n_classes: int = 3
    n_channels: int = 8
    n_samples: int = 512
    fs: float = 128.0
    phase_jitter_std: float = 0.3
    subject_noise_std: float = 0.5
    mixing_strength: float = 0.5
    class_locking_ratio: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"invalid SynthConfig.{name}={getattr(self, name)!r}: {why}")

        if self.n_subjects < 3:
            bad("n_subjects", "need at least 3 subjects")
        if self.n_classes < 2:
            bad("n_classes", "need at least 2 classes")
        if self.n_trials_per_class < 1:
            bad("n_trials_per_class", "must be >= 1")
        if self.n_channels < 2:
            bad("n_channels", "need at least 2 channels")
        if self.fs <= 0:
            bad("fs", "must be positive")
        if self.n_samples < 2 * self.fs:
            bad("n_samples", "need at least 2 seconds of data")
        if self.phase_jitter_std < 0:
            bad("phase_jitter_std", "must be >= 0")
        if self.subject_noise_std < 0:
            bad("subject_noise_std", "must be >= 0")
        if not 0 <= self.mixing_strength <= 1:
            bad("mixing_strength", "must lie in [0, 1]")
        if self.class_locking_ratio < 1:
            bad("class_locking_ratio", "must be >= 1")


@dataclass
class Dataset:
    """A list of equally shaped segments plus the class count."""

    segments: list
    n_classes: int
    _subjects: np.ndarray = field(init=False, repr=False)
    _labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("empty dataset")
        first = self.segments[0]
        for seg in self.segments:
            if seg.data.shape != first.data.shape or seg.fs != first.fs:
                raise ValueError("all segments must share shape and fs")
            if not 0 <= seg.label < self.n_classes:
                raise ValueError(f"label {seg.label} outside 0..{self.n_classes - 1}")
        self._subjects = np.array([s.subject_id for s in self.segments], dtype=np.int64)
        self._labels = np.array([s.label for s in self.segments], dtype=np.int64)

    def __len__(self):
        return len(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    @property
    def subject_ids(self) -> np.ndarray:
        return self._subjects

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def subjects(self) -> list:
        return sorted(set(self._subjects.tolist()))

    @property
    def n_channels(self) -> int:
        return self.segments[0].n_channels

    @property
    def n_samples(self) -> int:
        return self.segments[0].n_samples

    @property
    def fs(self) -> float:
        return self.segments[0].fs


def _jitter_process(rng, n, fs, std):
    """Stationary smooth Gaussian phase noise with marginal std ``std``."""
    sigma = PHASE_JITTER_TAU * fs
    half = int(np.ceil(4 * sigma))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    k /= np.sqrt(np.sum(k**2))
    white = rng.standard_normal(n + 2 * half)
    return std * np.convolve(white, k, mode="valid")


def gen_synthetic_dataset(cfg: SynthConfig, bands=DEFAULT_BANDS) -> Dataset:
    """Generate stimulus-locked multi-subject EEG.

    Each class owns an amplitude topography over (channel, band), one phase
    per band and a locking factor. A trial is a sum of band-centre
    oscillators whose phase is perturbed by a smooth jitter process drawn per
    (subject, trial, band) and shared across channels, with std
    ``phase_jitter_std`` times the class locking factor. A subject-specific
    channel remix and white noise follow.

    Locking factors are log-spaced from ``1/r`` to ``r`` with
    ``r = class_locking_ratio``, so classes differ in how strongly they
    synchronise across subjects; ``r = 1`` gives every class the same jitter.
    """
    cfg.validate()
    for b in bands:
        b.validate(cfg.fs)
    rng = np.random.default_rng(cfg.seed)
    L, C, T, B = cfg.n_classes, cfg.n_channels, cfg.n_samples, len(bands)
    t = np.arange(T) / cfg.fs
    freqs = np.array([b.center for b in bands])

    amps = rng.uniform(0.2, 1.5, size=(L, C, B))
    phases = rng.uniform(0, 2 * np.pi, size=(L, B))
    locking = cfg.class_locking_ratio ** np.linspace(-1.0, 1.0, L)
    m = cfg.mixing_strength

    segments = []
    for s in range(cfg.n_subjects):
        remix = rng.standard_normal((C, C)) / np.sqrt(C)
        mixer = (1 - m) * np.eye(C) + m * remix
        for label in range(L):
            for k in range(cfg.n_trials_per_class):
                jitter = cfg.phase_jitter_std * locking[label]
                eps = np.stack([_jitter_process(rng, T, cfg.fs, jitter) for _ in range(B)])
                osc = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[label][:, None] + eps)
                x = mixer @ (amps[label] @ osc)
                x = x + cfg.subject_noise_std * rng.standard_normal((C, T))
                trial_id = label * cfg.n_trials_per_class + k
                segments.append(EegSegment(x, float(cfg.fs), s, trial_id, label))
    return Dataset(segments, L)


def bandpass_array(x, fs, lo, hi):
    """Brick-wall FFT band-pass of ``x`` along its last axis, keeping lo <= |f| < hi."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    f = np.abs(np.fft.fftfreq(n, d=1.0 / fs))
    mask = (f >= lo) & (f < hi)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * mask, axis=-1).real


def bandpass(seg: EegSegment, band: BandDef) -> EegSegment:
    band.validate(seg.fs)
    return seg.with_data(bandpass_array(seg.data, seg.fs, band.lo, band.hi))


def de_feature(x) -> float:
    """Gaussian differential entropy 0.5*ln(2*pi*e*var) with a variance floor."""
    var = max(float(np.var(x)), VARIANCE_FLOOR)
    return 0.5 * np.log(2 * np.pi * np.e * var)


def _de_rows(x):
    var = np.maximum(np.var(x, axis=-1), VARIANCE_FLOOR)
    return 0.5 * np.log(2 * np.pi * np.e * var)


def extract_features(seg: EegSegment, bands=DEFAULT_BANDS) -> FeatureGrid:
    cols = []
    for band in bands:
        band.validate(seg.fs)
        cols.append(_de_rows(bandpass_array(seg.data, seg.fs, band.lo, band.hi)))
    return FeatureGrid(np.stack(cols, axis=1), seg.subject_id, seg.trial_id, seg.label)


def feature_matrix(dataset: Dataset, bands=DEFAULT_BANDS) -> np.ndarray:
    """DE features for every segment, shape [N, C, B]."""
    return np.stack([extract_features(seg, bands).values for seg in dataset.segments])


# -- binary dataset file ------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIId")
_SEG_HEADER = struct.Struct("<III")


def write_dataset(path, dataset: Dataset) -> None:
    C, T = dataset.n_channels, dataset.n_samples
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(dataset), C, T, dataset.n_classes, dataset.fs))
        for seg in dataset.segments:
            fh.write(_SEG_HEADER.pack(seg.subject_id, seg.trial_id, seg.label))
            fh.write(np.ascontiguousarray(seg.data, dtype="<f8").tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: bad magic at offset 0, expected {DATASET_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header at offset {len(raw)}")
    _, version, n, C, T, n_classes, fs = _HEADER.unpack_from(raw, 0)
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at offset 4")
    offset = _HEADER.size
    payload = C * T * 8
    segments = []
    for _ in range(n):
        if offset + _SEG_HEADER.size + payload > len(raw):
            raise DataFormatError(f"{path}: truncated segment record at offset {offset}")
        subject, trial, label = _SEG_HEADER.unpack_from(raw, offset)
        offset += _SEG_HEADER.size
        data = np.frombuffer(raw, dtype="<f8", count=C * T, offset=offset).reshape(C, T).astype(np.float64)
        offset += payload
        try:
            segments.append(EegSegment(data, fs, subject, trial, label))
        except ValueError as exc:
            raise DataFormatError(f"{path}: invalid segment at offset {offset - payload}: {exc}") from exc
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes at offset {offset}")
    try:
        return Dataset(segments, n_classes)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def synth_config_fields():
    return [f.name for f in fields(SynthConfig)]
