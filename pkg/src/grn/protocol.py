"""Subject-dependent and leave-one-subject-out splits, and reference sampling.

Reference sets are only ever drawn from a fold's training split. The guard in
:func:`sample_references` raises :class:`LeakageError` otherwise; it never
merely warns.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LeakageError

SD, LOSO = "sd", "loso"


@dataclass
class Fold:
    fold_id: int
    protocol: str
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    train_subjects: frozenset
    test_subjects: frozenset

    def validate(self) -> None:
        parts = [set(self.train_indices.tolist()), set(self.val_indices.tolist()), set(self.test_indices.tolist())]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ValueError(f"fold {self.fold_id}: partitions overlap")
        if self.protocol == LOSO and (len(self.test_subjects) != 1 or self.test_subjects & self.train_subjects):
            raise ValueError(f"fold {self.fold_id}: LOSO needs one held-out subject disjoint from training")


@dataclass
class ReferenceSet:
    indices: list
    subject_ids: list
    label: int | None = None

    def segments(self, dataset):
        return [dataset[i] for i in self.indices]


@dataclass
class LeakageMonitor:
    """Counts every reference-set check and every violation seen."""

    checks: int = 0
    violations: int = 0
    log: list = field(default_factory=list)

    def record(self, fold_id, ref_subjects, ok):
        self.checks += 1
        if not ok:
            self.violations += 1
            self.log.append((fold_id, tuple(ref_subjects)))

    def merge(self, other: "LeakageMonitor"):
        self.checks += other.checks
        self.violations += other.violations
        self.log.extend(other.log)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _check_fracs(*fracs):
    for f in fracs:
        if not 0 < f < 1:
            raise ConfigError(f"split fractions must lie in (0, 1), got {f}")
    if sum(fracs) >= 1:
        raise ConfigError(f"split fractions must sum to < 1, got {sum(fracs)}")


def split_sd(dataset, val_frac=0.25, test_frac=0.25, seed=0):
    """One fold per subject: that subject's trials split train/val/test per class."""
    _check_fracs(val_frac, test_frac)
    subjects_arr, labels = dataset.subject_ids, dataset.labels
    folds = []
    for fold_id, subj in enumerate(dataset.subjects):
        rng = np.random.default_rng([seed, subj])
        tr, va, te = [], [], []
        for label in range(dataset.n_classes):
            idx = np.flatnonzero((subjects_arr == subj) & (labels == label))
            n = len(idx)
            if n < 3:
                raise ValueError(f"subject {subj} has {n} trials of class {label}; SD split needs >= 3")
            idx = rng.permutation(idx)
            n_test = max(1, _round_half_up(test_frac * n))
            n_val = max(1, _round_half_up(val_frac * n))
            if n - n_test - n_val < 1:
                n_val = n - n_test - 1
            te.extend(idx[:n_test])
            va.extend(idx[n_test : n_test + n_val])
            tr.extend(idx[n_test + n_val :])
        fold = Fold(
            fold_id,
            SD,
            np.sort(np.array(tr, dtype=np.int64)),
            np.sort(np.array(va, dtype=np.int64)),
            np.sort(np.array(te, dtype=np.int64)),
            frozenset([subj]),
            frozenset([subj]),
        )
        fold.validate()
        folds.append(fold)
    return folds


def split_loso(dataset, val_frac=0.125, seed=0):
    """One fold per subject; the rest are split train/val stratified by class."""
    _check_fracs(val_frac)
    subjects = dataset.subjects
    if len(subjects) < 3:
        raise ConfigError(f"LOSO needs at least 3 subjects, got {len(subjects)}")
    subjects_arr, labels = dataset.subject_ids, dataset.labels
    folds = []
    for fold_id, held in enumerate(subjects):
        rng = np.random.default_rng([seed, fold_id])
        tr, va = [], []
        for label in range(dataset.n_classes):
            idx = rng.permutation(np.flatnonzero((subjects_arr != held) & (labels == label)))
            n_val = _round_half_up(val_frac * len(idx))
            va.extend(idx[:n_val])
            tr.extend(idx[n_val:])
        fold = Fold(
            fold_id,
            LOSO,
            np.sort(np.array(tr, dtype=np.int64)),
            np.sort(np.array(va, dtype=np.int64)),
            np.flatnonzero(subjects_arr == held).astype(np.int64),
            frozenset(s for s in subjects if s != held),
            frozenset([held]),
        )
        fold.validate()
        folds.append(fold)
    return folds


def _reference_pool(fold):
    """Dataset indices references may be drawn from."""
    return fold.train_indices


def eval_rng(seed, fold, segment):
    return np.random.default_rng([seed, fold.fold_id, segment.subject_id, segment.trial_id])


def sample_references(fold, dataset, sample_index, K_r, rng=None, training=False, seed=0, monitor=None, match_label=False):
    """Draw ``K_r`` reference trials for ``dataset[sample_index]``.

    LOSO: one trial from each of ``K_r`` distinct training subjects, preferring
    subjects other than the sample's own. SD: ``K_r`` distinct trials of the
    single training subject. With ``training`` and ``match_label`` set,
    trials sharing the sample's label are preferred; otherwise labels are
    ignored. At evaluation ``rng`` defaults to a generator seeded by
    (seed, fold, subject, trial).
    """
    sample = dataset[sample_index]
    if rng is None:
        rng = eval_rng(seed, fold, sample)
    pool = np.asarray(_reference_pool(fold))
    pool = pool[pool != sample_index]
    pool_subjects = dataset.subject_ids[pool]
    pool_labels = dataset.labels[pool]
    want_label = sample.label if (training and match_label) else None

    def pick(candidates):
        if want_label is not None:
            matched = candidates[pool_labels[candidates] == want_label]
            if len(matched):
                candidates = matched
        return candidates

    if fold.protocol == SD:
        cands = pick(np.arange(len(pool)))
        if len(cands) < K_r:
            cands = np.arange(len(pool))
        if len(cands) < K_r:
            raise ConfigError(f"fold {fold.fold_id}: only {len(cands)} training trials for K_r={K_r}")
        chosen = pool[rng.choice(cands, size=K_r, replace=False)]
    else:
        subjects = sorted(set(pool_subjects.tolist()))
        if len(subjects) < K_r:
            raise ConfigError(
                f"fold {fold.fold_id}: K_r={K_r} exceeds the {len(subjects)} training subjects available"
            )
        others = [s for s in subjects if s != sample.subject_id]
        if K_r <= len(others):
            picked = [others[i] for i in rng.choice(len(others), size=K_r, replace=False)]
        else:
            picked = list(rng.permutation(subjects))
        chosen = []
        for subj in picked:
            cands = pick(np.flatnonzero(pool_subjects == subj))
            chosen.append(pool[cands[rng.integers(len(cands))]])
        chosen = np.array(chosen, dtype=np.int64)

    ref_subjects = [int(dataset.subject_ids[i]) for i in chosen]
    train_set = set(np.asarray(fold.train_indices).tolist())
    ok = all(int(i) in train_set for i in chosen)
    if fold.protocol == LOSO:
        ok = ok and not (set(ref_subjects) & fold.test_subjects)
    if monitor is not None:
        monitor.record(fold.fold_id, ref_subjects, ok)
    if not ok:
        raise LeakageError(
            f"fold {fold.fold_id}: reference subjects {ref_subjects} / trials {chosen.tolist()} "
            f"leave the training split (held-out subjects {sorted(fold.test_subjects)})"
        )
    return ReferenceSet([int(i) for i in chosen], ref_subjects, want_label)


def write_fold_manifest(path, folds, dataset) -> None:
    """CSV with one row per (fold, partition, trial)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold_id", "partition", "trial_index", "subject_id", "label"])
        for fold in folds:
            for part, idx in (("train", fold.train_indices), ("val", fold.val_indices), ("test", fold.test_indices)):
                for i in idx:
                    w.writerow([fold.fold_id, part, int(i), int(dataset.subject_ids[i]), int(dataset.labels[i])])
