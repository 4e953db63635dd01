"""Training loop, evaluation, ablation and sensitivity harnesses."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .errors import ConfigError, NumericalError
from .model import VARIANTS, GrnConfig, GrnModel, get_variant
from .protocol import LOSO, SD, LeakageMonitor, sample_references, split_loso, split_sd
from .signal import DEFAULT_BANDS, feature_matrix
from .synchrony import SynchronyCache, WelchConfig

log = logging.getLogger(__name__)

# values held fixed on the other axis of the sensitivity sweep
SWEEP_K_R = 3
SWEEP_M = 8


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 40
    patience: int = 10
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    variant: str = "full"
    val_frac: float = 0.125
    test_frac: float = 0.25
    # "label_matched": training references share the sample's class.
    # "uniform": training references ignore labels, as at test time.
    reference_policy: str = "label_matched"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"TrainConfig.batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"TrainConfig.max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.patience < self.max_epochs:
            raise ConfigError(
                f"TrainConfig.patience must satisfy 0 <= patience < max_epochs, got {self.patience}"
            )
        if self.lr <= 0:
            raise ConfigError(f"TrainConfig.lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"TrainConfig.weight_decay must be >= 0, got {self.weight_decay}")
        get_variant(self.variant)
        if self.reference_policy not in ("uniform", "label_matched"):
            raise ConfigError(f"TrainConfig.reference_policy must be uniform or label_matched, got {self.reference_policy!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class RunResult:
    fold_id: int
    test_subjects: list
    history: list
    test_accuracy: float
    confusion: np.ndarray
    best_epoch: int
    best_val_loss: float
    reference_checks: int = 0
    reference_violations: int = 0
    model: object = field(default=None, repr=False, compare=False)


class EarlyStopping:
    """Stop once validation loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.bad_epochs == 0


class PreparedData:
    """A dataset plus its DE features and a shared synchrony cache."""

    def __init__(self, dataset, bands=DEFAULT_BANDS, welch: WelchConfig = WelchConfig()):
        self.dataset = dataset
        self.bands = tuple(bands)
        self.welch = welch
        self.features = feature_matrix(dataset, self.bands)
        self.sync = SynchronyCache(dataset, self.bands, welch)

    @property
    def labels(self):
        return self.dataset.labels


def accuracy_from_confusion(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    return float(np.trace(cm)) / float(total) if total else 0.0


def confusion_matrix(y_true, y_pred, n_classes) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _eval_tensors(data, fold, indices, K_r, seed, monitor):
    out = []
    for i in indices:
        refs = sample_references(fold, data.dataset, int(i), K_r, training=False, seed=seed, monitor=monitor)
        out.append(data.sync.tensor(int(i), refs.indices))
    return np.stack(out) if out else None


def _predict(model, data, indices, tensors, variant, labels=None, batch=256):
    """Logits (and mean total loss if ``labels`` given) without building a graph."""
    logits, loss_sum = [], 0.0
    with ag.no_grad():
        for s in range(0, len(indices), batch):
            idx = indices[s : s + batch]
            t = tensors[s : s + batch] if tensors is not None else None
            trace = model.forward(data.features[idx], t, variant)
            logits.append(trace.logits.data)
            if labels is not None:
                total, _, _ = model.loss(trace, labels[s : s + batch], variant)
                loss_sum += total.item() * len(idx)
    logits = np.concatenate(logits)
    return logits, (loss_sum / len(indices) if labels is not None else None)


def _param_norms(model):
    return ", ".join(f"{n}={np.linalg.norm(t.data):.3g}" for n, t in model.params.items())


def train_fold(fold, data: PreparedData, grn_cfg: GrnConfig, train_cfg: TrainConfig, monitor=None, epoch_hook=None) -> RunResult:
    """Train one fold with early stopping, restore the best epoch and test.

    ``epoch_hook(epoch, record)`` may return a replacement validation loss;
    it exists so tests can drive the stopping rule.
    """
    train_cfg.validate()
    grn_cfg.validate()
    variant = get_variant(train_cfg.variant)
    own_monitor = LeakageMonitor()
    seed = train_cfg.seed
    model = GrnModel(grn_cfg, np.random.default_rng([seed, fold.fold_id, 0]))
    rng = np.random.default_rng([seed, fold.fold_id, 1])
    model.standardizer.fit(data.features[fold.train_indices])
    opt = ag.Adam(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    labels = data.labels
    K_r = grn_cfg.K_r
    match_label = train_cfg.reference_policy == "label_matched"

    val_idx = fold.val_indices
    val_tensors = _eval_tensors(data, fold, val_idx, K_r, seed, own_monitor) if variant.use_G else None

    stopper = EarlyStopping(train_cfg.patience)
    best_state = model.state_dict()
    history = []
    for epoch in range(train_cfg.max_epochs):
        order = rng.permutation(fold.train_indices)
        tensors = None
        if variant.use_G:
            tensors = np.stack(
                [
                    data.sync.tensor(
                        int(i),
                        sample_references(
                            fold, data.dataset, int(i), K_r, rng=rng, training=True, monitor=own_monitor,
                            match_label=match_label,
                        ).indices,
                    )
                    for i in order
                ]
            )
            if epoch == 0:
                model.tensor_norm.fit(tensors)
        loss_sum, correct = 0.0, 0
        for b, s in enumerate(range(0, len(order), train_cfg.batch_size)):
            idx = order[s : s + train_cfg.batch_size]
            y = labels[idx]
            trace = model.forward(data.features[idx], tensors[s : s + len(idx)] if tensors is not None else None, variant)
            total, _, _ = model.loss(trace, y, variant)
            if not np.isfinite(total.item()):
                raise NumericalError(
                    f"non-finite loss at fold {fold.fold_id}, epoch {epoch}, batch {b}; "
                    f"parameter norms: {_param_norms(model)}"
                )
            opt.zero_grad()
            try:
                ag.backward(total)
            except NumericalError as exc:
                raise NumericalError(
                    f"{exc} at fold {fold.fold_id}, epoch {epoch}, batch {b}; parameter norms: {_param_norms(model)}"
                ) from exc
            opt.step()
            loss_sum += total.item() * len(idx)
            correct += int(np.sum(np.argmax(trace.logits.data, axis=1) == y))
        if not all(np.isfinite(p.data).all() for p in model.parameters()):
            raise NumericalError(f"non-finite parameters after epoch {epoch} of fold {fold.fold_id}")

        if len(val_idx):
            val_logits, val_loss = _predict(model, data, val_idx, val_tensors, variant, labels[val_idx])
            val_acc = float(np.mean(np.argmax(val_logits, axis=1) == labels[val_idx]))
        else:
            val_loss, val_acc = loss_sum / len(order), float("nan")
        record = EpochRecord(epoch, loss_sum / len(order), val_loss, correct / len(order), val_acc)
        if epoch_hook is not None:
            override = epoch_hook(epoch, record)
            if override is not None:
                record.val_loss = float(override)
        history.append(record)
        stop = stopper.update(epoch, record.val_loss)
        if stopper.improved_last:
            best_state = model.state_dict()
        if stop:
            break

    model.load_state_dict(best_state)
    cm = evaluate(model, fold, data, grn_cfg, variant, seed=seed, monitor=own_monitor)
    if monitor is not None:
        monitor.merge(own_monitor)
    result = RunResult(
        fold.fold_id,
        sorted(fold.test_subjects),
        history,
        accuracy_from_confusion(cm),
        cm,
        stopper.best_epoch,
        stopper.best,
        own_monitor.checks,
        own_monitor.violations,
        model,
    )
    return result


def evaluate(model, fold, data: PreparedData, grn_cfg: GrnConfig, variant="full", seed=0, monitor=None) -> np.ndarray:
    """Confusion matrix over the fold's test trials (rows: true, columns: predicted)."""
    variant = get_variant(variant)
    idx = fold.test_indices
    tensors = _eval_tensors(data, fold, idx, grn_cfg.K_r, seed, monitor) if variant.use_G else None
    logits, _ = _predict(model, data, idx, tensors, variant)
    return confusion_matrix(data.labels[idx], np.argmax(logits, axis=1), data.dataset.n_classes)


def make_folds(dataset, protocol, train_cfg: TrainConfig):
    if protocol == LOSO:
        return split_loso(dataset, train_cfg.val_frac, train_cfg.seed)
    if protocol == SD:
        return split_sd(dataset, train_cfg.val_frac, train_cfg.test_frac, train_cfg.seed)
    raise ConfigError(f"unknown protocol {protocol!r}; choose sd or loso")


def _worker(args):
    dataset, bands, welch, fold, grn_cfg, train_cfg = args
    res = train_fold(fold, PreparedData(dataset, bands, welch), grn_cfg, train_cfg)
    res.model = None
    return res


def run_protocol(data: PreparedData, protocol, grn_cfg: GrnConfig, train_cfg: TrainConfig, monitor=None, jobs=1):
    """Train and test every fold of ``protocol``; results in fold order."""
    folds = make_folds(data.dataset, protocol, train_cfg)
    if protocol == LOSO and grn_cfg.K_r > len(data.dataset.subjects) - 1:
        raise ConfigError(
            f"K_r={grn_cfg.K_r} exceeds the {len(data.dataset.subjects) - 1} training subjects per LOSO fold"
        )
    if jobs > 1:
        tasks = [(data.dataset, data.bands, data.welch, f, grn_cfg, train_cfg) for f in folds]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_worker, tasks))
    else:
        results = []
        for f in folds:
            res = train_fold(f, data, grn_cfg, train_cfg)
            res.model = None
            results.append(res)
    if monitor is not None:
        for r in results:
            monitor.checks += r.reference_checks
            monitor.violations += r.reference_violations
    return results


@dataclass
class SweepRow:
    key: str
    label: str
    accuracies: list = field(default_factory=list)
    runs: list = field(default_factory=list, repr=False, compare=False)  # RunResult per fold and seed

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def run_ablation(data: PreparedData, grn_cfg: GrnConfig, train_cfg: TrainConfig, seeds, monitor=None, jobs=1, variants=None):
    """LOSO accuracy for every ablation variant; mean/std over folds x seeds."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ConfigError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    rows = []
    for name in variants or VARIANTS:
        row = SweepRow(name, VARIANTS[name].label)
        for seed in seeds:
            cfg = replace(train_cfg, seed=seed, variant=name)
            results = run_protocol(data, LOSO, grn_cfg, cfg, monitor=monitor, jobs=jobs)
            row.accuracies.extend(r.test_accuracy for r in results)
            row.runs.extend(results)
            log.info("ablation %s seed %d: %s", name, seed, [round(r.test_accuracy, 3) for r in results])
        rows.append(row)
    return rows


LAMBDA_GRID = (0.0, 0.01, 0.1, 1.0)


def select_lambda(data: PreparedData, grn_cfg: GrnConfig, train_cfg: TrainConfig, grid=LAMBDA_GRID, jobs=1):
    """Pick lambda_proto by mean best-epoch validation accuracy over LOSO folds.

    Validation loss is not comparable across lambda values (it contains the
    lambda-weighted term), so accuracy is the criterion; ties go to the
    earlier grid entry. Returns ``(best, {lambda: score})``.
    """
    scores = {}
    for lam in grid:
        results = run_protocol(data, LOSO, replace(grn_cfg, lambda_proto=lam), train_cfg, jobs=jobs)
        scores[lam] = float(np.mean([r.history[r.best_epoch].val_acc for r in results]))
        log.info("lambda %g: mean val acc %.4f", lam, scores[lam])
    best = max(grid, key=lambda lam: (scores[lam], -grid.index(lam)))
    return best, scores


def run_sensitivity(data: PreparedData, grn_cfg: GrnConfig, train_cfg: TrainConfig, seeds, K_r_values=(1, 3, 5), M_values=(4, 8, 12), monitor=None, jobs=1):
    """Sweep K_r (M fixed at 8) and M (K_r fixed at 3) under LOSO.

    Returns ``(kr_rows, m_rows)``.
    """
    n_train_subjects = len(data.dataset.subjects) - 1
    bad = [k for k in K_r_values if k > n_train_subjects]
    if bad:
        raise ConfigError(f"K_r values {bad} exceed the {n_train_subjects} training subjects per LOSO fold")
    seeds = list(seeds)

    def sweep(axis, values):
        rows = []
        for value in values:
            if axis == "K_r":
                cfg = replace(grn_cfg, K_r=value, M=SWEEP_M)
            else:
                cfg = replace(grn_cfg, M=value, K_r=SWEEP_K_R)
            row = SweepRow(str(value), f"{axis}={value}")
            for seed in seeds:
                results = run_protocol(data, LOSO, cfg, replace(train_cfg, seed=seed), monitor=monitor, jobs=jobs)
                row.accuracies.extend(r.test_accuracy for r in results)
                row.runs.extend(results)
            rows.append(row)
        return rows

    return sweep("K_r", K_r_values), sweep("M", M_values)


# -- CSV output -----------------------------------------------------------------

def _f(x) -> str:
    return repr(float(x))


def write_curves_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        for r in history:
            w.writerow([r.epoch, _f(r.train_loss), _f(r.val_loss), _f(r.train_acc), _f(r.val_acc)])


def write_confusion_csv(path, cm) -> None:
    cm = np.asarray(cm)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [str(j) for j in range(cm.shape[1])])
        for i, row in enumerate(cm):
            w.writerow([str(i)] + [str(int(v)) for v in row])


def write_sweep_csv(path, rows, key_name) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key_name, "label", "mean_acc", "std_acc", "n_runs", "std_over"])
        for r in rows:
            w.writerow([r.key, r.label, _f(r.mean), _f(r.std), len(r.accuracies), "folds x seeds"])
