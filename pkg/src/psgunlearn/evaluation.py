"""Forget/remain accuracy, membership inference and phase timing."""

from __future__ import annotations

import csv
import io
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn_core
from .errors import UndefinedMetricError

MIA_CLIP = 400.0
REPORT_FIELDS = ("f_acc", "r_acc", "fr_ratio", "mia_mean", "mia_std",
                 "t_inner_s", "t_outer_s", "t_total_s")


def accuracy(model: nn_core.Model, X, Y) -> float:
    """Fraction of rows whose argmax logit (lowest index on ties) hits the label."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise UndefinedMetricError("accuracy of an empty row set is undefined")
    return float(np.mean(nn_core.predict(model, X) == np.asarray(Y).argmax(axis=1)))


def clip_losses(losses) -> np.ndarray:
    return np.clip(np.asarray(losses, dtype=np.float64), -MIA_CLIP, MIA_CLIP)


def sample_losses(model, X, Y) -> np.ndarray:
    return nn_core.forward(model, np.asarray(X, dtype=np.float64), np.asarray(Y)).loss


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def fit_logistic(x, y, steps: int = 1000, lr: float = 0.1):
    """1-D logistic regression by full-batch gradient descent on standardized input."""
    mu, sd = x.mean(), x.std()
    sd = sd if sd > 0 else 1.0
    u = (x - mu) / sd
    w = b = 0.0
    for _ in range(steps):
        r = _sigmoid(w * u + b) - y
        w -= lr * float(np.mean(r * u))
        b -= lr * float(np.mean(r))
    return lambda xs: _sigmoid(w * (xs - mu) / sd + b) >= 0.5


@dataclass(frozen=True)
class MIAResult:
    mean: float
    std: float
    folds: int
    reduced_folds: bool = False
    fold_accuracies: tuple[float, ...] = ()


def mia_from_features(member, nonmember, folds: int = 5, seed: int = 0) -> MIAResult:
    """Stratified k-fold attack accuracy on scalar features (label 1 = member)."""
    member = clip_losses(member)
    nonmember = clip_losses(nonmember)
    if member.size == 0 or nonmember.size == 0:
        raise UndefinedMetricError("membership attack needs rows on both sides")
    rng = np.random.default_rng([seed, 0x31A])
    n = min(member.size, nonmember.size)
    # balance the pools so 0.5 means chance
    member = member[rng.permutation(member.size)[:n]]
    nonmember = nonmember[rng.permutation(nonmember.size)[:n]]
    reduced = folds > n
    folds = max(2, min(folds, n)) if n >= 2 else 1
    x = np.concatenate([member, nonmember])
    y = np.concatenate([np.ones(n), np.zeros(n)])
    fold_of = np.empty(2 * n, dtype=np.int64)
    for side in (np.arange(n), np.arange(n, 2 * n)):
        fold_of[rng.permutation(side)] = np.arange(n) % folds
    accs = []
    for f in range(folds):
        test = fold_of == f
        train = ~test if folds > 1 else test
        clf = fit_logistic(x[train], y[train])
        accs.append(float(np.mean(clf(x[test]) == y[test])))
    return MIAResult(float(np.mean(accs)), float(np.std(accs)), folds, reduced, tuple(accs))


def mia_attack(model, forget_X, forget_Y, heldout_X, heldout_Y, folds: int = 5,
               seed: int = 0) -> MIAResult:
    return mia_from_features(sample_losses(model, forget_X, forget_Y),
                             sample_losses(model, heldout_X, heldout_Y), folds, seed)


@dataclass
class PhaseTimer:
    """Monotonic wall-clock accumulator keyed by phase name."""
    seconds: dict = field(default_factory=dict)

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start

    def get(self, name: str) -> float:
        return self.seconds.get(name, 0.0)


@dataclass
class MetricsReport:
    f_acc: float
    r_acc: float
    fr_ratio: float | None
    mia_mean: float
    mia_std: float
    t_inner_s: float | None = None
    t_outer_s: float | None = None
    t_total_s: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, f_acc, r_acc, mia: MIAResult, timer: PhaseTimer | None = None, **extra):
        ratio = f_acc / r_acc if r_acc > 0 else None
        if ratio is None:
            extra["fr_ratio_undefined"] = True
        if mia.reduced_folds:
            extra["mia_folds_reduced_to"] = mia.folds
        report = cls(f_acc, r_acc, ratio, mia.mean, mia.std, extra=extra)
        if timer is not None:
            report.t_inner_s = timer.get("inner")
            report.t_outer_s = timer.get("outer")
            report.t_total_s = timer.get("total")
        return report

    def to_dict(self, *, timings: bool = True) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        if not timings:
            for k in ("t_inner_s", "t_outer_s", "t_total_s"):
                d[k] = None
        d.update(self.extra)
        return d

    def to_json(self, *, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings=timings), sort_keys=True)

    def csv_row(self) -> list:
        return ["" if getattr(self, k) is None else repr(getattr(self, k)) for k in REPORT_FIELDS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(REPORT_FIELDS)
        w.writerow(self.csv_row())
        return buf.getvalue()


def evaluate(model, dataset, partition, *, seed: int = 0, folds: int = 5,
             timer: PhaseTimer | None = None, **extra) -> MetricsReport:
    """Accuracy on the held-out forget/remain rows plus the membership attack."""
    fX, fY = dataset.rows(partition.forget_test)
    rX, rY = dataset.rows(partition.remain_test)
    f_acc = accuracy(model, fX, fY)
    r_acc = accuracy(model, rX, rY)
    mX, mY = dataset.rows(partition.forget)
    hX, hY = dataset.rows(partition.mia_heldout)
    mia = mia_attack(model, mX, mY, hX, hY, folds=folds, seed=seed)
    return MetricsReport.build(f_acc, r_acc, mia, timer, **extra)
