"""Fine-tuning on the relabeled forget set, with optional remain loss and soft labels."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import nn_core
from .data import one_hot
from .errors import InvalidInputError, NumericError
from .inner_loop import RelabeledForgetSet


@dataclass(frozen=True)
class OuterConfig:
    lr: float = 0.05
    epochs: int = 5
    batch_size: int = 32
    phi: float = 1e-2
    remain_loss: bool = False
    remain_onset: int = 1
    soft_labels: bool = False
    k: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError("outer.lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("outer.epochs must be >= 0 and outer.batch_size >= 1")
        if self.phi < 0:
            raise InvalidInputError("outer.phi must be >= 0")
        if self.remain_onset < 1:
            raise InvalidInputError("outer.remain_onset must be >= 1")
        if self.remain_loss and self.epochs and self.remain_onset > self.epochs:
            raise InvalidInputError("outer.remain_onset exceeds outer.epochs")
        if self.k < 1:
            raise InvalidInputError("outer.k must be >= 1")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    forget_loss: float
    remain_loss: float | None
    wall_seconds: float


def topk_soft_target(logits, k: int) -> tuple[np.ndarray, bool]:
    """Keep the ``k`` largest logits, zero the rest, normalize the kept ones.

    Returns ``(target, used_fallback)``. Normalizing raw logits only yields a
    distribution when every kept logit is non-negative with a positive sum;
    otherwise the kept entries are passed through a softmax instead.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not 1 <= k <= z.size:
        raise InvalidInputError(f"k={k} outside [1, {z.size}]")
    keep = np.argsort(-z, kind="stable")[:k]
    out = np.zeros_like(z)
    kept = z[keep]
    total = kept.sum()
    if total > 0 and np.all(kept >= 0):
        out[keep] = kept / total
        return out, False
    e = np.exp(kept - kept.max())
    out[keep] = e / e.sum()
    return out, True


def forget_targets(model_w0: nn_core.Model, relabeled: RelabeledForgetSet,
                   cfg: OuterConfig) -> tuple[np.ndarray, int]:
    """Training targets for the forget rows and the number of fallback uses."""
    K = model_w0.n_classes
    if not cfg.soft_labels:
        return one_hot(relabeled.y_boundary, K), 0
    if cfg.k > K:
        raise InvalidInputError(f"outer.k={cfg.k} exceeds K={K}")
    # soft labels always come from the original model at the boundary point
    Z = nn_core.logits(model_w0, relabeled.x_boundary)
    rows = [topk_soft_target(z, cfg.k) for z in Z]
    return np.stack([r[0] for r in rows]), sum(r[1] for r in rows)


def unlearn(model_w0: nn_core.Model, relabeled: RelabeledForgetSet,
            remain_X, remain_Y, cfg: OuterConfig, *, history: list | None = None) -> nn_core.Model:
    """Minibatch SGD on the relabeled forget rows.

    An epoch is one shuffled pass over the forget rows. With the remain loss
    enabled, from epoch ``remain_onset`` on every forget batch is paired with
    an independently drawn remain batch whose loss is weighted by ``phi``.
    """
    if len(relabeled) == 0:
        raise InvalidInputError("relabeled forget set is empty")
    targets, _ = forget_targets(model_w0, relabeled, cfg)
    X_f = relabeled.x
    remain_X = np.asarray(remain_X, dtype=np.float64)
    remain_Y = np.asarray(remain_Y, dtype=np.float64)
    use_remain = cfg.remain_loss and len(remain_X) > 0
    # separate streams: remain draws never perturb the forget shuffle
    rng_f = np.random.default_rng([cfg.seed, 0x0F])
    rng_r = np.random.default_rng([cfg.seed, 0x0E])
    model = model_w0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng_f.permutation(len(X_f))
        f_losses, r_losses = [], []
        with_remain = use_remain and epoch >= cfg.remain_onset
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss_f, grads = nn_core.loss_grad_params(model, X_f[idx], targets[idx])
                if with_remain:
                    ridx = rng_r.choice(len(remain_X), size=min(cfg.batch_size, len(remain_X)),
                                        replace=False)
                    loss_r, grads_r = nn_core.loss_grad_params(model, remain_X[ridx], remain_Y[ridx])
                    grads = nn_core.add_grads(grads, nn_core.scale_grads(grads_r, cfg.phi))
                    r_losses.append(loss_r)
                model = nn_core.sgd_step(model, grads, cfg.lr)
            except NumericError as exc:
                raise NumericError(f"outer loop diverged at epoch {epoch}, batch {b}: {exc}",
                                   epoch=epoch, batch=b, layer=exc.layer) from exc
            f_losses.append(loss_f)
        if history is not None:
            history.append(EpochLog(epoch, float(np.mean(f_losses)),
                                    float(np.mean(r_losses)) if r_losses else None,
                                    time.perf_counter() - t0))
    return model


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "forget_loss", "remain_loss", "wall_seconds"])
        for row in history:
            w.writerow([row.epoch, repr(row.forget_loss),
                        "" if row.remain_loss is None else repr(row.remain_loss),
                        f"{row.wall_seconds:.6f}"])
