"""Plain minibatch SGD used for base models and the comparison methods."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn_core
from .errors import InvalidInputError, NumericError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    batch_size: int = 32
    max_epochs: int = 100
    min_epochs: int = 10
    tol: float = 0.01  # stop once epoch-over-epoch train accuracy moves less than this

    def __post_init__(self):
        if not self.lr > 0 or self.batch_size < 1 or self.max_epochs < 0 or self.min_epochs < 0:
            raise InvalidInputError("invalid training configuration")


def run_epoch(model, X, Y, lr, batch_size, rng, *, ascent=False, loss_cap=None, epoch=0):
    """One shuffled pass; returns the updated model and its mean batch loss."""
    order = rng.permutation(len(X))
    losses = []
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        try:
            loss, grads = nn_core.loss_grad_params(model, X[idx], Y[idx])
            if loss_cap is not None and loss > loss_cap:
                raise NumericError(f"loss {loss:.1f} exceeded cap {loss_cap}")
            if ascent:
                grads = nn_core.scale_grads(grads, -1.0)
            model = nn_core.sgd_step(model, grads, lr)
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}, batch {b}: {exc}",
                               epoch=epoch, batch=b, layer=exc.layer) from exc
        losses.append(loss)
    return model, float(np.mean(losses)) if losses else float("nan")


def train_epochs(model, X, Y, epochs: int, lr: float, batch_size: int, seed: int, *,
                 ascent: bool = False, loss_cap: float | None = None):
    rng = np.random.default_rng([seed, 0x7A1])
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if epochs > 0 and len(X) == 0:
        raise InvalidInputError("no rows to train on")
    for epoch in range(1, epochs + 1):
        model, _ = run_epoch(model, X, Y, lr, batch_size, rng, ascent=ascent,
                             loss_cap=loss_cap, epoch=epoch)
    return model


def accuracy_on(model, X, Y) -> float:
    return float(np.mean(nn_core.predict(model, X) == np.asarray(Y).argmax(axis=1)))


def fit(model, X, Y, cfg: TrainConfig, seed: int, history: list | None = None):
    """Train until train accuracy stabilizes or the epoch cap is hit.

    Returns ``(model, epochs_run)``. ``history`` collects
    ``(epoch, mean_loss, train_accuracy)`` tuples.
    """
    rng = np.random.default_rng([seed, 0x7A1])
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if cfg.max_epochs == 0:
        log.warning("epoch cap is 0; returning the initial weights")
        return model, 0
    prev = accuracy_on(model, X, Y)
    for epoch in range(1, cfg.max_epochs + 1):
        model, loss = run_epoch(model, X, Y, cfg.lr, cfg.batch_size, rng, epoch=epoch)
        acc = accuracy_on(model, X, Y)
        if history is not None:
            history.append((epoch, loss, acc))
        if epoch >= cfg.min_epochs and abs(acc - prev) < cfg.tol:
            return model, epoch
        prev = acc
    return model, cfg.max_epochs
