"""Comparison unlearning methods: Retrain, Finetune, NegGrad, CFK and EUK.

Every method works on copies; the original model is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import nn_core
from .errors import InvalidInputError
from .training import TrainConfig, fit, train_epochs

METHODS = ("retrain", "finetune", "neggrad", "cfk", "euk")
# ten times the membership-attack clip bound
NEGGRAD_LOSS_CAP = 4000.0
DEFAULT_EPOCHS = {"retrain": 20, "finetune": 5, "neggrad": 4, "cfk": 5, "euk": 20}


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "retrain"
    epochs: int | None = None  # None -> DEFAULT_EPOCHS[method]
    lr: float = 0.05
    batch_size: int = 32
    k_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[self.method])
        if self.epochs < 0 or not self.lr > 0 or self.batch_size < 1 or self.k_layers < 0:
            raise InvalidInputError("invalid baseline configuration")


def _check_k(model: nn_core.Model, k: int) -> None:
    if not 0 <= k < len(model.layers):
        raise InvalidInputError(f"k_layers={k} must be below the layer count {len(model.layers)}")


def _train(model, X, Y, cfg: BaselineConfig, **kw):
    return train_epochs(model, X, Y, cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed, **kw)


def retrain(remain_X, remain_Y, widths, cfg: BaselineConfig,
            train_cfg: TrainConfig | None = None) -> nn_core.Model:
    """Fresh initialization trained on the remain rows only.

    With ``train_cfg`` the run follows the base-model protocol (train until
    accuracy stabilizes); otherwise it uses the fixed ``cfg.epochs`` budget.
    """
    if len(remain_X) == 0:
        raise InvalidInputError("remain set is empty")
    model = nn_core.init_model(widths, cfg.seed)
    if train_cfg is not None:
        return fit(model, remain_X, remain_Y, train_cfg, cfg.seed)[0]
    return _train(model, remain_X, remain_Y, cfg)


def finetune(model_w0, remain_X, remain_Y, cfg: BaselineConfig) -> nn_core.Model:
    return _train(model_w0, remain_X, remain_Y, cfg)


def neg_grad(model_w0, forget_X, forget_Y, cfg: BaselineConfig) -> nn_core.Model:
    """Gradient ascent on the forget loss, aborting once it passes the cap."""
    return _train(model_w0, forget_X, forget_Y, cfg, ascent=True, loss_cap=NEGGRAD_LOSS_CAP)


def cfk(model_w0, remain_X, remain_Y, cfg: BaselineConfig) -> nn_core.Model:
    _check_k(model_w0, cfg.k_layers)
    tuned = _train(model_w0.freeze_first(cfg.k_layers), remain_X, remain_Y, cfg)
    return tuned.with_frozen(model_w0.frozen)


def euk(model_w0, remain_X, remain_Y, cfg: BaselineConfig) -> nn_core.Model:
    """Keep the first ``k`` layers of ``w0``; reinitialize and train the rest.

    Reinitialized layers are taken from the same seeded full initialization
    that :func:`retrain` uses, so ``k = 0`` reproduces it exactly.
    """
    _check_k(model_w0, cfg.k_layers)
    fresh = nn_core.init_model(model_w0.widths, cfg.seed)
    k = cfg.k_layers
    layers = model_w0.layers[:k] + fresh.layers[k:]
    start = nn_core.Model(layers, tuple(i < k for i in range(len(layers))))
    tuned = _train(start, remain_X, remain_Y, cfg)
    return tuned.with_frozen(model_w0.frozen)


def run_baseline(model_w0, partition_rows, cfg: BaselineConfig,
                 train_cfg: TrainConfig | None = None) -> nn_core.Model:
    """Dispatch by name. ``partition_rows`` holds forget/remain arrays."""
    fX, fY, rX, rY = partition_rows
    if cfg.method == "retrain":
        return retrain(rX, rY, model_w0.widths, cfg, train_cfg)
    if cfg.method == "finetune":
        return finetune(model_w0, rX, rY, cfg)
    if cfg.method == "neggrad":
        return neg_grad(model_w0, fX, fY, cfg)
    if cfg.method == "cfk":
        return cfk(model_w0, rX, rY, cfg)
    return euk(model_w0, rX, rY, cfg)
