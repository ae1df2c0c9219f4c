"""Experiment steps shared by the command line and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import baselines, data, inner_loop, nn_core, outer_loop
from .config import RunConfig
from .errors import ConfigError, ParseError
from .evaluation import MetricsReport, PhaseTimer, accuracy, evaluate
from .training import fit


def build_dataset(cfg: RunConfig) -> data.LabeledDataset:
    v = cfg.values
    common = dict(test_fraction=v["data.test_fraction"], seed=v["seed"])
    try:
        if v["data.source"] == "blobs":
            return data.make_gaussian_blobs(v["data.n_classes"] or 3, v["data.n_per_class"],
                                            v["data.dim"], v["data.separation"], v["seed"],
                                            v["data.test_fraction"])
        if v["data.source"] == "csv":
            return data.load_csv(v["data.path"], header=v["data.header"],
                                 n_classes=v["data.n_classes"], pixel_scale=v["data.pixel_scale"],
                                 **common)
        return data.load_idx(v["data.path"], v["data.labels_path"],
                             n_classes=v["data.n_classes"], **common)
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset file not found: {exc.filename}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read dataset: {exc}") from exc


def train_base(cfg: RunConfig, dataset: data.LabeledDataset, history: list | None = None):
    """Fit the original model on every training row. Returns ``(model, epochs)``."""
    model = nn_core.init_model(cfg.widths(dataset.dim, dataset.n_classes), cfg.seed)
    X, Y = dataset.rows(dataset.train_rows)
    return fit(model, X, Y, cfg.train_config(), cfg.seed, history=history)


@dataclass
class UnlearnOutcome:
    model: nn_core.Model
    relabeled: inner_loop.RelabeledForgetSet
    partition: data.ForgetPartition
    report: MetricsReport
    original: MetricsReport
    timer: PhaseTimer
    history: list = field(default_factory=list)


def unlearn_run(cfg: RunConfig, model_w0: nn_core.Model, dataset: data.LabeledDataset, *,
                fraction: float | None = None, inner_overrides: dict | None = None,
                jobs: int = 1) -> UnlearnOutcome:
    """Select the forget set, search boundaries, fine-tune, evaluate."""
    partition = data.select_forget(dataset, cfg.forget_rule(fraction), cfg.seed)
    fX, fY = dataset.rows(partition.forget)
    rX, rY = dataset.rows(partition.remain)
    inner_cfg = cfg.inner_config(**(inner_overrides or {}))
    outer_cfg = cfg.outer_config()
    folds = cfg["eval.mia_folds"]
    original = evaluate(model_w0, dataset, partition, seed=cfg.seed, folds=folds)
    timer = PhaseTimer()
    history: list = []
    with timer.phase("total"):
        with timer.phase("inner"):
            relabeled = inner_loop.relabel_forget_set(model_w0, fX, fY, inner_cfg,
                                                      indices=partition.forget, jobs=jobs)
        with timer.phase("outer"):
            model = outer_loop.unlearn(model_w0, relabeled, rX, rY, outer_cfg, history=history)
    _, n_fallback = outer_loop.forget_targets(model_w0, relabeled, outer_cfg)
    report = evaluate(model, dataset, partition, seed=cfg.seed, folds=folds, timer=timer,
                      boundary_fraction_crossed=relabeled.fraction_crossed,
                      n_forget=int(partition.forget.size),
                      **({"soft_label_fallbacks": n_fallback} if outer_cfg.soft_labels else {}))
    return UnlearnOutcome(model, relabeled, partition, report, original, timer, history)


def baseline_run(cfg: RunConfig, model_w0: nn_core.Model, dataset: data.LabeledDataset,
                 bcfg: baselines.BaselineConfig, partition: data.ForgetPartition | None = None):
    """One comparison method; returns ``(model, report)``."""
    if partition is None:
        partition = data.select_forget(dataset, cfg.forget_rule(), cfg.seed)
    fX, fY = dataset.rows(partition.forget)
    rX, rY = dataset.rows(partition.remain)
    train_cfg = cfg.train_config() if cfg["baselines.retrain_protocol"] == "fit" else None
    timer = PhaseTimer()
    with timer.phase("total"):
        model = baselines.run_baseline(model_w0, (fX, fY, rX, rY), bcfg, train_cfg)
    # baselines have a single phase; report it as the outer time
    timer.seconds["outer"] = timer.get("total")
    report = evaluate(model, dataset, partition, seed=cfg.seed, folds=cfg["eval.mia_folds"],
                      timer=timer, epochs=bcfg.epochs)
    return model, report


def sweep_cells(cfg: RunConfig) -> list[dict]:
    if cfg["sweep.mode"] == "fraction":
        return [{"fraction": f} for f in cfg["sweep.fractions"]]
    return [{"gamma": g, "lam": lam} for g in cfg["sweep.gammas"] for lam in cfg["sweep.lams"]]


def run_cell(cfg: RunConfig, model_w0: nn_core.Model, dataset: data.LabeledDataset,
             cell: dict) -> dict:
    """One sweep cell as a flat row (timings included; callers decide what to keep)."""
    overrides = {k: cell[k] for k in ("gamma", "lam") if k in cell}
    out = unlearn_run(cfg, model_w0, dataset, fraction=cell.get("fraction"),
                      inner_overrides=overrides)
    row = dict(cell)
    row["orig_f_acc"] = out.original.f_acc
    row["orig_r_acc"] = out.original.r_acc
    row["orig_mia_mean"] = out.original.mia_mean
    row.update(out.report.to_dict())
    return row


def original_test_accuracy(model, dataset) -> float:
    X, Y = dataset.rows(dataset.test_rows)
    return accuracy(model, X, Y)

