"""Command line: ``psgunlearn {train,unlearn,baselines,sweep,verify}``.

Exit codes: 0 success, 1 a verification check failed, 2 configuration or
input error, 3 numeric failure, 4 empty selection.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import nn_core, pipeline, theory
from .config import RunConfig, load_config
from .errors import (ConfigError, InvalidInputError, NumericError, ParseError, SelectionError,
                     UndefinedMetricError)
from .evaluation import REPORT_FIELDS

log = logging.getLogger("psgunlearn")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SELECTION = 0, 1, 2, 3, 4


class RecordConflict(Exception):
    """An existing output was produced by a different configuration."""


# -- record plumbing ------------------------------------------------------------

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_hash(cfg: RunConfig, command: str, checkpoint_digest: str | None) -> str:
    blob = json.dumps({"command": command, "config": cfg.snapshot(),
                       "checkpoint": checkpoint_digest}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _existing_hash(path: Path) -> str | None:
    try:
        text = path.read_text()
    except OSError:
        return None
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            return "<unreadable>"
        return data.get("config_hash", data.get("meta", {}).get("config_hash", "<missing>"))
    rows = list(csv.DictReader(io.StringIO(text)))
    return rows[0].get("config_hash", "<missing>") if rows else "<missing>"


class Outputs:
    """Collects files in memory and writes them only once the run succeeded."""

    def __init__(self, out_dir, config_hash: str, force: bool):
        self.dir = Path(out_dir)
        self.hash = config_hash
        self.force = force
        self.files: dict[str, str] = {}

    def check(self, names) -> None:
        if self.force:
            return
        for name in names:
            old = _existing_hash(self.dir / name)
            if old is not None and old != self.hash:
                raise RecordConflict(
                    f"{self.dir / name} was written by config hash {old}, this run is "
                    f"{self.hash}; use --force or a different --out")

    def add_json(self, name: str, obj) -> None:
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def add_csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.files[name] = buf.getvalue()

    def add_text(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> None:
        self.check(self.files)
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            tmp = self.dir / (name + ".tmp")
            tmp.write_text(text)
            tmp.replace(self.dir / name)


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _record(command, cfg, config_hash, reports, **extra) -> dict:
    rec = {"schema_version": SCHEMA_VERSION, "command": command, "config_hash": config_hash,
           "seed": cfg.seed, "config": cfg.snapshot(), "reports": reports}
    rec.update(extra)
    return rec


def _report_row(method, report, config_hash, seed, timings=False) -> dict:
    row = {"method": method, "config_hash": config_hash, "seed": seed}
    row.update(report.to_dict(timings=timings))
    return row


def _metrics_csv(out: Outputs, rows: list[dict], seed: int) -> None:
    header = ["method", *REPORT_FIELDS, "config_hash", "seed"]
    out.add_csv("metrics.csv", header, [[_cell(r.get(k)) for k in header] for r in rows])


def _timings(rows: list[dict]) -> dict:
    return {r["method"]: {k: r[k] for k in ("t_inner_s", "t_outer_s", "t_total_s")} for r in rows}


# -- commands ---------------------------------------------------------------------

def _load_base(cfg, args, dataset):
    if args.checkpoint:
        try:
            model = nn_core.load_model(args.checkpoint)
        except FileNotFoundError as exc:
            raise ConfigError(f"checkpoint not found: {args.checkpoint}") from exc
        if model.input_dim != dataset.dim or model.n_classes != dataset.n_classes:
            raise ConfigError(f"checkpoint shape {model.widths} does not fit data "
                              f"(d={dataset.dim}, K={dataset.n_classes})")
        return model, file_digest(args.checkpoint)
    log.info("no --checkpoint given; training the base model inline")
    return pipeline.train_base(cfg, dataset)[0], None


def cmd_train(cfg: RunConfig, args) -> int:
    dataset = pipeline.build_dataset(cfg)
    h = run_hash(cfg, "train", None)
    out = Outputs(args.out, h, args.force)
    out.check(["metrics.json", "model.json", "training_log.csv"])
    history: list = []
    model, epochs = pipeline.train_base(cfg, dataset, history=history)
    X, Y = dataset.rows(dataset.train_rows)
    train_acc = pipeline.accuracy(model, X, Y)
    test_acc = pipeline.original_test_accuracy(model, dataset)
    out.add_json("metrics.json", _record("train", cfg, h, [
        {"method": "train", "config_hash": h, "seed": cfg.seed, "epochs": epochs,
         "train_acc": train_acc, "test_acc": test_acc}]))
    out.add_csv("training_log.csv", ["epoch", "loss", "train_acc", "config_hash", "seed"],
                [[e, repr(loss), repr(acc), h, cfg.seed] for e, loss, acc in history])
    buf = io.StringIO()
    ckpt = nn_core.model_to_dict(model)
    ckpt["meta"] = {"config_hash": h, "seed": cfg.seed, "schema_version": SCHEMA_VERSION}
    json.dump(ckpt, buf, sort_keys=True)
    out.add_text("model.json", buf.getvalue())
    out.commit()
    print(f"trained {epochs} epochs: train acc {train_acc:.4f}, test acc {test_acc:.4f}; "
          f"checkpoint {out.dir / 'model.json'}")
    return EXIT_OK


def cmd_unlearn(cfg: RunConfig, args) -> int:
    dataset = pipeline.build_dataset(cfg)
    model_w0, digest = _load_base(cfg, args, dataset)
    h = run_hash(cfg, "unlearn", digest)
    out = Outputs(args.out, h, args.force)
    names = ["metrics.json", "metrics.csv", "boundary_audit.json", "training_log.csv",
             "model.json", "timings.json"]
    out.check(names)
    res = pipeline.unlearn_run(cfg, model_w0, dataset, jobs=args.jobs)
    rows = [_report_row("original", res.original, h, cfg.seed, True),
            _report_row("unlearn", res.report, h, cfg.seed, True)]
    out.add_json("metrics.json", _record(
        "unlearn", cfg, h, [_report_row(r["method"], rep, h, cfg.seed)
                            for r, rep in zip(rows, (res.original, res.report))],
        checkpoint_sha256=digest, forget_rule=res.partition.rule))
    _metrics_csv(out, rows, cfg.seed)
    audit = res.relabeled.audit()
    audit.update(config_hash=h, seed=cfg.seed, schema_version=SCHEMA_VERSION)
    out.add_json("boundary_audit.json", audit)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "forget_loss", "remain_loss", "config_hash", "seed"])
    for e in res.history:
        w.writerow([e.epoch, repr(e.forget_loss), _cell(e.remain_loss), h, cfg.seed])
    out.add_text("training_log.csv", buf.getvalue())
    ckpt = nn_core.model_to_dict(res.model)
    ckpt["meta"] = {"config_hash": h, "seed": cfg.seed, "schema_version": SCHEMA_VERSION}
    out.add_text("model.json", json.dumps(ckpt, sort_keys=True))
    out.add_json("timings.json", {"config_hash": h, "seed": cfg.seed, "timings": _timings(rows)})
    out.commit()
    r = res.report
    print(f"unlearned {len(res.relabeled)} rows ({res.relabeled.fraction_crossed:.0%} crossed): "
          f"F-Acc {res.original.f_acc:.4f} -> {r.f_acc:.4f}, R-Acc {res.original.r_acc:.4f} -> "
          f"{r.r_acc:.4f}, MIA {r.mia_mean:.4f}, {r.t_total_s:.3f}s")
    return EXIT_OK


def cmd_baselines(cfg: RunConfig, args) -> int:
    dataset = pipeline.build_dataset(cfg)
    bcfgs = cfg.baseline_configs()
    model_w0, digest = _load_base(cfg, args, dataset)
    h = run_hash(cfg, "baselines", digest)
    out = Outputs(args.out, h, args.force)
    out.check(["metrics.json", "metrics.csv", "timings.json"])
    partition = pipeline.data.select_forget(dataset, cfg.forget_rule(), cfg.seed)
    rows = []
    for bcfg in bcfgs:
        _, report = pipeline.baseline_run(cfg, model_w0, dataset, bcfg, partition)
        rows.append((bcfg.method, report))
        log.info("%s: F-Acc %.4f R-Acc %.4f", bcfg.method, report.f_acc, report.r_acc)
    out.add_json("metrics.json", _record(
        "baselines", cfg, h, [_report_row(m, rep, h, cfg.seed) for m, rep in rows],
        checkpoint_sha256=digest, forget_rule=partition.rule))
    timed = [_report_row(m, rep, h, cfg.seed, True) for m, rep in rows]
    _metrics_csv(out, timed, cfg.seed)
    out.add_json("timings.json", {"config_hash": h, "seed": cfg.seed, "timings": _timings(timed)})
    out.commit()
    for m, rep in rows:
        print(f"{m:9s} F-Acc {rep.f_acc:.4f}  R-Acc {rep.r_acc:.4f}  MIA {rep.mia_mean:.4f}")
    return EXIT_OK


def _sweep_worker(payload):
    values, model_dict, dataset, cell = payload
    cfg = RunConfig(values)
    return pipeline.run_cell(cfg, nn_core.model_from_dict(model_dict), dataset, cell)


def cmd_sweep(cfg: RunConfig, args) -> int:
    dataset = pipeline.build_dataset(cfg)
    model_w0, digest = _load_base(cfg, args, dataset)
    h = run_hash(cfg, "sweep", digest)
    out = Outputs(args.out, h, args.force)
    out.check(["metrics.json", "sweep.csv"])
    cells = pipeline.sweep_cells(cfg)
    payloads = [(cfg.values, nn_core.model_to_dict(model_w0), dataset, c) for c in cells]
    if args.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_worker, payloads))  # map keeps cell order
    else:
        rows = [_sweep_worker(p) for p in payloads]
    keys = list(cells[0])
    header = [*keys, "orig_f_acc", "orig_r_acc", "orig_mia_mean", *REPORT_FIELDS,
              "config_hash", "seed"]
    for r in rows:
        r.update(config_hash=h, seed=cfg.seed)
    out.add_csv("sweep.csv", header, [[_cell(r.get(k)) for k in header] for r in rows])
    stable = [{k: (None if k in ("t_inner_s", "t_outer_s", "t_total_s") else v)
               for k, v in r.items()} for r in rows]
    out.add_json("metrics.json", _record("sweep", cfg, h, stable, checkpoint_sha256=digest,
                                         sweep_mode=cfg["sweep.mode"]))
    out.commit()
    print(f"{len(rows)} sweep cells written to {out.dir / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    h = run_hash(cfg, "verify", None)
    out = Outputs(args.out, h, args.force)
    out.check(["verify.json"])
    reports = theory.run_suite(
        cfg.seed, erf_draws=cfg["verify.erf_draws"], ascent_draws=cfg["verify.ascent_draws"],
        ascent_trials=cfg["verify.ascent_trials"], ascent_dim=cfg["verify.ascent_dim"],
        other_kinds_trials=cfg["verify.other_kinds_trials"])
    passed = all(r.passed for r in reports)
    out.add_json("verify.json", {"schema_version": SCHEMA_VERSION, "config_hash": h,
                                 "seed": cfg.seed, "passed": passed,
                                 "checks": [r.to_dict() for r in reports]})
    out.commit()
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check} ({len(r.rows)} rows)")
    return EXIT_OK if passed else EXIT_VERIFY


COMMANDS = {"train": cmd_train, "unlearn": cmd_unlearn, "baselines": cmd_baselines,
            "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psgunlearn",
                                     description="Boundary-search unlearning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file (defaults apply if omitted)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker count")
        p.add_argument("--force", action="store_true",
                       help="overwrite outputs written by a different config")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("unlearn", "baselines", "sweep"):
            p.add_argument("--checkpoint", help="base model; trained inline when omitted")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RecordConflict as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SelectionError, UndefinedMetricError) as exc:
        print(f"empty selection: {exc}", file=sys.stderr)
        return EXIT_SELECTION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, InvalidInputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
