"""Command-line interface: synth, fit, train, eval, sweep.

Settings come from built-in defaults, then an optional JSON run config
(``--config``), then command-line flags; later sources win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .cca import CcaModel
from .dataset import SynthSpec, kfold_split, load_dataset, save_dataset, synth_clustered
from .errors import DataError, NumericalError
from .evaluation import write_report
from .mining import STRATEGIES
from .pipeline import PipelineConfig, crossval_evaluate, evaluate_stage, fit_stage, train_stage
from .tnn import DIRECTIONS, DISTANCES, TnnModel, TrainConfig

log = logging.getLogger("tnncca")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3
SHORT_DIRECTIONS = {"audio2visual": "a2v", "visual2audio": "v2a"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    data: str | None = None
    synth: dict | None = None
    k: int = 10
    reg: float | None = None
    method: str = "tnn-c-cca"
    train: dict = field(default_factory=dict)
    folds: int = 5
    directions: list = field(default_factory=lambda: list(DIRECTIONS))
    out: str | None = None
    seed: int | None = None

    def train_config(self):
        return TrainConfig(**{**self.train, "seed": self.seed})

    def pipeline_config(self):
        return PipelineConfig(self.method, self.k, self.reg, self.train_config(), tuple(self.directions))


# flag name -> (RunConfig field or "train.<field>")
_FLAG_TARGETS = {
    "data": "data",
    "k": "k",
    "reg": "reg",
    "folds": "folds",
    "out": "out",
    "seed": "seed",
    "margin": "train.margin",
    "lr": "train.learning_rate",
    "epochs": "train.epochs",
    "batches": "train.batch_count",
    "strategy": "train.mining_strategy",
    "distance": "train.distance",
    "dropout": "train.dropout_rate",
    "per_anchor": "train.random_per_anchor",
}


def build_config(args):
    cfg = RunConfig()
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown run-config keys: {sorted(unknown)}")
        cfg = replace(cfg, **raw)
    cfg.train = dict(cfg.train)
    for flag, target in _FLAG_TARGETS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if target.startswith("train."):
            cfg.train[target[6:]] = value
        else:
            setattr(cfg, target, value)
    if getattr(args, "direction", None):
        cfg.directions = list(DIRECTIONS) if args.direction == "both" else [args.direction]
    if cfg.seed is None:
        raise UsageError("a seed is required (--seed or 'seed' in the run config)")
    if cfg.k < 1:
        raise UsageError("--k must be >= 1")
    try:
        cfg.train_config()
    except TypeError as exc:
        raise UsageError(f"bad train settings: {exc}") from exc
    return cfg


def _out_dir(cfg):
    if not cfg.out:
        raise UsageError("an output directory is required (--out or 'out' in the run config)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg):
    if cfg.data:
        return load_dataset(cfg.data)
    if cfg.synth is not None:
        spec = {"seed": cfg.seed, **cfg.synth}
        return synth_clustered(SynthSpec(**spec))
    raise UsageError("no dataset: pass --data <manifest> or put 'data'/'synth' in the run config")


def _fold_subsets(ds, cfg, args):
    """(training data, held-out data or None) according to --fold."""
    if args.fold is None:
        return ds, None
    if not 0 <= args.fold < cfg.folds:
        raise UsageError(f"--fold must be in [0, {cfg.folds})")
    train_idx, test_idx = kfold_split(ds, cfg.folds, cfg.seed).train_test(args.fold)
    return ds.subset(train_idx), ds.subset(test_idx)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = build_config(args)
    base = dict(cfg.synth or {})
    for flag, name in (
        ("classes", "class_count"),
        ("per_class", "samples_per_class"),
        ("latent_dim", "latent_dim"),
        ("dim_x", "dim_x"),
        ("dim_y", "dim_y"),
        ("noise", "noise_sigma"),
        ("separation", "class_separation"),
    ):
        if getattr(args, flag) is not None:
            base[name] = getattr(args, flag)
    base["seed"] = cfg.seed
    out = _out_dir(cfg)
    manifest = save_dataset(synth_clustered(SynthSpec(**base)), out)
    print(manifest)
    return 0


def cmd_fit(args):
    cfg = build_config(args)
    if args.mode:
        cfg.method = "cca-only" if args.mode == "cca" else "tnn-c-cca"
    out = _out_dir(cfg)
    ds, _ = _fold_subsets(_dataset(cfg), cfg, args)
    model = fit_stage(ds, cfg.pipeline_config())
    model.save(out / "cca_model.json")
    print("correlations: " + " ".join(f"{c:.6f}" for c in model.correlations))
    return 0


def _write_trace(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "active_triplets", "total_triplets", "skipped_batches"])
        for r in history:
            w.writerow([r.epoch, repr(r.mean_loss), r.active_triplets, r.total_triplets, r.skipped_batches])


def cmd_train(args):
    cfg = build_config(args)
    out = _out_dir(cfg)
    cca_path = Path(args.cca_model) if args.cca_model else out / "cca_model.json"
    if not cca_path.exists():
        raise DataError(f"CCA model not found: {cca_path} (run `fit` first)")
    cca = CcaModel.load(cca_path)
    ds, _ = _fold_subsets(_dataset(cfg), cfg, args)
    train_config = cfg.train_config()
    for direction in cfg.directions:
        history = []
        model = train_stage(ds, cca, train_config, direction, history)
        tag = SHORT_DIRECTIONS[direction]
        model.save(out / f"tnn_{tag}.json")
        _write_trace(history, out / f"loss_{tag}.csv")
        rises = [r.epoch for prev, r in zip(history, history[1:]) if r.mean_loss > prev.mean_loss]
        if rises:
            log.warning("%s: epoch-mean loss rose at epoch(s) %s", direction, rises)
        if history:
            print(f"{direction}: final epoch mean loss {history[-1].mean_loss:.6f}")
    return 0


def _report_extra(cfg, kind):
    echo = asdict(cfg)
    echo.pop("out")
    echo["train"] = cfg.train_config().to_dict()
    return {"kind": kind, "config": echo}


def _write_reports(reports, out, cfg, kind):
    write_report(reports, out / "report.json", _report_extra(cfg, kind))
    for direction, rep in reports.items():
        rep.write_prc_csv(out / f"prc_{SHORT_DIRECTIONS[direction]}.csv")
        print(f"{direction}: MAP {rep.map:.4f} (folds: {' '.join(f'{m:.4f}' for m in rep.fold_maps)})")


def cmd_eval(args):
    cfg = build_config(args)
    if args.baseline:
        cfg.method = args.baseline
    out = _out_dir(cfg)
    ds = _dataset(cfg)
    if args.end_to_end:
        folds = kfold_split(ds, cfg.folds, cfg.seed)
        reports = crossval_evaluate(ds, folds, cfg.pipeline_config())
        _write_reports(reports, out, cfg, "crossval")
        return 0

    cca_path = Path(args.cca_model) if args.cca_model else out / "cca_model.json"
    if not cca_path.exists():
        raise DataError(f"CCA model not found: {cca_path} (run `fit`, or pass --end-to-end)")
    cca = CcaModel.load(cca_path)
    _, held_out = _fold_subsets(ds, cfg, args)
    test = held_out if held_out is not None else ds
    model_dir = Path(args.tnn_dir) if args.tnn_dir else out
    reports = {}
    for direction in cfg.directions:
        tnn = None
        if cfg.method == "tnn-c-cca":
            path = model_dir / f"tnn_{SHORT_DIRECTIONS[direction]}.json"
            if not path.exists():
                raise DataError(f"TNN model not found: {path} (run `train`, or pass --end-to-end)")
            tnn = TnnModel.load(path)
        reports[direction] = evaluate_stage(test, cca, direction, tnn)
    _write_reports(reports, out, cfg, "stagewise" if args.fold is None else f"fold-{args.fold}")
    return 0


_SWEEP_FIELDS = {"margin": float, "batches": int, "components": int}


def _parse_values(text, kind):
    try:
        values = [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --values: {exc}") from exc
    if not values:
        raise UsageError("--values is empty")
    return values


def cmd_sweep(args):
    cfg = build_config(args)
    if args.baseline:
        cfg.method = args.baseline
    out = _out_dir(cfg)
    values = _parse_values(args.values, _SWEEP_FIELDS[args.param])
    ds = _dataset(cfg)
    folds = kfold_split(ds, cfg.folds, cfg.seed)
    rows = []
    for i, value in enumerate(values):
        point = replace(cfg, train=dict(cfg.train))
        if args.param == "margin":
            point.train["margin"] = value
        elif args.param == "batches":
            point.train["batch_count"] = value
        else:
            point.k = value
        pc = point.pipeline_config()
        pc = replace(pc, train=replace(pc.train, seed=cfg.seed + i))
        start = time.perf_counter()
        reports = crossval_evaluate(ds, folds, pc)
        elapsed = time.perf_counter() - start
        maps = {d: reports[d].map if d in reports else "" for d in DIRECTIONS}
        rows.append([value, maps["audio2visual"], maps["visual2audio"], round(elapsed, 3)])
        log.info("%s=%s: %s", args.param, value, maps)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "map_a2v", "map_v2a", "wall_seconds"])
        w.writerows(rows)
    for row in rows:
        print(",".join(str(v) for v in row))
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int, help="random seed (required here or in the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_flags(p):
    p.add_argument("--data", help="dataset manifest JSON")
    p.add_argument("--k", type=int, help="number of correlation components (default 10)")
    p.add_argument("--reg", type=float, help="ridge added to each view covariance (default 1e-4*trace/D)")
    p.add_argument("--folds", type=int, help="fold count (default 5)")


def _train_flags(p):
    p.add_argument("--direction", choices=[*DIRECTIONS, "both"])
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches", type=int, help="batches per epoch (default N // 55)")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--distance", choices=DISTANCES)
    p.add_argument("--dropout", type=float)
    p.add_argument("--per-anchor", type=int, help="triplets per anchor for --strategy random")


def make_parser():
    parser = _Parser(prog="tnncca", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic clustered two-view dataset")
    _common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--dim-x", type=int)
    p.add_argument("--dim-y", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--separation", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit CCA or Cluster-CCA")
    _common(p)
    _data_flags(p)
    p.add_argument("--mode", choices=["cca", "cluster-cca"], default=None)
    p.add_argument("--fold", type=int, help="fit on every fold except this one")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="train the triplet network on CCA projections")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--cca-model", help="CCA model JSON (default <out>/cca_model.json)")
    p.add_argument("--fold", type=int, help="train on every fold except this one")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval MAP / PRC")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--end-to-end", action="store_true", help="run k-fold cross-validation of the whole pipeline")
    p.add_argument("--baseline", choices=["cluster-cca-only", "cca-only"])
    p.add_argument("--cca-model")
    p.add_argument("--tnn-dir", help="directory with tnn_a2v.json / tnn_v2a.json (default <out>)")
    p.add_argument("--fold", type=int, help="evaluate on this held-out fold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="cross-validated MAP over a parameter grid")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--param", required=True, choices=sorted(_SWEEP_FIELDS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--baseline", choices=["cluster-cca-only", "cca-only"])
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tnncca {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"tnncca {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"tnncca {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
