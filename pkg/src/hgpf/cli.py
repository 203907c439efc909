"""Command-line entry points: gen-toy, make-splits, pretrain, posttrain, eval, diagnose.

Every option can also come from ``--config FILE`` (flat ``key value`` lines,
keys spelled like the options with underscores).  Precedence: flag, then
file, then built-in default.  Exit codes: 0 success, 2 configuration error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .aux_system import AuxSystem
from .backbone import Backbone, pretrain
from .data_io import (CheckpointError, DataError, load_checkpoint, load_dataset, make_splits,
                      read_kv, read_splits, save_checkpoint, write_dataset, write_splits)
from .diffnum import make_rng
from .eval_diag import evaluate, gate_report, write_predictions
from .graph import prepare
from .hin import HinValidationError
from .post_training import BackboneAux, TrainConfig, run_hgpf
from .synthetic import make_acm_like, make_dblp_like, make_random_toy
from .training import NumericFailure

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
log = logging.getLogger("hgpf")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig(TrainConfig):
    dataset: str = ""
    out: str = "runs/out"
    splits: str = ""
    n_train: int = 20
    n_val: int = 50
    checkpoint: str = ""
    baseline: str = ""
    eval_target: str = "auxiliary"
    receptive_hops: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def to_text(self) -> str:
        return "".join(f"{k} {v}\n" for k, v in asdict(self).items())


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool or kind == "bool":
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        for key, vals, lineno in read_kv(path):
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, " ".join(vals), types[key]))
    for name in types:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if cfg.eval_target not in ("auxiliary", "backbone"):
        raise ConfigError("eval_target must be 'auxiliary' or 'backbone'")
    try:
        cfg.train_config().validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--splits", help="split file; default: generated from n_train/n_val/seed")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--aux-lr", dest="aux_lr", type=float)
    p.add_argument("--aux-weight-decay", dest="aux_weight_decay", type=float)
    p.add_argument("--aux-dropout", dest="aux_dropout", type=float)
    p.add_argument("--aux-hidden", dest="aux_hidden", type=int)
    p.add_argument("--backbone-lr", dest="backbone_lr", type=float)
    p.add_argument("--backbone-weight-decay", dest="backbone_weight_decay", type=float)
    p.add_argument("--backbone-dropout", dest="backbone_dropout", type=float)
    p.add_argument("--backbone-hidden", dest="backbone_hidden", type=int)
    p.add_argument("--decay-gates", dest="decay_gates", action="store_const", const=True)
    p.add_argument("--system-distance", dest="system_distance")
    p.add_argument("--module-distance", dest="module_distance")
    p.add_argument("--theta-distance", dest="theta_distance")
    p.add_argument("--variant", choices=("full", "global-only", "local-only", "self-cotrain"))
    p.add_argument("--checkpoint", help="checkpoint file, or a posttrain output directory")
    p.add_argument("--baseline", help="backbone checkpoint to compare against (diagnose)")
    p.add_argument("--eval-target", dest="eval_target", choices=("auxiliary", "backbone"))
    p.add_argument("--receptive-hops", dest="receptive_hops", type=int)


# ------------------------------------------------------------------ helpers


def _load(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("--dataset is required")
    ds = load_dataset(cfg.dataset)
    graph = prepare(ds.hin, ds.features, ds.manifest.metapaths)
    if cfg.splits:
        splits = read_splits(cfg.splits, ds.target_ids)
    else:
        splits = make_splits(ds.labels, cfg.n_train, cfg.n_val, cfg.seed)
    return ds, graph, splits


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return out


def _write_log(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _model_meta(kind: str, cfg: RunConfig, num_classes: int, **extra) -> dict[str, str]:
    meta = {"kind": kind, "num_classes": str(num_classes), "seed": str(cfg.seed),
            "k": str(cfg.k), "aux_hidden": str(cfg.aux_hidden),
            "backbone_hidden": str(cfg.backbone_hidden), "variant": cfg.variant}
    meta.update({k: str(v) for k, v in extra.items()})
    return meta


def build_from_checkpoint(path, graph, cfg: RunConfig):
    """Rebuild a backbone or auxiliary predictor from a checkpoint."""
    params, meta = load_checkpoint(path)
    num_classes = int(meta["num_classes"])
    kind = meta.get("kind")
    if kind == "backbone":
        model = Backbone(graph, num_classes, hidden=int(meta["backbone_hidden"]))
    elif kind == "aux":
        variant = meta["variant"]
        if variant == "self-cotrain":
            model = BackboneAux(Backbone(graph, num_classes, hidden=int(meta["backbone_hidden"]),
                                         prefix="aux_backbone"))
        else:
            model = AuxSystem(graph, num_classes, k=int(meta["k"]), variant=variant,
                              hidden=int(meta["aux_hidden"]))
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    try:
        model.params.load(params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: incompatible with dataset ({exc})") from None
    return model, meta


def predict_with(model, splits, labels) -> np.ndarray:
    if isinstance(model, Backbone):
        return model.predict()
    from .post_training import train_only_labels
    return model.predict(splits.train, train_only_labels(labels, splits.train))


# ----------------------------------------------------------------- commands


def cmd_gen_toy(args) -> int:
    makers = {"acm": make_acm_like, "dblp": make_dblp_like}
    if args.kind == "toy":
        ds = make_random_toy(make_rng(args.seed), n_targets=args.size or 8)
    else:
        kw = {}
        if args.size:
            kw["n_papers" if args.kind == "acm" else "n_authors"] = args.size
        ds = makers[args.kind](seed=args.seed, **kw)
    write_dataset(ds, args.out)
    print(f"wrote {ds.manifest.name} to {args.out}")
    return 0


def cmd_make_splits(args) -> int:
    cfg = resolve_config(args)
    if not cfg.dataset:
        raise ConfigError("--dataset is required")
    ds = load_dataset(cfg.dataset)
    splits = make_splits(ds.labels, cfg.n_train, cfg.n_val, cfg.seed)
    target = Path(args.output or Path(cfg.out) / "splits.tsv")
    target.parent.mkdir(parents=True, exist_ok=True)
    write_splits(splits, ds.target_ids, target)
    print(f"train {len(splits.train)} val {len(splits.val)} test {len(splits.test)} -> {target}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    ds, graph, splits = _load(cfg)
    out = _out_dir(cfg)
    write_splits(splits, ds.target_ids, out / "splits.tsv")
    from .post_training import _seeds
    init_b, _, drop_b, _ = _seeds(cfg.seed)
    num_classes = ds.manifest.num_classes
    model = Backbone(graph, num_classes, hidden=cfg.backbone_hidden,
                     dropout=cfg.backbone_dropout, rng=init_b)
    res = pretrain(model, splits, ds.labels, epochs=cfg.pretrain_epochs, lr=cfg.backbone_lr,
                   weight_decay=cfg.backbone_weight_decay, rng=drop_b,
                   tag={"iteration": 0, "phase": "pretrain"})
    records = res.records + [{"iteration": 0, "phase": "pretrain", "selected_epoch": res.selected,
                              "best_val_micro_f1": res.best_score}]
    _write_log(out / "log.jsonl", records)
    save_checkpoint(model.params.snapshot(), out / "backbone.ckpt",
                    _model_meta("backbone", cfg, num_classes))
    print(f"pretrained backbone: best validation Micro-F1 {res.best_score:.4f} "
          f"at epoch {res.selected} -> {out / 'backbone.ckpt'}")
    return 0


def cmd_posttrain(args) -> int:
    cfg = resolve_config(args)
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint (pretrained backbone) is required")
    ds, graph, splits = _load(cfg)
    backbone, meta = build_from_checkpoint(cfg.checkpoint, graph, cfg)
    if not isinstance(backbone, Backbone):
        raise CheckpointError(f"{cfg.checkpoint}: expected a backbone checkpoint")
    backbone.dropout = cfg.backbone_dropout
    out = _out_dir(cfg)
    write_splits(splits, ds.target_ids, out / "splits.tsv")
    num_classes = ds.manifest.num_classes
    res = run_hgpf(graph, ds.labels, splits, cfg.train_config(), backbone=backbone,
                   num_classes=num_classes)
    registries = {"backbone": sorted(res.backbone.params), "aux": sorted(res.aux.params)}
    records = [{"phase": "registry", "backbone": registries["backbone"],
                "aux": registries["aux"]}] + res.history
    _write_log(out / "log.jsonl", records)
    save_checkpoint(res.backbone.params.snapshot(), out / "backbone.ckpt",
                    _model_meta("backbone", cfg, num_classes))
    save_checkpoint(res.aux.params.snapshot(), out / "aux.ckpt",
                    _model_meta("aux", cfg, num_classes))
    print(f"post-training done: auxiliary validation Micro-F1 {res.best_omega_score:.4f}, "
          f"backbone {res.best_theta_score:.4f} -> {out}")
    return 0


def _report(cfg: RunConfig, diagnose: bool) -> int:
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required")
    ds, graph, splits = _load(cfg)
    path = Path(cfg.checkpoint)
    if path.is_dir():
        path = path / ("aux.ckpt" if cfg.eval_target == "auxiliary" else "backbone.ckpt")
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    model, meta = build_from_checkpoint(path, graph, cfg)
    pred = predict_with(model, splits, ds.labels)
    gates = gate_report(model) if isinstance(model, AuxSystem) else {}
    name = "backbone" if meta["kind"] == "backbone" else f"auxiliary:{meta['variant']}"
    report, far, interfered = evaluate(name, pred, ds.labels, splits, graph.union,
                                       cfg.receptive_hops, gates)
    out = _out_dir(cfg)
    if diagnose and cfg.baseline:
        base, _ = build_from_checkpoint(cfg.baseline, graph, cfg)
        base_report, _, _ = evaluate("baseline", predict_with(base, splits, ds.labels), ds.labels,
                                     splits, graph.union, cfg.receptive_hops)
        report.notes["baseline_micro_f1"] = repr(base_report.micro_f1)
        for g, (n, acc) in base_report.groups.items():
            report.notes[f"gain.{g}"] = repr(report.groups[g][1] - acc)
    stem = "diagnosis" if diagnose else "report"
    (out / f"{stem}.txt").write_text(report.to_text(), encoding="utf-8")
    write_predictions(out / "predictions.tsv", ds.target_ids, pred, ds.labels, splits, far,
                      interfered)
    print(f"{name}: test Micro-F1 {report.micro_f1:.4f}, Macro-F1 {report.macro_f1:.4f} "
          f"-> {out / (stem + '.txt')}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    return _report(cfg, diagnose=False)


def cmd_diagnose(args) -> int:
    cfg = resolve_config(args)
    return _report(cfg, diagnose=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgpf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="write a synthetic dataset directory")
    p.add_argument("--kind", choices=("acm", "dblp", "toy"), default="acm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=0, help="number of target nodes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("make-splits", help="write a stratified train/val/test split file")
    _add_run_options(p)
    p.add_argument("--output", help="split file path (default: OUT/splits.tsv)")
    p.set_defaults(func=cmd_make_splits)

    for name, func, text in (("pretrain", cmd_pretrain, "pretrain the backbone"),
                             ("posttrain", cmd_posttrain, "alternate auxiliary/backbone training"),
                             ("eval", cmd_eval, "test-set report for a checkpoint"),
                             ("diagnose", cmd_diagnose, "hard-node analysis against a baseline")):
        p = sub.add_parser(name, help=text)
        _add_run_options(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, HinValidationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
