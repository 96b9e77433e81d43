"""Command-line entry point: dataset generation, training, evaluation,
ablations, and sensitivity sweeps as one-shot reproducible commands.

Settings resolve in three layers: built-in defaults, then the --config JSON
file, then individual flags. Every command echoes the fully resolved
configuration and its fingerprint to stderr before doing work; result files
embed the same fingerprint. stdout carries only the final metric row (eval),
so it can be piped into tables.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .datagen import DomainSpec, ShiftSpec, generate_domain, read_dataset, write_dataset
from .graphs import InvalidEventError
from .pipeline import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_phase,
    with_config,
)
from .presets import ExperimentConfig, shift_mid
from .reporting import (
    ABLATION_VARIANTS,
    compute_metrics,
    config_fingerprint,
    emit_report,
    run_ablation,
    run_sensitivity,
)

TRAIN_FILE = "train.jsonl"
VAL_FILE = "val.jsonl"
TEST_FILE = "test.jsonl"
META_FILE = "meta.json"
CHECKPOINT_FILE = "model.json"


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValueError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


def _tupled(kw: dict, *keys: str) -> dict:
    for key in keys:
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    return kw


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """defaults <- config file <- flags, validated by the component types."""
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    seed = file_cfg.get("seed", 0)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    base = shift_mid(int(seed))

    domain_kw = _tupled(
        {**asdict(base.domain), **file_cfg.get("domain", {})},
        "size_dist",
        "mean_translation",
    )
    shift_kw = _tupled(
        {**asdict(base.shift), **file_cfg.get("shift", {})}, "mean_translation"
    )
    train_kw = {**asdict(base.train), **file_cfg.get("train", {})}
    if getattr(args, "seed", None) is not None:
        domain_kw["seed"] = args.seed
        train_kw["seed"] = args.seed
    for flag, field in (
        ("alpha1", "alpha1"),
        ("alpha2", "alpha2"),
        ("ttt_steps", "ttt_steps"),
        ("ttt_lr", "ttt_lr"),
        ("mode", "adaptation_mode"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train_kw[field] = value

    return ExperimentConfig(
        domain=DomainSpec(**domain_kw),
        shift=ShiftSpec(**shift_kw),
        train=TrainConfig(**train_kw),
        val_events=int(file_cfg.get("val_events", base.val_events)),
        test_events=int(file_cfg.get("test_events", base.test_events)),
    )


def _config_payload(cfg: ExperimentConfig) -> dict:
    return {
        "domain": asdict(cfg.domain),
        "shift": asdict(cfg.shift),
        "train": asdict(cfg.train),
        "val_events": cfg.val_events,
        "test_events": cfg.test_events,
    }


def echo_config(cfg: ExperimentConfig) -> str:
    payload = _config_payload(cfg)
    fingerprint = config_fingerprint(payload)
    _progress("resolved config:")
    _progress(json.dumps(payload, sort_keys=True, indent=2))
    _progress(f"config_hash={fingerprint}")
    return fingerprint


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    fingerprint = echo_config(cfg)
    out = _out_dir(args)

    train_events = generate_domain(cfg.domain)
    val_events = generate_domain(cfg.val_spec()) if cfg.val_events > 0 else []
    target_spec = cfg.target_spec()
    test_events = generate_domain(target_spec)

    write_dataset(train_events, out / TRAIN_FILE)
    write_dataset(val_events, out / VAL_FILE)
    write_dataset(test_events, out / TEST_FILE)
    meta = {
        "feature_dim": cfg.domain.feature_dim,
        "num_classes": 2,
        "config_fingerprint": fingerprint,
        "domain": asdict(cfg.domain),
        "shift": asdict(cfg.shift),
        "target_domain": asdict(target_spec),
        "counts": {
            "train": len(train_events),
            "val": len(val_events),
            "test": len(test_events),
        },
    }
    (out / META_FILE).write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    # round-trip validation: the files must parse back
    for name in (TRAIN_FILE, VAL_FILE, TEST_FILE):
        if (out / name).stat().st_size > 1:
            read_dataset(out / name)
    _progress(
        f"wrote {len(train_events)} train / {len(val_events)} val / "
        f"{len(test_events)} test events to {out}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    echo_config(cfg)
    train_events = read_dataset(Path(args.data_dir) / TRAIN_FILE)
    _progress(f"training on {len(train_events)} events ...")
    model = train_phase(train_events, cfg.train)
    out = _out_dir(args)
    ckpt_path = out / CHECKPOINT_FILE
    save_checkpoint(model, ckpt_path)
    load_checkpoint(ckpt_path)  # validation round-trip
    last = model.training_log[-1]
    _progress(
        f"final L_m={last['l_m']:.6f} L_s={last['l_s']:.6f} "
        f"after {len(model.training_log)} epochs; checkpoint: {ckpt_path}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    overrides = {}
    file_cfg = _load_config_file(args.config) if args.config else {}
    overrides.update(file_cfg.get("train", {}))
    for flag, field in (
        ("alpha1", "alpha1"),
        ("alpha2", "alpha2"),
        ("ttt_steps", "ttt_steps"),
        ("ttt_lr", "ttt_lr"),
        ("mode", "adaptation_mode"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    model = with_config(model, **overrides)
    fingerprint = config_fingerprint(model.config)
    _progress("resolved eval config:")
    _progress(json.dumps(asdict(model.config), sort_keys=True, indent=2))
    _progress(f"config_hash={fingerprint}")

    test_events = read_dataset(args.test_data)
    records = evaluate(test_events, model)
    report = compute_metrics(records, fingerprint=fingerprint, seed=model.config.seed)

    out = _out_dir(args)
    with (out / "records.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")
    emit_report(
        [(model.config.adaptation_mode, report)],
        out / "metrics.json",
        "json",
        fingerprint=fingerprint,
    )
    _progress(f"wrote {out / 'records.jsonl'} and {out / 'metrics.json'}")
    row = [report.accuracy, report.macro_f1, *report.per_class_f1]
    print("\t".join(f"{v:.4f}" for v in row))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    fingerprint = echo_config(cfg)
    data_dir = Path(args.data_dir)
    train_events = read_dataset(data_dir / TRAIN_FILE)
    test_events = read_dataset(data_dir / TEST_FILE)
    rows = []
    for i in range(args.seeds):
        seed = cfg.train.seed + i
        _progress(f"ablation seed {seed} ({i + 1}/{args.seeds}) ...")
        result = run_ablation(train_events, test_events, replace(cfg.train, seed=seed))
        rows.extend((name, result.metrics[name]) for name in ABLATION_VARIANTS)
    out = _out_dir(args)
    emit_report(rows, out / "ablation.csv", "csv", fingerprint=fingerprint)
    emit_report(rows, out / "ablation.json", "json", fingerprint=fingerprint)
    emit_report(
        rows, out / "ablation.svg", "svg", fingerprint=fingerprint, title="ablation"
    )
    _progress(f"wrote ablation report ({len(rows)} rows) to {out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    fingerprint = echo_config(cfg)
    data_dir = Path(args.data_dir)
    train_events = read_dataset(data_dir / TRAIN_FILE)
    test_events = read_dataset(data_dir / TEST_FILE)
    _progress(f"sweeping {args.which} ...")
    table = run_sensitivity(train_events, test_events, cfg.train, args.which)
    rows = [(f"{args.which}={value:g}", report) for value, report in table]
    out = _out_dir(args)
    emit_report(rows, out / f"sweep_{args.which}.csv", "csv", fingerprint=fingerprint)
    emit_report(
        rows,
        out / f"sweep_{args.which}.svg",
        "svg",
        fingerprint=fingerprint,
        title=f"{args.which} sensitivity",
    )
    _progress(f"wrote sweep report ({len(rows)} rows) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="experiment seed (data + training)")
    common.add_argument("--alpha1", type=float, help="SSL weight during training")
    common.add_argument("--alpha2", type=float, help="alignment weight during adaptation")
    common.add_argument("--ttt-steps", type=int, dest="ttt_steps", help="adaptation steps per event")
    common.add_argument("--ttt-lr", type=float, dest="ttt_lr", help="adaptation learning rate")
    common.add_argument(
        "--mode", choices=("episodic", "online"), help="adaptation mode"
    )

    parser = argparse.ArgumentParser(
        prog="tard",
        description="Test-time adaptation for propagation-graph classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", parents=[common], help="generate source/target datasets")
    p_gen.add_argument("--out", required=True, metavar="DIR")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", parents=[common], help="train a model")
    p_train.add_argument("data_dir", help="directory holding train.jsonl")
    p_train.add_argument("--out", required=True, metavar="DIR")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common], help="adapt and evaluate")
    p_eval.add_argument("checkpoint", help="model checkpoint JSON")
    p_eval.add_argument("test_data", help="test dataset JSONL")
    p_eval.add_argument("--out", required=True, metavar="DIR")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", parents=[common], help="run adaptation ablations")
    p_ablate.add_argument("data_dir", help="directory holding train/test JSONL")
    p_ablate.add_argument("--seeds", type=int, default=1, help="number of seeds")
    p_ablate.add_argument("--out", required=True, metavar="DIR")
    p_ablate.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep", parents=[common], help="hyperparameter sensitivity")
    p_sweep.add_argument("data_dir", help="directory holding train/test JSONL")
    p_sweep.add_argument("--which", choices=("alpha1", "alpha2"), required=True)
    p_sweep.add_argument("--out", required=True, metavar="DIR")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, InvalidEventError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
