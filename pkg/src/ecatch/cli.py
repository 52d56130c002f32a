"""ecatch command line: generate | cluster | train | eval | predict | crosseval | verify.

Exit codes: 0 success, 1 runtime/numeric failure, 2 configuration error.
ECATCH_THREADS caps worker threads (also applied to BLAS pools, which keeps
training bitwise reproducible).
"""

from __future__ import annotations

import os

_threads = os.environ.get("ECATCH_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .clustering import load_events, save_events
from .config import DEFAULTS, ConfigError, RunConfig, load_config, parse_override, save_config
from .data import assign_splits, load_dataset, write_dataset
from .pipeline import build_structure, evaluate_posts_and_events, predictions
from .synth import SynthError, SynthSpec, generate, write_ground_truth
from .training import load_checkpoint, save_checkpoint, train, write_history
from .verify import run_all, write_report
from .windows import load_windows, save_windows


class CliError(RuntimeError):
    pass


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, value = parse_override(item)
        overrides[key] = value
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    return load_config(getattr(args, "config", None), overrides)


def _prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def _load_split_dataset(data_dir: str, cfg: RunConfig):
    ds = load_dataset(data_dir)
    return assign_splits(ds, cfg.split_fractions(), cfg["seed"])


# -- commands -----------------------------------------------------------------
def cmd_generate(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec {args.spec}: {exc}") from exc
    spec = SynthSpec.from_dict(raw)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    ds, truth = generate(spec)
    write_dataset(ds, out, force=True)
    write_ground_truth(truth, out / "groundtruth.json")
    print(f"wrote {ds.n} posts across {spec.n_events} events to {out}")
    return 0


def cmd_cluster(args) -> int:
    cfg = _config_from_args(args)
    ds = load_dataset(args.data)
    events, _ = build_structure(ds, cfg)
    save_events(events, args.out)
    print(f"wrote {len(events)} events to {args.out}")
    return 0


def _run_training(data_dir: str, cfg: RunConfig, out: Path):
    ds = _load_split_dataset(data_dir, cfg)
    events, windows = build_structure(ds, cfg)
    result = train(ds, events, windows, cfg)

    save_checkpoint(result.params, out / "checkpoint.bin")
    write_history(result.history, out / "history.csv")
    save_events(events, out / "events.json")
    save_windows(windows, out / "windows.json")
    save_config(cfg, out / "config.json")
    (out / "dataset.json").write_text(json.dumps({"n_posts": ds.n}) + "\n")
    return ds, events, windows, result


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    ds, events, windows, result = _run_training(args.data, cfg, out)

    p_post, p_event = predictions(ds, events, windows, result.params, cfg)
    val_idx = ds.split_indices("val")
    metrics = {"split": "val", "n": int(val_idx.size)}
    if val_idx.size:
        metrics.update(
            evaluate_posts_and_events(ds, val_idx, p_post, p_event, events,
                                      cfg["eval.threshold"])
        )
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; "
          f"artifacts in {out}")
    return 0


def _load_run_dir(checkpoint_path: Path):
    run_dir = checkpoint_path.parent
    cfg_path = run_dir / "config.json"
    cfg = load_config(cfg_path) if cfg_path.is_file() else RunConfig()
    params = load_checkpoint(checkpoint_path)
    return run_dir, cfg, params


def _structure_for(ds, cfg, run_dir: Path):
    """Reuse persisted events/windows when they match the dataset."""
    ev_path, win_path, meta_path = (
        run_dir / "events.json", run_dir / "windows.json", run_dir / "dataset.json"
    )
    if ev_path.is_file() and win_path.is_file() and meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        if meta.get("n_posts") == ds.n:
            return load_events(ev_path), load_windows(win_path)
    return build_structure(ds, cfg)


def cmd_eval(args) -> int:
    run_dir, cfg, params = _load_run_dir(Path(args.checkpoint))
    ds = _load_split_dataset(args.data, cfg)
    events, windows = _structure_for(ds, cfg, run_dir)
    p_post, p_event = predictions(ds, events, windows, params, cfg)

    idx = ds.split_indices(args.split)
    if idx.size == 0:
        raise CliError(f"split {args.split!r} is empty")
    payload = {"split": args.split, "n": int(idx.size)}
    payload.update(
        evaluate_posts_and_events(ds, idx, p_post, p_event, events,
                                  cfg["eval.threshold"])
    )
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_predict(args) -> int:
    run_dir, cfg, params = _load_run_dir(Path(args.checkpoint))
    ds = _load_split_dataset(args.data, cfg)
    events, windows = _structure_for(ds, cfg, run_dir)
    p_post, _ = predictions(ds, events, windows, params, cfg)

    assignment = ds.split_assignment()
    with Path(args.out).open("w") as fh:
        for i in range(ds.n):
            fh.write(json.dumps({
                "id": ds.ids[i],
                "p": float(p_post[i]),
                "label": int(ds.labels[i]),
                "split": assignment[ds.ids[i]],
            }) + "\n")
    print(f"wrote {ds.n} predictions to {args.out}")
    return 0


def cmd_crosseval(args) -> int:
    cfg = _config_from_args(args)
    test_cfg = cfg
    if args.test_config:
        merged = json.loads(Path(args.test_config).read_text())
        test_cfg = cfg.updated(merged)

    ds_b_probe = load_dataset(args.test_data)
    ds_a_probe = load_dataset(args.train_data)
    if ds_a_probe.d_text != ds_b_probe.d_text or ds_a_probe.d_img != ds_b_probe.d_img:
        raise CliError(
            "embedding dimension mismatch between datasets: "
            f"text {ds_a_probe.d_text} vs {ds_b_probe.d_text}, "
            f"image {ds_a_probe.d_img} vs {ds_b_probe.d_img}"
        )

    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    _, _, _, result = _run_training(args.train_data, cfg, out)

    # the target dataset gets its own structure; no fine-tuning on it
    events_b, windows_b = build_structure(ds_b_probe, test_cfg)
    p_post, p_event = predictions(ds_b_probe, events_b, windows_b, result.params, test_cfg)
    payload = {
        "train_data": str(args.train_data),
        "test_data": str(args.test_data),
        "n": ds_b_probe.n,
    }
    payload.update(
        evaluate_posts_and_events(
            ds_b_probe, np.arange(ds_b_probe.n), p_post, p_event, events_b,
            test_cfg["eval.threshold"],
        )
    )
    text = json.dumps(payload, indent=2)
    (out / "crosseval.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_verify(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    reports = run_all(seeds)
    for r in reports:
        print(r.line())
    write_report(reports, args.out)
    failures = [r for r in reports if not r.ok]
    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return 1
    print(f"all {len(reports)} checks passed; report in {args.out}")
    return 0


# -- parser -------------------------------------------------------------------
def _config_epilog() -> str:
    lines = ["config keys (JSON file and --set overrides):"]
    for key, (default, help_text) in DEFAULTS.items():
        lines.append(f"  {key:<26} default={default!r:<12} {help_text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecatch",
        description="event-centric cross-modal misinformation detector "
                    "over pre-extracted embeddings",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON config file with dotted keys")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--spec", required=True, help="JSON generator spec")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("cluster", help="compute pseudo-events only")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="events.json path")
    add_config_args(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="cluster, window, and train end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--force", action="store_true")
    add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--out", help="also write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="emit per-post probabilities")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="JSONL output path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("crosseval", help="train on one dataset, test on another")
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--test-config", help="config overrides for the test side")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--force", action="store_true")
    add_config_args(p)
    p.set_defaults(func=cmd_crosseval)

    p = sub.add_parser("verify", help="run the oracle and invariant suite")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SynthError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
