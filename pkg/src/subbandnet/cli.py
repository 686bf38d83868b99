"""Command line interface: features, train, eval, profile, and sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Configuration
precedence is defaults < config file (``key = value`` lines) < flags. The
dataset root may also come from the ``SUBBANDNET_DATA_ROOT`` environment
variable.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import data as data_mod
from . import dsp, flops, subband
from . import train as train_mod
from .tensor import Rng

DATA_ROOT_ENV = "SUBBANDNET_DATA_ROOT"
SWEEP_SCHEMA = "subbandnet.sweep.v1"
SWEEP_COLUMNS = ["task", "arch", "variant", "bands", "K", "flops", "mult",
                 "params", "trial_accs", "mean_acc", "stddev"]


class UsageError(Exception):
    pass


def _add_data_flags(p, include_per_class=True):
    p.add_argument("--task", choices=["commands", "digits", "synthetic"],
                   default="synthetic")
    p.add_argument("--data-root", default=None,
                   help=f"dataset root (or ${DATA_ROOT_ENV})")
    if include_per_class:
        p.add_argument("--per-class", type=int, default=50,
                       help="clips per class for the synthetic task")
    p.add_argument("--data-seed", type=int, default=0,
                   help="seed for synthetic clip generation")


def _add_model_flags(p):
    p.add_argument("--arch", choices=list(subband.ARCHS), default="overlapped_subband")
    p.add_argument("--k", type=int, default=8, help="kernels per conv block")
    p.add_argument("--bands", type=int, default=None,
                   help="band count for the banded architectures")
    p.add_argument("--variant", choices=list(subband.VARIANTS), default=None,
                   help="sub-band join strategy (overlapped_subband only)")
    p.add_argument("--overlap", type=int, default=None,
                   help="build a uniform layout with this overlap instead of the preset")
    p.add_argument("--dropout", type=float, default=0.5)


def _add_schedule_flags(p):
    p.add_argument("--steps-phase1", type=int, default=24000)
    p.add_argument("--steps-phase2", type=int, default=3000)
    p.add_argument("--lr-phase1", type=float, default=0.001)
    p.add_argument("--lr-phase2", type=float, default=0.0001)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--eval-interval", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--silence-frac", type=float, default=1.0 / 12.0)
    p.add_argument("--unknown-frac", type=float, default=1.0 / 12.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subbandnet",
        description="Sub-band CNN training, profiling, and sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="featurize a dataset into a cache file")
    _add_data_flags(p)
    p.add_argument("--out", required=True, help="feature cache output path")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one model")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=list(data_mod.SPLITS), default="test")
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="report FLOPS/multiplications/parameters")
    _add_model_flags(p)
    p.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    p.add_argument("--baseline-arch", choices=list(subband.ARCHS), default=None,
                   help="also print the FLOPS reduction against this architecture")
    p.add_argument("--baseline-bands", type=int, default=None)
    p.add_argument("--baseline-variant", choices=list(subband.VARIANTS), default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="accuracy-vs-FLOPS grid over archs and K")
    _add_data_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--archs", default="full_band,overlapped_subband",
                   help="comma-separated architecture list")
    p.add_argument("--k-list", default="8,16,24,32,40,48,56,64",
                   help="comma-separated kernel counts")
    p.add_argument("--bands", type=int, default=3)
    p.add_argument("--variant", choices=list(subband.VARIANTS), default=None)
    p.add_argument("--overlap", type=int, default=None,
                   help="build a uniform layout with this overlap instead of the preset")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def _parse_config_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Merge config-file values under explicitly passed flags."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config) as f:
            lines = f.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{args.config}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"{args.config}:{lineno}: unknown option {key!r}")
        flag = f"--{dest.replace('_', '-')}"
        if any(a == flag or a.startswith(flag + "=") for a in argv):
            continue  # explicit flag wins
        setattr(args, dest, _parse_config_value(value))


def _resolve_data_root(args) -> str:
    root = args.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(
            f"--data-root (or ${DATA_ROOT_ENV}) is required for task {args.task!r}"
        )
    if not os.path.isdir(root):
        raise UsageError(f"dataset root {root!r} does not exist")
    return root


def _load_dataset(args):
    if args.task == "synthetic":
        per_class = getattr(args, "per_class", 50)
        return data_mod.synthetic_dataset(12, per_class, Rng(args.data_seed))
    root = _resolve_data_root(args)
    manifest = data_mod.scan_dataset(root, args.task)
    return manifest, data_mod.DirectoryStore(root)


def _build_layout(args, arch):
    if arch == subband.FULL_BAND:
        if args.bands is not None:
            raise UsageError("--bands cannot be used with --arch full_band")
        if args.variant is not None:
            raise UsageError("--variant cannot be used with --arch full_band")
        return None
    bands = args.bands if args.bands is not None else 3
    if bands < 1:
        raise UsageError(f"--bands must be >= 1, got {bands}")
    if arch == subband.FULL_PLUS_NONOVERLAP:
        if args.variant is not None:
            raise UsageError("--variant applies only to overlapped_subband")
        overlap = 0 if args.overlap is None else args.overlap
        if overlap != 0:
            raise UsageError("full_plus_nonoverlap requires --overlap 0")
        return subband.uniform_layout(bands, 40, 0)
    if args.overlap is not None:
        return subband.uniform_layout(bands, 40, args.overlap)
    return subband.preset_layout(bands)


_UNSET = object()


def _build_spec(args, arch=None, k=None, variant=_UNSET, bands=_UNSET):
    ns = argparse.Namespace(**vars(args))
    if arch is not None:
        ns.arch = arch
    if k is not None:
        ns.k = k
    if variant is not _UNSET:
        ns.variant = variant
    if bands is not _UNSET:
        ns.bands = bands
    if ns.k < 1:
        raise UsageError(f"--k must be >= 1, got {ns.k}")
    layout = _build_layout(ns, ns.arch)
    try:
        return subband.build_model(
            arch=ns.arch, k=ns.k, dropout=ns.dropout, layout=layout,
            concat_variant=ns.variant if ns.arch == subband.OVERLAPPED_SUBBAND else None,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _training_config(args) -> train_mod.TrainingConfig:
    composed = args.task in data_mod.TASK_KEYWORDS
    return train_mod.TrainingConfig(
        lr_phase1=args.lr_phase1, steps_phase1=args.steps_phase1,
        lr_phase2=args.lr_phase2, steps_phase2=args.steps_phase2,
        batch_size=args.batch_size, dropout=args.dropout, seed=args.seed,
        eval_interval=args.eval_interval,
        silence_frac=args.silence_frac if composed else 0.0,
        unknown_frac=args.unknown_frac if composed else 0.0,
    )


def cmd_features(args) -> int:
    manifest, store = _load_dataset(args)
    features = {e.path: store.features(e.path) for e in manifest.entries}
    dsp.write_feature_cache(args.out, features)
    counts = {s: len(manifest.split_entries(s)) for s in data_mod.SPLITS}
    print(f"wrote {len(features)} feature records to {args.out}")
    for split in data_mod.SPLITS:
        print(f"{split}: {counts[split]}")
    return 0


def cmd_train(args) -> int:
    spec = _build_spec(args)
    manifest, store = _load_dataset(args)
    config = _training_config(args)
    source = train_mod.ManifestSource(
        manifest, store, silence_frac=config.silence_frac,
        unknown_frac=config.unknown_frac,
    )
    result = train_mod.train(spec, source, config)
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt = os.path.join(args.out_dir, "checkpoint.ckpt")
    metrics = os.path.join(args.out_dir, "metrics.csv")
    train_mod.save_checkpoint(ckpt, spec, result.params)
    train_mod.write_metrics_csv(metrics, result.metrics)
    final_dev = next(
        (m.dev_accuracy for m in reversed(result.metrics) if m.dev_accuracy is not None),
        None,
    )
    print(f"checkpoint: {ckpt}")
    print(f"metrics: {metrics}")
    if final_dev is not None:
        print(f"final dev accuracy: {final_dev:.4f}")
    if result.best_dev_accuracy is not None:
        print(f"best dev accuracy: {result.best_dev_accuracy:.4f} "
              f"(step {result.best_dev_step})")
    return 0


def cmd_eval(args) -> int:
    spec, params = train_mod.load_checkpoint(args.checkpoint)
    manifest, store = _load_dataset(args)
    source = train_mod.ManifestSource(manifest, store)
    acc = train_mod.evaluate(params, spec, source, args.split, args.batch_size)
    print(f"{args.split} accuracy: {acc:.4f}")
    return 0


def cmd_profile(args) -> int:
    spec = _build_spec(args)
    report = flops.count_flops(spec)
    text = report.to_csv()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote report to {args.out}")
    else:
        sys.stdout.write(text)
    if args.baseline_arch:
        base = _build_spec(args, arch=args.baseline_arch,
                           variant=args.baseline_variant, bands=args.baseline_bands)
        reduction = flops.flops_reduction(base, spec)
        print(f"reduction vs {args.baseline_arch}: {reduction:.1f}%")
    return 0


def _read_sweep_rows(path):
    rows = {}
    if not os.path.exists(path):
        return rows
    with open(path, newline="") as f:
        lines = [l for l in f if not l.startswith("#")]
    for row in csv.DictReader(lines):
        key = (row["task"], row["arch"], row["variant"], row["bands"], row["K"])
        rows[key] = row
    return rows


def _write_sweep_rows(path, rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        f.write(f"# schema: {SWEEP_SCHEMA}\n")
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for key in sorted(rows):
            writer.writerow(rows[key])
    os.replace(tmp, path)


def cmd_sweep(args) -> int:
    archs = [a.strip() for a in args.archs.split(",") if a.strip()]
    for a in archs:
        if a not in subband.ARCHS:
            raise UsageError(f"unknown arch {a!r} in --archs")
    try:
        k_list = [int(k) for k in args.k_list.split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --k-list: {exc}") from exc
    if not k_list or any(k < 1 for k in k_list):
        raise UsageError("--k-list must contain integers >= 1")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")

    manifest, store = _load_dataset(args)
    config = _training_config(args)
    source = train_mod.ManifestSource(
        manifest, store, silence_frac=config.silence_frac,
        unknown_frac=config.unknown_frac,
    )
    rows = _read_sweep_rows(args.out)
    for arch in archs:
        for k in k_list:
            variant = args.variant if arch == subband.OVERLAPPED_SUBBAND else None
            bands = args.bands if arch != subband.FULL_BAND else None
            spec = _build_spec(args, arch=arch, k=k, variant=variant, bands=bands)
            key = (args.task, arch, spec.concat_variant or "",
                   str(bands or ""), str(k))
            if key in rows:
                print(f"skip {arch} K={k} (already present)")
                continue
            report = flops.count_flops(spec)
            row = {
                "task": args.task, "arch": arch,
                "variant": spec.concat_variant or "",
                "bands": str(bands or ""), "K": str(k),
                "flops": report.total_flops, "mult": report.total_multiplications,
                "params": report.total_parameters,
            }
            try:
                summary = train_mod.run_trials(spec, source, config, args.trials)
                row["trial_accs"] = ";".join(f"{a:.6f}" for a in summary.accuracies)
                row["mean_acc"] = f"{summary.mean:.6f}"
                row["stddev"] = f"{summary.stddev:.6f}"
                print(f"{arch} K={k}: mean={summary.mean:.4f} "
                      f"stddev={summary.stddev:.4f} flops={report.total_flops}")
            except Exception as exc:  # mark the cell, keep sweeping
                row["trial_accs"] = f"ERROR({exc})"
                row["mean_acc"] = ""
                row["stddev"] = ""
                print(f"{arch} K={k}: FAILED ({exc})", file=sys.stderr)
            rows[key] = row
            _write_sweep_rows(args.out, rows)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        apply_config_file(args, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (train_mod.TrainingDivergedError, train_mod.CheckpointError,
            dsp.WavFormatError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
