"""Command-line entry points.

    cmrecon gen         write a paired input/target dataset
    cmrecon train       train a model on a generated dataset
    cmrecon eval        score a checkpoint on a dataset
    cmrecon bench       train and rank several attention kinds
    cmrecon params      print parameter counts for an attention kind
    cmrecon export-maps write prediction/target/error images for a checkpoint

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
Every file-producing command writes its fully resolved config next to its
outputs.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import (BenchSpec, export_error_maps, run_bench, write_bench_csv,
                    write_runs_csv, write_summary_json)
from .config import (TEST_SEED_OFFSET, load_experiment_config,
                     materialize_dataset, to_metrics_config, to_train_config,
                     to_unet_config, write_resolved_config)
from .kspace import load_dataset
from .metrics import write_aggregate_csv, write_image_csv
from .rng import RngStream
from .trainer import (evaluate, load_checkpoint, save_checkpoint, train,
                      write_loss_csv)
from .unet import build_unet, model_param_count


def _load_cfg(args, **section_overrides):
    overrides = {}
    for section, pairs in section_overrides.items():
        overrides[section] = pairs
    return load_experiment_config(getattr(args, "config", None), overrides)


def cmd_gen(args) -> int:
    cfg = _load_cfg(args, data={"count": args.count, "size": args.size,
                                "accel": args.accel, "acs": args.acs,
                                "pattern": args.pattern, "seed": args.seed})
    out = Path(args.out)
    manifest = materialize_dataset(cfg, out)
    write_resolved_config(cfg, out / "resolved_config.json")
    print(f"wrote {manifest['count']} pairs to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args, train={"seed": args.seed, "epochs": args.epochs},
                    model={"attention": args.attention})
    ds = load_dataset(args.data)
    ucfg = to_unet_config(cfg, size=ds.manifest["size"])
    tcfg = to_train_config(cfg)
    model = build_unet(ucfg, RngStream(tcfg.seed, "init"))
    result = train(model, ds, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, result.state, out / "checkpoint")
    write_loss_csv(result.loss_curve, out / "loss.csv")
    write_resolved_config(cfg, out / "resolved_config.json")
    print(f"trained {ucfg.attention} for {tcfg.epochs} epochs, "
          f"final loss {result.loss_curve[-1][1]:.6f}, "
          f"checkpoint in {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    report = evaluate(model, ds, to_metrics_config(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image_csv(report, out / "metrics.csv")
    write_aggregate_csv([report, report.baseline], out / "aggregate.csv")
    write_resolved_config(cfg, out / "resolved_config.json")
    print(f"method={report.method} ssim={report.mean_ssim:.6f} "
          f"psnr={report.mean_psnr:.6f} mse={report.mean_mse:.6f} "
          f"(zero-filled ssim={report.baseline.mean_ssim:.6f})")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args, train={"seed": args.seed, "epochs": args.epochs},
                    data={"accel": args.accel})
    out = Path(args.out)
    if out.suffix != ".csv":
        raise ValueError(f"bench --out must be a .csv path, got {out}")
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    if args.train_data and args.test_data:
        train_dir, test_dir = Path(args.train_data), Path(args.test_data)
    elif args.train_data or args.test_data:
        raise ValueError("--train-data and --test-data must be given together")
    else:
        train_dir = Path(f"{stem}_data") / "train"
        test_dir = Path(f"{stem}_data") / "test"
        materialize_dataset(cfg, train_dir, prefix="train")
        materialize_dataset(cfg, test_dir, count=cfg.bench["test_count"],
                            seed_offset=TEST_SEED_OFFSET, prefix="test")
    spec = BenchSpec(kinds=list(cfg.bench["kinds"]),
                     unet=to_unet_config(cfg), train=to_train_config(cfg),
                     seeds=list(cfg.bench["seeds"]), train_dir=str(train_dir),
                     test_dir=str(test_dir), metrics=to_metrics_config(cfg),
                     attention_options={})
    result = run_bench(spec)
    write_bench_csv(result, out)
    write_runs_csv(result, f"{stem}_runs.csv")
    write_summary_json(result, f"{stem}_summary.json")
    write_resolved_config(cfg, f"{stem}_config.json")
    print(out.read_text(), end="")
    return 0


def cmd_params(args) -> int:
    cfg = _load_cfg(args, model={"attention": args.attention})
    ucfg = to_unet_config(cfg)
    model = build_unet(ucfg, RngStream(0, "init"))
    total, overhead = model_param_count(model)
    print(f"attention={ucfg.attention} total_params={total} "
          f"attention_overhead={overhead}")
    return 0


def cmd_export_maps(args) -> int:
    cfg = _load_cfg(args)
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    out = Path(args.out)
    means = export_error_maps(model, ds, out)
    write_resolved_config(cfg, out / "resolved_config.json")
    print(f"wrote {3 * len(means)} images for {len(means)} items to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(
        prog="cmrecon", formatter_class=fmt,
        description="Undersampled MRI reconstruction experiments: synthetic "
                    "k-space datasets, attention-equipped U-Nets, and "
                    "benchmark tables.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, formatter_class=fmt)
        sp.add_argument("--config", default=None,
                        help="JSON experiment config; flags override it")
        sp.set_defaults(func=fn)
        return sp

    g = add("gen", cmd_gen, "generate a paired input/target dataset")
    g.add_argument("--count", type=int, default=None, help="number of pairs")
    g.add_argument("--size", type=int, default=None, help="image side (power of two)")
    g.add_argument("--accel", type=float, default=None, help="acceleration factor R")
    g.add_argument("--acs", type=int, default=None, help="fully sampled center lines")
    g.add_argument("--pattern", choices=["equispaced", "random"], default=None,
                   help="row-sampling pattern")
    g.add_argument("--seed", type=int, default=None, help="phantom/mask seed")
    g.add_argument("--out", required=True, help="output dataset directory")

    t = add("train", cmd_train, "train a model on a generated dataset")
    t.add_argument("--data", required=True, help="dataset directory from gen")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, default=None, help="training seed")
    t.add_argument("--epochs", type=int, default=None, help="training epochs")
    t.add_argument("--attention", default=None, help="attention kind")

    e = add("eval", cmd_eval, "score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True, help="checkpoint directory")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="output directory")

    b = add("bench", cmd_bench, "train and rank attention kinds")
    b.add_argument("--out", required=True, help="ranked table .csv path")
    b.add_argument("--train-data", default=None,
                   help="reuse an existing training dataset directory")
    b.add_argument("--test-data", default=None,
                   help="reuse an existing held-out dataset directory")
    b.add_argument("--seed", type=int, default=None, help="training seed template")
    b.add_argument("--epochs", type=int, default=None, help="training epochs")
    b.add_argument("--accel", type=float, default=None, help="acceleration factor R")

    pa = add("params", cmd_params, "print parameter counts")
    pa.add_argument("--attention", default=None, help="attention kind")

    m = add("export-maps", cmd_export_maps,
            "write prediction/target/error images for a checkpoint")
    m.add_argument("--checkpoint", required=True, help="checkpoint directory")
    m.add_argument("--data", required=True, help="dataset directory")
    m.add_argument("--out", required=True, help="output image directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
