"""Benchmark harness: same backbone, same data, one row per attention kind.

Every kind x seed cell builds a fresh model, trains it, and scores the held
out set; per-kind rows take the elementwise median over seeds and are ranked
by SSIM (descending). The backbone weight init stream depends only on the
seed, so at a fixed seed every kind starts from identical backbone weights
and sees identical batch order; only the attention inserts differ.

A run that raises is recorded as a failed row and the bench continues.
Output files carry no timestamps, so a rerun with the same spec is
byte-identical.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import Tensor
from .kspace import Dataset, load_dataset
from .metrics import MetricsConfig, aggregate, evaluate_pair, fmt6
from .rng import RngStream
from .trainer import TrainConfig, evaluate, train
from .unet import UNetConfig, UNetModel, build_unet, model_param_count, unet_forward


@dataclass
class BenchSpec:
    kinds: list
    unet: UNetConfig
    train: TrainConfig
    seeds: list
    train_dir: str
    test_dir: str
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    attention_options: dict = field(default_factory=dict)  # kind -> options

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds: {self.seeds}")
        kinds = list(self.kinds)
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"duplicate kinds: {kinds}")
        if "none" not in kinds:
            kinds.insert(0, "none")  # the baseline row always runs
        if not kinds:
            raise ValueError("kinds must be nonempty")
        self.kinds = kinds


@dataclass
class RunRecord:
    method: str
    seed: int
    status: str            # "ok" | "failed"
    psnr: float
    mse: float
    ssim: float
    error: str = ""


@dataclass
class KindRow:
    method: str
    parameters: int
    overhead: int
    psnr: float
    mse: float
    ssim: float
    status: str


@dataclass
class BenchResult:
    rows: list             # KindRow, sorted by ssim descending
    runs: list             # every RunRecord in execution order
    zero_filled: dict      # held-out metrics of the inputs themselves
    kinds: list
    seeds: list
    train_items: int
    test_items: int
    ssim_mode: str = "global"


def _zero_filled_metrics(ds: Dataset, mcfg: MetricsConfig) -> dict:
    rows = [evaluate_pair(str(i), ds.inputs[i:i + 1], ds.targets[i:i + 1], mcfg)
            for i in range(len(ds))]
    rep = aggregate(rows, method="zero_filled")
    return {"psnr": rep.mean_psnr, "mse": rep.mean_mse, "ssim": rep.mean_ssim,
            "psnr_inf_count": rep.psnr_inf_count}


def run_bench(spec: BenchSpec, progress: bool = True) -> BenchResult:
    train_ds = load_dataset(spec.train_dir)
    test_ds = load_dataset(spec.test_dir)
    zf = _zero_filled_metrics(test_ds, spec.metrics)
    runs = []
    rows = []
    for kind in spec.kinds:
        per_seed = []
        params_total = 0
        overhead = 0
        for seed in spec.seeds:
            if progress:
                print(f"[bench] {kind} seed {seed}: training "
                      f"{spec.train.epochs} epochs", file=sys.stderr, flush=True)
            try:
                ucfg = replace(spec.unet, attention=kind,
                               attention_options=dict(
                                   spec.attention_options.get(kind, {})))
                model = build_unet(ucfg, RngStream(seed, "init"))
                params_total, overhead = model_param_count(model)
                tcfg = replace(spec.train, seed=seed)
                train(model, train_ds, tcfg)
                rep = evaluate(model, test_ds, spec.metrics)
            except Exception as e:  # record and move on; bench must finish
                runs.append(RunRecord(kind, seed, "failed", float("nan"),
                                      float("nan"), float("nan"),
                                      f"{type(e).__name__}: {e}"))
                if progress:
                    print(f"[bench] {kind} seed {seed} failed: {e}",
                          file=sys.stderr, flush=True)
                continue
            rec = RunRecord(kind, seed, "ok", rep.mean_psnr, rep.mean_mse,
                            rep.mean_ssim)
            runs.append(rec)
            per_seed.append(rec)
        if per_seed:
            rows.append(KindRow(
                method=kind, parameters=params_total, overhead=overhead,
                psnr=float(np.median([r.psnr for r in per_seed])),
                mse=float(np.median([r.mse for r in per_seed])),
                ssim=float(np.median([r.ssim for r in per_seed])),
                status="ok"))
        else:
            rows.append(KindRow(method=kind, parameters=params_total,
                                overhead=overhead, psnr=float("nan"),
                                mse=float("nan"), ssim=float("nan"),
                                status="failed"))
    rows.sort(key=lambda r: (r.status != "ok", -r.ssim if r.status == "ok"
                             else 0.0, r.method))
    return BenchResult(rows=rows, runs=runs, zero_filled=zf, kinds=spec.kinds,
                       seeds=list(spec.seeds), train_items=len(train_ds),
                       test_items=len(test_ds), ssim_mode=spec.metrics.ssim_mode)


def write_bench_csv(result: BenchResult, path) -> None:
    lines = ["method,parameters,computational_overhead,psnr,mse,ssim"]
    for r in result.rows:
        lines.append(f"{r.method},{r.parameters},{r.overhead},"
                     f"{fmt6(r.psnr)},{fmt6(r.mse)},{fmt6(r.ssim)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_runs_csv(result: BenchResult, path) -> None:
    lines = ["method,seed,status,psnr,mse,ssim,error"]
    for r in result.runs:
        err = r.error.replace(",", ";").replace("\n", " ")
        lines.append(f"{r.method},{r.seed},{r.status},{fmt6(r.psnr)},"
                     f"{fmt6(r.mse)},{fmt6(r.ssim)},{err}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(result: BenchResult, path) -> None:
    doc = {
        "kinds": result.kinds,
        "seeds": result.seeds,
        "train_items": result.train_items,
        "test_items": result.test_items,
        "ssim_mode": result.ssim_mode,
        "zero_filled": result.zero_filled,
        "rows": [vars(r) for r in result.rows],
        "runs": [vars(r) for r in result.runs],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_pgm(path, img: np.ndarray) -> None:
    a = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + a.tobytes())


def export_error_maps(model: UNetModel, dataset: Dataset, out_dir) -> list:
    """Write prediction, target, and max-normalized absolute-error PGMs per
    image; returns the raw (pre-normalization) mean absolute error of each."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw_means = []
    for i in range(len(dataset)):
        pred = unet_forward(model, Tensor(dataset.inputs[i:i + 1]),
                            ops.EVAL).data[0, 0]
        target = dataset.targets[i, 0]
        err = np.abs(pred - target)
        raw_means.append(float(err.mean()))
        mx = err.max()
        norm = err / mx if mx > 0 else np.zeros_like(err)
        _write_pgm(out / f"{i:03d}_pred.pgm", np.clip(pred, 0.0, 1.0))
        _write_pgm(out / f"{i:03d}_target.pgm", target)
        _write_pgm(out / f"{i:03d}_error.pgm", norm)
    return raw_means
