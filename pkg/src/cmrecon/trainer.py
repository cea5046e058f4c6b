"""Training loop: AdamW on mean-squared-error, deterministic end to end.

Shuffling and dropout draw from labeled child streams keyed by epoch and
global step, so a run resumed from a checkpoint at step s replays exactly
the trajectory the uninterrupted run would have taken. Weight decay is
decoupled: parameters shrink by lr*wd before the bias-corrected Adam update
touches them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import GradGraph, Tensor
from .kspace import Dataset
from .metrics import MetricsConfig, MetricsReport, aggregate, evaluate_pair
from .rng import RngStream
from .tenfile import load_ten, save_ten
from .unet import (UNetConfig, UNetModel, build_unet, model_param_count,
                   unet_forward)

CHECKPOINT_FORMAT = "cmrecon-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 2
    epochs: int = 30
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0  # epochs between held-out evals; 0 disables

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError(f"batch_size and epochs must be >= 1, got "
                             f"{self.batch_size}, {self.epochs}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got "
                             f"{self.adam_beta1}, {self.adam_beta2}")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.seed < 0 or self.eval_every < 0:
            raise ValueError(f"seed and eval_every must be >= 0, got "
                             f"{self.seed}, {self.eval_every}")


@dataclass
class OptimizerState:
    m: dict            # first moments, keyed like params
    v: dict            # second moments
    step: int = 0


def init_opt_state(params: dict) -> OptimizerState:
    return OptimizerState(m={k: np.zeros_like(p) for k, p in params.items()},
                          v={k: np.zeros_like(p) for k, p in params.items()},
                          step=0)


def adamw_step(params: dict, grads: dict, state: OptimizerState,
               cfg: TrainConfig) -> OptimizerState:
    """One in-place AdamW update over every parameter. Decay first, then the
    bias-corrected Adam step; moments update with the raw gradient."""
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter {name!r} shape {params[name].shape}")
    t = state.step + 1
    lr, wd = cfg.learning_rate, cfg.weight_decay
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        p *= 1.0 - lr * wd
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step = t
    return state


@dataclass
class TrainResult:
    model: UNetModel
    state: OptimizerState
    loss_curve: list          # (global step, loss) pairs for the steps run
    eval_reports: list        # (epoch, MetricsReport) pairs when evaluated


def _batch_tensors(ds: Dataset, idx: np.ndarray) -> tuple[Tensor, Tensor]:
    return Tensor(ds.inputs[idx]), Tensor(ds.targets[idx])


def train(model: UNetModel, dataset: Dataset, cfg: TrainConfig,
          eval_dataset: Dataset | None = None,
          metrics_cfg: MetricsConfig | None = None,
          start_state: OptimizerState | None = None) -> TrainResult:
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    if start_state is not None and set(start_state.m) != set(model.params):
        raise ValueError("optimizer state keys do not match model parameters")
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    state = start_state if start_state is not None else init_opt_state(model.params)
    if state.step > total_steps:
        raise ValueError(f"checkpoint step {state.step} exceeds configured "
                         f"total of {total_steps} steps")
    root = RngStream(cfg.seed, "train")
    curve = []
    evals = []
    perm = None
    perm_epoch = -1
    for step in range(state.step, total_steps):
        epoch = step // steps_per_epoch
        pos = step % steps_per_epoch
        if epoch != perm_epoch:
            perm = root.child(f"shuffle.epoch{epoch}").permutation(n)
            perm_epoch = epoch
        idx = perm[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
        x, y = _batch_tensors(dataset, idx)
        graph = GradGraph()
        bound = model.bind(graph)
        pred = unet_forward(model, x, ops.TRAIN,
                            rng=root.child(f"dropout.step{step}"), params=bound)
        d = ops.sub(pred, y)
        loss = ops.tmean(ops.mul(d, d))
        lval = float(loss.data.reshape(()))
        if not math.isfinite(lval):
            raise FloatingPointError(f"loss diverged ({lval}) at step {step}")
        grads = graph.backward(loss)
        adamw_step(model.params, {k: grads[t] for k, t in bound.items()},
                   state, cfg)
        curve.append((step, lval))
        end_of_epoch = pos == steps_per_epoch - 1
        if (end_of_epoch and eval_dataset is not None and cfg.eval_every > 0
                and (epoch + 1) % cfg.eval_every == 0):
            evals.append((epoch, evaluate(model, eval_dataset, metrics_cfg)))
    return TrainResult(model=model, state=state, loss_curve=curve,
                       eval_reports=evals)


def write_loss_csv(curve, path):
    lines = ["step,loss"] + [f"{s},{v!r}" for s, v in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def _row_ids(dataset: Dataset) -> list[str]:
    items = dataset.manifest.get("items") if dataset.manifest else None
    if items and len(items) == len(dataset):
        prefix = dataset.manifest.get("prefix", "item")
        return [f"{prefix}_{it['index']:04d}" for it in items]
    return [f"{i:04d}" for i in range(len(dataset))]


def evaluate(model: UNetModel, dataset: Dataset,
             metrics_cfg: MetricsConfig | None = None) -> MetricsReport:
    """Per-image metrics of the model output against the targets, with the
    zero-filled inputs scored the same way and attached as the baseline."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    mcfg = metrics_cfg or MetricsConfig()
    ids = _row_ids(dataset)
    rows = []
    base_rows = []
    for i in range(len(dataset)):
        x = Tensor(dataset.inputs[i:i + 1])
        y = dataset.targets[i:i + 1]
        pred = unet_forward(model, x, ops.EVAL)
        rows.append(evaluate_pair(ids[i], pred.data, y, mcfg))
        base_rows.append(evaluate_pair(ids[i], dataset.inputs[i:i + 1], y, mcfg))
    total, overhead = model_param_count(model)
    report = aggregate(rows, method=model.cfg.attention, overhead=overhead,
                       total_params=total, ssim_mode=mcfg.ssim_mode)
    report.baseline = aggregate(base_rows, method="zero_filled", overhead=0,
                                ssim_mode=mcfg.ssim_mode)
    return report


def _json_dump(path: Path, obj):
    import json
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_checkpoint(model: UNetModel, state: OptimizerState, path) -> None:
    """Write a checkpoint directory: manifest.json plus one .ten file per
    parameter, optimizer moment, and running-stat array."""
    out = Path(path)
    for sub in ("params", "opt_m", "opt_v", "stats"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if set(state.m) != set(model.params) or set(state.v) != set(model.params):
        raise ValueError("optimizer state keys do not match model parameters")
    for name, p in model.params.items():
        save_ten(out / "params" / f"{name}.ten", p)
        save_ten(out / "opt_m" / f"{name}.ten", state.m[name])
        save_ten(out / "opt_v" / f"{name}.ten", state.v[name])
    stats_meta = {}
    for name, rs in model.stats.items():
        save_ten(out / "stats" / f"{name}.mean.ten", rs.mean)
        save_ten(out / "stats" / f"{name}.var.ten", rs.var)
        stats_meta[name] = {"channels": rs.channels,
                            "initialized": bool(rs.initialized)}
    cfg = asdict(model.cfg)
    cfg["input_size"] = list(cfg["input_size"])
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "step": state.step,
        "params": sorted(model.params),
        "stats": stats_meta,
    }
    _json_dump(out / "manifest.json", manifest)


def load_checkpoint(path) -> tuple[UNetModel, OptimizerState]:
    import json
    d = Path(path)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest.json in {d}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint manifest: format="
                         f"{manifest.get('format')!r}")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version "
                         f"{manifest.get('version')!r}, expected "
                         f"{CHECKPOINT_VERSION}")
    raw = dict(manifest["config"])
    raw["input_size"] = tuple(raw["input_size"])
    raw["attention_options"] = dict(raw.get("attention_options") or {})
    cfg = UNetConfig(**raw)
    model = build_unet(cfg, RngStream(0, "checkpoint-template"))
    names = manifest["params"]
    if set(names) != set(model.params):
        raise ValueError("checkpoint parameter names do not match the "
                         "architecture built from its config")
    m, v = {}, {}
    for name in names:
        arr = load_ten(d / "params" / f"{name}.ten")
        if arr.shape != model.params[name].shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape "
                             f"{arr.shape}, expected {model.params[name].shape}")
        model.params[name] = arr
        m[name] = load_ten(d / "opt_m" / f"{name}.ten")
        v[name] = load_ten(d / "opt_v" / f"{name}.ten")
    for name, meta in manifest["stats"].items():
        if name not in model.stats:
            raise ValueError(f"checkpoint stats entry {name!r} does not match "
                             "the architecture")
        rs = model.stats[name]
        rs.mean = load_ten(d / "stats" / f"{name}.mean.ten")
        rs.var = load_ten(d / "stats" / f"{name}.var.ten")
        rs.initialized = bool(meta["initialized"])
    return model, OptimizerState(m=m, v=v, step=int(manifest["step"]))
