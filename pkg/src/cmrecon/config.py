"""Experiment configuration: one JSON document drives every command.

Resolution order: package defaults, then the config file, then command-line
flags. Unknown sections or keys are rejected so typos fail loudly instead of
silently running the defaults. Every command that produces files writes the
fully resolved document next to its outputs.

Sections and defaults:
  data:    count 200, size 64, accel 4.0, acs 16, pattern "equispaced", seed 0
  model:   base_channels 8, depth 3, dropout 0.25, attention "none",
           attention_options {}
  train:   learning_rate 0.001, batch_size 2, epochs 30, weight_decay 0.01,
           adam_beta1 0.9, adam_beta2 0.999, adam_eps 1e-8, seed 0,
           eval_every 0
  metrics: peakval 1.0, ssim_c1 null, ssim_c2 null, ssim_mode "global",
           window 7, sigma 1.5
  bench:   kinds ["none", "cmratt"], seeds [0, 1, 2], test_count 50

Held-out sets draw phantom seeds offset by TEST_SEED_OFFSET from data.seed so
they never overlap the training phantoms.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .kspace import PhantomSpec, gen_dataset
from .metrics import MetricsConfig
from .rng import RngStream
from .trainer import TrainConfig
from .unet import UNetConfig

TEST_SEED_OFFSET = 1_000_000

_DEFAULTS = {
    "data": {"count": 200, "size": 64, "accel": 4.0, "acs": 16,
             "pattern": "equispaced", "seed": 0},
    "model": {"base_channels": 8, "depth": 3, "dropout": 0.25,
              "attention": "none", "attention_options": {}},
    "train": {"learning_rate": 0.001, "batch_size": 2, "epochs": 30,
              "weight_decay": 0.01, "adam_beta1": 0.9, "adam_beta2": 0.999,
              "adam_eps": 1e-8, "seed": 0, "eval_every": 0},
    "metrics": {"peakval": 1.0, "ssim_c1": None, "ssim_c2": None,
                "ssim_mode": "global", "window": 7, "sigma": 1.5},
    "bench": {"kinds": ["none", "cmratt"], "seeds": [0, 1, 2],
              "test_count": 50},
}

_INT_KEYS = {("data", "count"), ("data", "size"), ("data", "acs"),
             ("data", "seed"), ("model", "base_channels"), ("model", "depth"),
             ("train", "batch_size"), ("train", "epochs"), ("train", "seed"),
             ("train", "eval_every"), ("metrics", "window"),
             ("bench", "test_count")}
_NUM_KEYS = {("data", "accel"), ("model", "dropout"),
             ("train", "learning_rate"), ("train", "weight_decay"),
             ("train", "adam_beta1"), ("train", "adam_beta2"),
             ("train", "adam_eps"), ("metrics", "peakval"),
             ("metrics", "sigma")}
_STR_KEYS = {("data", "pattern"), ("model", "attention"),
             ("metrics", "ssim_mode")}


def _check_value(section: str, key: str, value):
    where = f"{section}.{key}"
    if (section, key) in _INT_KEYS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValueError(f"config {where} must be an integer, got {value!r}")
    elif (section, key) in _NUM_KEYS:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValueError(f"config {where} must be a number, got {value!r}")
    elif (section, key) in _STR_KEYS:
        if not isinstance(value, str):
            raise ValueError(f"config {where} must be a string, got {value!r}")
    elif key in ("ssim_c1", "ssim_c2"):
        if value is not None and not isinstance(value, (int, float)):
            raise ValueError(f"config {where} must be null or a number, "
                             f"got {value!r}")
    elif key == "attention_options":
        if not isinstance(value, dict):
            raise ValueError(f"config {where} must be an object, got {value!r}")
    elif key in ("kinds",):
        if (not isinstance(value, list)
                or not all(isinstance(v, str) for v in value)):
            raise ValueError(f"config {where} must be a list of strings, "
                             f"got {value!r}")
    elif key in ("seeds",):
        if (not isinstance(value, list)
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in value)):
            raise ValueError(f"config {where} must be a list of integers, "
                             f"got {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    model: dict
    train: dict
    metrics: dict
    bench: dict

    def resolved(self) -> dict:
        return copy.deepcopy({"data": self.data, "model": self.model,
                              "train": self.train, "metrics": self.metrics,
                              "bench": self.bench})


def _merge(base: dict, doc: dict, origin: str) -> None:
    if not isinstance(doc, dict):
        raise ValueError(f"{origin} must be a JSON object of sections")
    for section, body in doc.items():
        if section not in base:
            raise ValueError(f"unknown config section {section!r} in {origin} "
                             f"(known: {', '.join(sorted(base))})")
        if not isinstance(body, dict):
            raise ValueError(f"config section {section!r} must be an object")
        for key, value in body.items():
            if key not in base[section]:
                raise ValueError(
                    f"unknown config key '{section}.{key}' in {origin} "
                    f"(known: {', '.join(sorted(base[section]))})")
            _check_value(section, key, value)
            base[section][key] = value


def load_experiment_config(path=None, overrides: dict | None = None
                           ) -> ExperimentConfig:
    """Defaults, overlaid with the JSON file at `path` (if given), overlaid
    with `overrides` ({section: {key: value}}; None values are skipped)."""
    base = copy.deepcopy(_DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ValueError(f"config file {p} is not valid JSON: {e}") from e
        _merge(base, doc, str(p))
    if overrides:
        pruned = {sec: {k: v for k, v in body.items() if v is not None}
                  for sec, body in overrides.items()}
        _merge(base, {s: b for s, b in pruned.items() if b}, "command line")
    return ExperimentConfig(**base)


def to_phantom_spec(cfg: ExperimentConfig, seed_offset: int = 0) -> PhantomSpec:
    return PhantomSpec(size=cfg.data["size"],
                       seed=cfg.data["seed"] + seed_offset)


def to_unet_config(cfg: ExperimentConfig, size: int | None = None) -> UNetConfig:
    size = cfg.data["size"] if size is None else size
    return UNetConfig(base_channels=cfg.model["base_channels"],
                      depth=cfg.model["depth"],
                      dropout_p=float(cfg.model["dropout"]),
                      attention=cfg.model["attention"],
                      attention_options=dict(cfg.model["attention_options"]),
                      input_size=(size, size))


def to_train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(learning_rate=float(t["learning_rate"]),
                       batch_size=t["batch_size"], epochs=t["epochs"],
                       weight_decay=float(t["weight_decay"]),
                       adam_beta1=float(t["adam_beta1"]),
                       adam_beta2=float(t["adam_beta2"]),
                       adam_eps=float(t["adam_eps"]), seed=t["seed"],
                       eval_every=t["eval_every"])


def to_metrics_config(cfg: ExperimentConfig) -> MetricsConfig:
    m = cfg.metrics
    c1 = None if m["ssim_c1"] is None else float(m["ssim_c1"])
    c2 = None if m["ssim_c2"] is None else float(m["ssim_c2"])
    return MetricsConfig(peakval=float(m["peakval"]), ssim_c1=c1, ssim_c2=c2,
                         ssim_mode=m["ssim_mode"], window=m["window"],
                         sigma=float(m["sigma"]))


def materialize_dataset(cfg: ExperimentConfig, out_dir, count: int | None = None,
                        seed_offset: int = 0, prefix: str = "item") -> dict:
    """Generate a dataset directory from the data section. `seed_offset`
    shifts both the phantom seeds and the mask stream, so offset runs are
    disjoint; regeneration with the same arguments is byte-identical."""
    d = cfg.data
    n = d["count"] if count is None else count
    return gen_dataset(n, to_phantom_spec(cfg, seed_offset), float(d["accel"]),
                       out_dir, RngStream(d["seed"] + seed_offset, "gen"),
                       pattern=d["pattern"], acs_lines=d["acs"], prefix=prefix)


def write_resolved_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True)
                          + "\n")
