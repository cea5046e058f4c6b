"""U-Net backbone with configurable attention insertion.

Structure per level: conv_block = (3x3 conv, pad 1 -> batch norm -> ReLU)
twice. Encoder levels run conv_block, take the skip tensor from the second
ReLU output, then dropout and 2x2 max pooling. The bridge is one conv_block
at the deepest width. Decoder levels run a 2x2 stride-2 transposed conv,
concatenate [skip, upsampled], then a conv_block. The head is a 1x1 conv to
one channel with no activation.

Attention placement "per_conv_and_skip" inserts the configured block after
each of the two ReLUs in every conv_block (encoder, bridge, decoder) and on
each skip tensor before concatenation: 5 sites per level plus 2 at the
bridge. Channel widths double per level from base_channels.

Parameters live in a flat name -> ndarray dict with deterministic naming
(enc0.conv1.weight, bridge.bn2.gamma, dec1.att2.query.bias, ...), so the
backbone name set is identical across attention kinds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import ops
from .attention import AttentionModule, make_attention
from .autodiff import GradGraph, ShapeError, Tensor
from .rng import RngStream

PLACEMENT_NONE = "none"
PLACEMENT_PER_CONV_AND_SKIP = "per_conv_and_skip"


@dataclass
class UNetConfig:
    base_channels: int = 32
    depth: int = 4
    dropout_p: float = 0.25
    attention: str = "none"
    attention_options: dict = field(default_factory=dict)
    placement: str = PLACEMENT_PER_CONV_AND_SKIP
    input_size: tuple[int, int] = (256, 256)

    def validate(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.placement not in (PLACEMENT_NONE, PLACEMENT_PER_CONV_AND_SKIP):
            raise ValueError(f"placement must be '{PLACEMENT_NONE}' or "
                             f"'{PLACEMENT_PER_CONV_AND_SKIP}', got {self.placement!r}")
        h, w = self.input_size
        div = 1 << self.depth
        if h % div or w % div:
            raise ValueError(f"input size {h}x{w} must be divisible by "
                             f"2^depth = {div}")

    def level_channels(self, level: int) -> int:
        return self.base_channels * (1 << level)


def attention_sites(cfg: UNetConfig) -> list[tuple[str, int]]:
    """(site name, channel width) pairs in build order; empty when attention
    is disabled."""
    cfg.validate()
    if cfg.attention == "none" or cfg.placement == PLACEMENT_NONE:
        return []
    sites = []
    for i in range(cfg.depth):
        c = cfg.level_channels(i)
        sites += [(f"enc{i}.att1", c), (f"enc{i}.att2", c), (f"enc{i}.attskip", c)]
    cb = cfg.level_channels(cfg.depth)
    sites += [("bridge.att1", cb), ("bridge.att2", cb)]
    for i in reversed(range(cfg.depth)):
        c = cfg.level_channels(i)
        sites += [(f"dec{i}.att1", c), (f"dec{i}.att2", c)]
    return sites


class UNetModel:
    """Config + attention module + flat parameter dict + batch-norm stats."""

    def __init__(self, cfg: UNetConfig, attention: AttentionModule,
                 params: dict[str, np.ndarray], stats: dict[str, ops.RunningStats]):
        self.cfg = cfg
        self.attention = attention
        self.params = params
        self.stats = stats

    def bind(self, graph: GradGraph) -> dict[str, Tensor]:
        """Register every parameter as a gradient leaf on the graph."""
        return {name: graph.leaf(arr) for name, arr in self.params.items()}


def _conv_weight(name: str, oc: int, ic: int, k: int, rng: RngStream) -> np.ndarray:
    std = np.sqrt(2.0 / (ic * k * k))
    return rng.child(name).normal((oc, ic, k, k)) * std


def build_unet(cfg: UNetConfig, rng: RngStream) -> UNetModel:
    """Deterministically initialize a model: conv weights from per-name
    child streams (zero-mean normals scaled by sqrt(2/fan_in)), zero biases,
    unit-gamma/zero-beta batch norms with identity running stats."""
    cfg.validate()
    attention = make_attention(cfg.attention, **cfg.attention_options)
    params: dict[str, np.ndarray] = {}
    stats: dict[str, ops.RunningStats] = {}

    def add_conv(name: str, oc: int, ic: int, k: int):
        params[f"{name}.weight"] = _conv_weight(f"{name}.weight", oc, ic, k, rng)
        params[f"{name}.bias"] = np.zeros((1, oc, 1, 1))

    def add_bn(name: str, c: int):
        params[f"{name}.gamma"] = np.ones((1, c, 1, 1))
        params[f"{name}.beta"] = np.zeros((1, c, 1, 1))
        st = ops.RunningStats(c)
        st.init_identity()
        stats[name] = st

    def add_block(name: str, ic: int, oc: int):
        add_conv(f"{name}.conv1", oc, ic, 3)
        add_bn(f"{name}.bn1", oc)
        add_conv(f"{name}.conv2", oc, oc, 3)
        add_bn(f"{name}.bn2", oc)

    ic = 1
    for i in range(cfg.depth):
        oc = cfg.level_channels(i)
        add_block(f"enc{i}", ic, oc)
        ic = oc
    add_block("bridge", ic, cfg.level_channels(cfg.depth))
    for i in reversed(range(cfg.depth)):
        oc = cfg.level_channels(i)
        up_in = cfg.level_channels(i + 1)
        # transposed-conv weight layout is (in, out, kh, kw)
        params[f"dec{i}.up.weight"] = (
            rng.child(f"dec{i}.up.weight").normal((up_in, oc, 2, 2))
            * np.sqrt(2.0 / (up_in * 4)))
        params[f"dec{i}.up.bias"] = np.zeros((1, oc, 1, 1))
        add_block(f"dec{i}", 2 * oc, oc)
    add_conv("head", 1, cfg.base_channels, 1)

    for site, c in attention_sites(cfg):
        for short, arr in attention.init_params(c, rng.child(site)).items():
            params[f"{site}.{short}"] = arr

    return UNetModel(cfg, attention, params, stats)


def unet_forward(model: UNetModel, x: Tensor, mode: str,
                 rng: RngStream | None = None,
                 params: Mapping[str, Tensor] | None = None,
                 update_stats: bool | None = None) -> Tensor:
    """Run the network. Train mode needs an RngStream for dropout (when
    dropout_p > 0) and by default folds batch statistics into the running
    stats; pass a params mapping of graph-bound Tensors to make the output
    differentiable with respect to the parameters."""
    cfg = model.cfg
    n, c, h, w = x.shape
    if c != 1 or (h, w) != tuple(cfg.input_size):
        raise ShapeError(f"expected input (n, 1, {cfg.input_size[0]}, "
                         f"{cfg.input_size[1]}), got {x.shape}")
    if update_stats is None:
        update_stats = mode == ops.TRAIN
    if mode == ops.TRAIN and cfg.dropout_p > 0.0 and rng is None:
        raise ValueError("train mode with dropout_p > 0 needs an RngStream")

    active_sites = {name for name, _ in attention_sites(cfg)}
    shapes_cache: dict[int, tuple[str, ...]] = {}

    def P(name: str) -> Tensor:
        if params is not None:
            return params[name]
        return Tensor(model.params[name])

    def attend(site: str, t: Tensor) -> Tensor:
        if site not in active_sites:
            return t
        ch = t.shape[1]
        if ch not in shapes_cache:
            shapes_cache[ch] = tuple(model.attention.param_shapes(ch))
        site_params = {short: P(f"{site}.{short}") for short in shapes_cache[ch]}
        return model.attention.forward(t, site_params)

    def conv_block(t: Tensor, name: str) -> Tensor:
        t = ops.conv2d(t, P(f"{name}.conv1.weight"), P(f"{name}.conv1.bias"), padding=1)
        t = ops.batch_norm2d(t, P(f"{name}.bn1.gamma"), P(f"{name}.bn1.beta"),
                             model.stats[f"{name}.bn1"], mode, update_stats=update_stats)
        t = attend(f"{name}.att1", ops.relu(t))
        t = ops.conv2d(t, P(f"{name}.conv2.weight"), P(f"{name}.conv2.bias"), padding=1)
        t = ops.batch_norm2d(t, P(f"{name}.bn2.gamma"), P(f"{name}.bn2.beta"),
                             model.stats[f"{name}.bn2"], mode, update_stats=update_stats)
        return attend(f"{name}.att2", ops.relu(t))

    skips: list[Tensor] = []
    t = x
    for i in range(cfg.depth):
        t = conv_block(t, f"enc{i}")
        skips.append(attend(f"enc{i}.attskip", t))
        drop_rng = rng.child(f"enc{i}.dropout") if (
            mode == ops.TRAIN and cfg.dropout_p > 0.0) else None
        t = ops.dropout(t, cfg.dropout_p, mode, drop_rng)
        t = ops.max_pool2(t)
    t = conv_block(t, "bridge")
    for i in reversed(range(cfg.depth)):
        t = ops.conv_transpose2d(t, P(f"dec{i}.up.weight"), P(f"dec{i}.up.bias"),
                                 stride=2)
        t = ops.concat_channels([skips[i], t])
        t = conv_block(t, f"dec{i}")
    return ops.conv2d(t, P("head.weight"), P("head.bias"))


def model_param_count(model: UNetModel) -> tuple[int, int]:
    """(total learnable scalars, share belonging to attention sites)."""
    total = sum(int(a.size) for a in model.params.values())
    overhead = sum(int(a.size) for name, a in model.params.items()
                   if ".att" in name)
    return total, overhead
