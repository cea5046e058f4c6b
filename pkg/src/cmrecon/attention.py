"""Attention blocks: feature-map -> feature-map transforms with countable
parameters.

All blocks share one calling convention: a module object describes its
parameter shapes for a given channel width, initializes them from a named
RngStream, and applies a differentiable forward given the input tensor and a
mapping of parameter Tensors. Parameter-free blocks (simam, gct, l2norm)
have empty shape maps and report zero parameters at any width.

The composite block `cmratt` chains simam, per-item L2 normalization, and a
gated residual product block ("hadamard") in that order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ops
from .autodiff import ShapeError, Tensor
from .rng import RngStream

SIMAM_EXACT = "exact_leave_one_out"
SIMAM_APPROX = "all_inclusive_approx"


@dataclass(frozen=True)
class SimamConfig:
    """Settings for the energy-based parameter-free attention.

    lam regularizes the energy denominator. statistics_mode selects how the
    per-channel mean/variance behind each position's energy are computed:
    exact_leave_one_out excludes the position itself (closed form, no O(N^2)
    loop); all_inclusive_approx includes it (the common practical variant,
    with the sum of squared deviations divided by N-1).
    """

    lam: float = 1e-4
    statistics_mode: str = SIMAM_APPROX

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.statistics_mode not in (SIMAM_EXACT, SIMAM_APPROX):
            raise ValueError(
                f"statistics_mode must be '{SIMAM_EXACT}' or '{SIMAM_APPROX}', "
                f"got {self.statistics_mode!r}")
        if self.lam == 0.0 and self.statistics_mode == SIMAM_EXACT:
            raise ValueError("lam = 0 is only permitted in all_inclusive_approx mode")


def _simam_inverse_energy(x: Tensor, cfg: SimamConfig) -> Tensor:
    """Per-position inverse energy (the sigmoid argument of the gate).

    Works on pre-centered values so that constant channels hit the
    zero-variance branch exactly: their inverse energy is exactly 0.5 and
    their energy exactly 2.
    """
    n_, c_, h, w = x.shape
    n_pos = h * w
    if n_pos < 2:
        raise ShapeError(f"attention energy needs at least 2 positions per "
                         f"channel, got h*w = {n_pos}")
    lam = cfg.lam
    mean = ops.global_avg_pool(x)
    d = ops.add_bc(x, ops.scale(mean, -1.0))
    d2 = ops.mul(d, d)
    s2 = ops.scale(ops.global_avg_pool(d2), float(n_pos))  # sum of squared deviations

    if cfg.statistics_mode == SIMAM_APPROX:
        if lam == 0.0 and float(s2.data.min()) == 0.0:
            raise ValueError("lam = 0 with a constant channel: energy "
                             "denominator would vanish")
        v = ops.scale(s2, 1.0 / (n_pos - 1))
        denom = ops.reciprocal(ops.scale(ops.shift(v, lam), 4.0))
        return ops.shift(ops.mul_bc(d2, denom), 0.5)

    # leave-one-out closed form from whole-channel sums:
    # with m = n_pos - 1, excluding position t gives
    #   mean_t = mean - d_t/m
    #   var_t  = (S2 - d_t^2 * n/m) / m
    #   (x_t - mean_t)^2 = d_t^2 * (n/m)^2
    m = n_pos - 1
    var = ops.scale(ops.add_bc(ops.scale(d2, -(n_pos / m)), s2), 1.0 / m)
    t2 = ops.scale(d2, (n_pos / m) ** 2)
    num = ops.add(t2, ops.shift(ops.scale(var, 2.0), 2.0 * lam))
    return ops.mul(num, ops.reciprocal(ops.scale(ops.shift(var, lam), 4.0)))


def simam_energy(x: Tensor, cfg: SimamConfig | None = None) -> Tensor:
    """Per-position energy map; low energy marks positions that stand out
    from their channel. Constant channels score exactly 2 everywhere."""
    cfg = cfg or SimamConfig()
    return ops.reciprocal(_simam_inverse_energy(x, cfg))


def simam_forward(x: Tensor, cfg: SimamConfig | None = None) -> Tensor:
    """Reweight x by sigmoid(1/energy); parameter-free and differentiable."""
    cfg = cfg or SimamConfig()
    return ops.mul(x, ops.sigmoid(_simam_inverse_energy(x, cfg)))


def l2norm_forward(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each batch item by the reciprocal of its L2 norm over (c,h,w)."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    norm = ops.sqrt(ops.batch_sum(ops.mul(x, x)))
    return ops.mul_bc(x, ops.reciprocal(ops.shift(norm, eps)))


def _check_reduction(channels: int, reduction: int, kind: str):
    if reduction < 1:
        raise ValueError(f"{kind}: reduction must be >= 1, got {reduction}")
    if channels % reduction != 0:
        raise ShapeError(f"{kind}: reduction {reduction} does not divide "
                         f"channel count {channels}")


def _init_conv(name: str, shape: tuple, rng: RngStream) -> np.ndarray:
    if name.endswith(".bias"):
        return np.zeros(shape)
    oc, ic, kh, kw = shape
    std = np.sqrt(2.0 / (ic * kh * kw))
    return rng.child(name).normal(shape) * std


class AttentionModule:
    """Base interface: parameter bookkeeping plus a pure forward."""

    kind = "none"

    def param_shapes(self, channels: int) -> dict[str, tuple]:
        return {}

    def init_params(self, channels: int, rng: RngStream) -> dict[str, np.ndarray]:
        return {name: _init_conv(name, shape, rng)
                for name, shape in self.param_shapes(channels).items()}

    def param_count(self, channels: int) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes(channels).values())

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class NoAttention(AttentionModule):
    kind = "none"

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        return x


class Simam(AttentionModule):
    kind = "simam"

    def __init__(self, lam: float = 1e-4, statistics_mode: str = SIMAM_APPROX):
        self.cfg = SimamConfig(lam=lam, statistics_mode=statistics_mode)

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        return simam_forward(x, self.cfg)

    def describe(self) -> str:
        return f"simam(lam={self.cfg.lam})"


class SqueezeExcite(AttentionModule):
    """Channel gating from globally pooled context through a biased
    two-layer bottleneck."""

    kind = "se"

    def __init__(self, reduction: int = 16):
        self.reduction = reduction

    def param_shapes(self, channels: int) -> dict[str, tuple]:
        _check_reduction(channels, self.reduction, "se")
        cr = channels // self.reduction
        return {
            "fc1.weight": (cr, channels, 1, 1), "fc1.bias": (1, cr, 1, 1),
            "fc2.weight": (channels, cr, 1, 1), "fc2.bias": (1, channels, 1, 1),
        }

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        _check_reduction(x.shape[1], self.reduction, "se")
        s = ops.global_avg_pool(x)
        z = ops.relu(ops.conv2d(s, params["fc1.weight"], params["fc1.bias"]))
        gate = ops.sigmoid(ops.conv2d(z, params["fc2.weight"], params["fc2.bias"]))
        return ops.scale_channels(x, gate)

    def describe(self) -> str:
        return f"se(r={self.reduction})"


class Cbam(AttentionModule):
    """Sequential channel-then-spatial gating; the channel bottleneck is
    shared between average- and max-pooled contexts, and both the bottleneck
    and the spatial convolution are bias-free."""

    kind = "cbam"

    def __init__(self, reduction: int = 16, spatial_kernel: int = 7):
        if spatial_kernel % 2 == 0 or spatial_kernel < 1:
            raise ValueError(f"cbam: spatial_kernel must be odd, got {spatial_kernel}")
        self.reduction = reduction
        self.spatial_kernel = spatial_kernel

    def param_shapes(self, channels: int) -> dict[str, tuple]:
        _check_reduction(channels, self.reduction, "cbam")
        cr = channels // self.reduction
        k = self.spatial_kernel
        return {
            "mlp1.weight": (cr, channels, 1, 1),
            "mlp2.weight": (channels, cr, 1, 1),
            "spatial.weight": (1, 2, k, k),
        }

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        _check_reduction(x.shape[1], self.reduction, "cbam")

        def mlp(t):
            return ops.conv2d(ops.relu(ops.conv2d(t, params["mlp1.weight"])),
                              params["mlp2.weight"])

        cgate = ops.sigmoid(ops.add(mlp(ops.global_avg_pool(x)),
                                    mlp(ops.global_max_pool(x))))
        xc = ops.scale_channels(x, cgate)
        smap = ops.concat_channels([ops.channel_mean_map(xc), ops.channel_max_map(xc)])
        sgate = ops.sigmoid(ops.conv2d(smap, params["spatial.weight"],
                                       padding=(self.spatial_kernel - 1) // 2))
        return ops.mul_bc(xc, sgate)

    def describe(self) -> str:
        return f"cbam(r={self.reduction},k={self.spatial_kernel})"


class Gct(AttentionModule):
    """Parameter-free channel gating: standardize the pooled channel
    contexts within each item and gate by a Gaussian of the z-score."""

    kind = "gct"

    def __init__(self, gauss_c: float = 2.0, eps: float = 1e-5):
        if gauss_c <= 0:
            raise ValueError(f"gct: gauss_c must be > 0, got {gauss_c}")
        self.gauss_c = gauss_c
        self.eps = eps

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        if x.shape[1] < 2:
            raise ShapeError(f"gct needs at least 2 channels, got {x.shape[1]}")
        ctx = ops.global_avg_pool(x)
        mu = ops.channel_mean_map(ctx)
        d = ops.add_bc(ctx, ops.scale(mu, -1.0))
        std = ops.sqrt(ops.channel_mean_map(ops.mul(d, d)))
        z = ops.mul_bc(d, ops.reciprocal(ops.shift(std, self.eps)))
        gate = ops.exp(ops.scale(ops.mul(z, z), -0.5 / self.gauss_c ** 2))
        return ops.scale_channels(x, gate)

    def describe(self) -> str:
        return f"gct(c={self.gauss_c})"


class L2Norm(AttentionModule):
    kind = "l2norm"

    def __init__(self, eps: float = 1e-12):
        if eps <= 0:
            raise ValueError(f"l2norm: eps must be > 0, got {eps}")
        self.eps = eps

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        return l2norm_forward(x, self.eps)


class Hadamard(AttentionModule):
    """Gated residual product block: two sigmoid-activated 1x1 projections
    to a reduced width, their elementwise product projected back to the full
    width, applied multiplicatively with a residual connection
    (out = A * x + x)."""

    kind = "hadamard"

    def __init__(self, reduction: int = 4):
        self.reduction = reduction

    def param_shapes(self, channels: int) -> dict[str, tuple]:
        _check_reduction(channels, self.reduction, "hadamard")
        cr = channels // self.reduction
        return {
            "query.weight": (cr, channels, 1, 1), "query.bias": (1, cr, 1, 1),
            "key.weight": (cr, channels, 1, 1), "key.bias": (1, cr, 1, 1),
            "out.weight": (channels, cr, 1, 1), "out.bias": (1, channels, 1, 1),
        }

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        _check_reduction(x.shape[1], self.reduction, "hadamard")
        q = ops.sigmoid(ops.conv2d(x, params["query.weight"], params["query.bias"]))
        k = ops.sigmoid(ops.conv2d(x, params["key.weight"], params["key.bias"]))
        a = ops.conv2d(ops.mul(q, k), params["out.weight"], params["out.bias"])
        return ops.add(ops.mul(a, x), x)

    def describe(self) -> str:
        return f"hadamard(r={self.reduction})"


class CmrAtt(AttentionModule):
    """Composite block: energy-based reweighting, then per-item L2
    normalization, then the gated residual product block. Learnable
    parameters live only in the final block."""

    kind = "cmratt"

    def __init__(self, lam: float = 1e-4, statistics_mode: str = SIMAM_APPROX,
                 eps: float = 1e-12, reduction: int = 4):
        self.simam = Simam(lam=lam, statistics_mode=statistics_mode)
        self.l2 = L2Norm(eps=eps)
        self.hadamard = Hadamard(reduction=reduction)

    def param_shapes(self, channels: int) -> dict[str, tuple]:
        return self.hadamard.param_shapes(channels)

    def forward(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        t = self.simam.forward(x, {})
        t = self.l2.forward(t, {})
        return self.hadamard.forward(t, params)

    def describe(self) -> str:
        return (f"cmratt(lam={self.simam.cfg.lam},eps={self.l2.eps},"
                f"r={self.hadamard.reduction})")


_REGISTRY: dict[str, Callable[..., AttentionModule]] = {
    "none": NoAttention,
    "simam": Simam,
    "se": SqueezeExcite,
    "cbam": Cbam,
    "gct": Gct,
    "l2norm": L2Norm,
    "hadamard": Hadamard,
    "cmratt": CmrAtt,
}

# Named in the comparison literature but not implemented here; reserved so a
# typo'd config fails with a precise message instead of a KeyError.
_RESERVED = ("bam", "srm", "gcnet", "ab", "cab", "transformer")


def register_attention(name: str, factory: Callable[..., AttentionModule]):
    """Add a custom block to the registry (name must be new)."""
    key = name.lower()
    if key in _REGISTRY or key in _RESERVED:
        raise ValueError(f"attention kind {name!r} is already taken")
    _REGISTRY[key] = factory


def attention_kinds() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def make_attention(kind: str, **options) -> AttentionModule:
    key = kind.lower()
    if key in _RESERVED:
        raise NotImplementedError(
            f"attention kind {kind!r} is a reserved registry slot with no "
            f"implementation; available kinds: {', '.join(attention_kinds())}")
    if key not in _REGISTRY:
        raise ValueError(f"unknown attention kind {kind!r}; available: "
                         f"{', '.join(attention_kinds())}")
    try:
        return _REGISTRY[key](**options)
    except TypeError as e:
        raise ValueError(f"bad options for attention kind {kind!r}: {e}") from e


def param_count(kind, channel_schedule: Sequence[int]) -> int:
    """Total learnable scalars over every insertion site in the schedule."""
    if not channel_schedule:
        raise ValueError("channel schedule must be nonempty")
    module = make_attention(kind) if isinstance(kind, str) else kind
    return sum(module.param_count(c) for c in channel_schedule)
