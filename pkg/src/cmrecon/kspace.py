"""Frequency-domain simulator and synthetic data source.

A hand-rolled radix-2 FFT (unitary scaling, centered so the DC coefficient
sits at (h/2, w/2)) backs Cartesian row-undersampling experiments: transform
a ground-truth image, zero phase-encode rows outside a sampling mask, invert,
and take the normalized magnitude as the aliased network input. Synthetic
randomized-ellipse phantoms stand in for scanner images; dataset generation
writes paired input/target tensor files plus a JSON manifest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import AutodiffError, ShapeError, Tensor
from .rng import RngStream
from .tenfile import load_ten, save_ten

DOMAIN_IMAGE = "image"
DOMAIN_KSPACE = "kspace"

EQUISPACED = "equispaced"
RANDOM = "random"


@dataclass
class ComplexImage:
    """(h, w) complex128 array tagged with the domain it lives in."""

    data: np.ndarray
    domain: str = DOMAIN_IMAGE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ShapeError(f"ComplexImage is 2-D, got shape {self.data.shape}")
        if self.domain not in (DOMAIN_IMAGE, DOMAIN_KSPACE):
            raise ValueError(f"domain must be '{DOMAIN_IMAGE}' or "
                             f"'{DOMAIN_KSPACE}', got {self.domain!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _require_pow2(n: int, what: str):
    if n < 1 or n & (n - 1):
        raise ValueError(f"{what} must be a power of two, got {n}")


def _fft_axis(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Unitary radix-2 transform along the last axis of a 2-D complex array:
    bit-reversal permutation, then butterfly stages of doubling size."""
    m, n = a.shape
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev = (rev << 1) | ((np.arange(n) >> b) & 1)
    x = a[:, rev].astype(np.complex128)
    size = 2
    sign = 1j if inverse else -1j
    while size <= n:
        half = size // 2
        tw = np.exp(sign * (2.0 * np.pi / size) * np.arange(half))
        y = x.reshape(m, n // size, size)
        even = y[:, :, :half]
        odd = y[:, :, half:] * tw
        x = np.concatenate([even + odd, even - odd], axis=2).reshape(m, n)
        size *= 2
    return x / np.sqrt(n)


def _fft2_raw(a: np.ndarray, inverse: bool) -> np.ndarray:
    out = _fft_axis(a, inverse)
    return _fft_axis(out.T, inverse).T


def _centered(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    return np.roll(np.roll(a, h // 2, axis=0), w // 2, axis=1)


def fft2(img: ComplexImage) -> ComplexImage:
    """Image domain -> centered unitary spectrum (power-of-two dims only)."""
    if img.domain != DOMAIN_IMAGE:
        raise ValueError(f"fft2 expects the {DOMAIN_IMAGE} domain, got {img.domain}")
    h, w = img.shape
    _require_pow2(h, "height")
    _require_pow2(w, "width")
    return ComplexImage(_centered(_fft2_raw(_centered(img.data), False)),
                        DOMAIN_KSPACE)


def ifft2(k: ComplexImage) -> ComplexImage:
    """Centered unitary spectrum -> image domain."""
    if k.domain != DOMAIN_KSPACE:
        raise ValueError(f"ifft2 expects the {DOMAIN_KSPACE} domain, got {k.domain}")
    h, w = k.shape
    _require_pow2(h, "height")
    _require_pow2(w, "width")
    return ComplexImage(_centered(_fft2_raw(_centered(k.data), True)),
                        DOMAIN_IMAGE)


@dataclass
class SamplingMask:
    """Per-row keep flags for Cartesian row (phase-encode) undersampling."""

    height: int
    keep: np.ndarray
    accel: float
    acs_lines: int

    @property
    def num_kept(self) -> int:
        return int(self.keep.sum())

    @property
    def effective_accel(self) -> float:
        return self.height / self.num_kept


def make_mask(h: int, accel: float, acs_lines: int, rng: RngStream | None = None,
              pattern: str = EQUISPACED) -> SamplingMask:
    """Build a row mask: a fully sampled central band of acs_lines rows,
    plus every ceil(accel)-th row (equispaced) or enough uniform-random rows
    to keep about h/accel total (random)."""
    if accel < 1:
        raise ValueError(f"accel must be >= 1, got {accel}")
    if acs_lines < 0 or acs_lines >= h:
        raise ValueError(f"acs_lines must be in [0, {h}), got {acs_lines}")
    keep = np.zeros(h, dtype=bool)
    start = (h - acs_lines) // 2
    keep[start:start + acs_lines] = True
    if pattern == EQUISPACED:
        step = int(np.ceil(accel))
        keep[::step] = True
    elif pattern == RANDOM:
        if rng is None:
            raise ValueError("random pattern needs an RngStream")
        target = int(round(h / accel))
        extra = max(0, target - acs_lines)
        candidates = np.flatnonzero(~keep)
        extra = min(extra, candidates.size)
        if extra:
            chosen = rng.choice(candidates, size=extra, replace=False)
            keep[chosen] = True
    else:
        raise ValueError(f"pattern must be '{EQUISPACED}' or '{RANDOM}', "
                         f"got {pattern!r}")
    return SamplingMask(height=h, keep=keep, accel=float(accel),
                        acs_lines=acs_lines)


def undersample(k: ComplexImage, mask: SamplingMask) -> ComplexImage:
    """Zero the rows with keep=False; kept rows pass through bit-identically."""
    if k.domain != DOMAIN_KSPACE:
        raise ValueError(f"undersample expects the {DOMAIN_KSPACE} domain, "
                         f"got {k.domain}")
    if mask.height != k.shape[0]:
        raise ShapeError(f"mask height {mask.height} != k-space height {k.shape[0]}")
    return ComplexImage(np.where(mask.keep[:, None], k.data, 0.0), DOMAIN_KSPACE)


def zero_filled_recon(k_us: ComplexImage) -> Tensor:
    """Inverse transform, magnitude, rescale by the maximum intensity to
    land in [0, 1]; returned as a (1, 1, h, w) tensor."""
    if k_us.domain != DOMAIN_KSPACE:
        raise ValueError(f"zero_filled_recon expects the {DOMAIN_KSPACE} "
                         f"domain, got {k_us.domain}")
    mag = np.abs(ifft2(k_us).data)
    mx = mag.max()
    if mx == 0.0:
        raise ValueError("all-zero k-space: maximum intensity is undefined")
    return Tensor((mag / mx)[None, None])


@dataclass(frozen=True)
class PhantomSpec:
    """Randomized-ellipse phantom parameters; images are deterministic in
    the seed and always land in [0, 1]."""

    size: int = 64
    min_ellipses: int = 4
    max_ellipses: int = 7
    seed: int = 0

    def __post_init__(self):
        _require_pow2(self.size, "size")
        if not 0 <= self.min_ellipses <= self.max_ellipses:
            raise ValueError(f"need 0 <= min_ellipses <= max_ellipses, got "
                             f"{self.min_ellipses}..{self.max_ellipses}")


def _ellipse_coverage(yy, xx, cy, cx, ay, ax, angle, soft):
    """Anti-aliased filled ellipse: 1 inside, 0 outside, linear ramp of
    width `soft` (in normalized radius units) across the boundary."""
    dy = yy - cy
    dx = xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    ry = (dy * ca + dx * sa) / ay
    rx = (-dy * sa + dx * ca) / ax
    r = np.sqrt(ry * ry + rx * rx)
    return np.clip((1.0 - r) / soft + 0.5, 0.0, 1.0)


def phantom(spec: PhantomSpec) -> Tensor:
    """Layered anti-aliased ellipses: a body, a brighter ring, a darker
    chamber carved out of it, and small bright/dark lesions; clamped to
    [0, 1]. Zero ellipses produce an all-zero image."""
    size = spec.size
    rng = RngStream(spec.seed, "phantom")
    span = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    img = np.zeros((size, size))
    count = spec.min_ellipses if spec.min_ellipses == spec.max_ellipses else int(
        rng.integers(spec.min_ellipses, spec.max_ellipses + 1))
    ring_c = np.zeros(2)
    for j in range(count):
        r = rng.child(f"ellipse{j}")
        if j == 0:  # body
            cy, cx = r.uniform((2,)) * 0.15 - 0.075
            ay, ax = 0.55 + r.uniform((2,)) * 0.25
            intensity = 0.45 + r.uniform() * 0.15
        elif j == 1:  # ring (the chamber below carves its interior)
            ring_c = r.uniform((2,)) * 0.3 - 0.15
            cy, cx = ring_c
            ay, ax = 0.3 + r.uniform((2,)) * 0.15
            intensity = 0.25 + r.uniform() * 0.15
        elif j == 2:  # chamber
            cy, cx = ring_c + (r.uniform((2,)) * 0.08 - 0.04)
            ay, ax = 0.14 + r.uniform((2,)) * 0.1
            intensity = -(0.2 + r.uniform() * 0.15)
        else:  # lesion
            cy, cx = r.uniform((2,)) * 1.0 - 0.5
            ay, ax = 0.03 + r.uniform((2,)) * 0.07
            sign = 1.0 if r.uniform() < 0.5 else -1.0
            intensity = sign * (0.15 + r.uniform() * 0.2)
        angle = r.uniform() * np.pi
        soft = (2.0 / size) / min(ay, ax)
        img += intensity * _ellipse_coverage(yy, xx, cy, cx, ay, ax, angle, soft)
    return Tensor(np.clip(img, 0.0, 1.0)[None, None])


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resampling of each (h, w) plane. This is a
    preprocessing utility, not a differentiable op."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dims must be positive, got {out_h}x{out_w}")
    if x.tracked:
        raise AutodiffError("resize_bilinear does not propagate gradients")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return Tensor(x.data.copy())
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(ys.astype(np.intp), h - 1)
    x0 = np.minimum(xs.astype(np.intp), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    d = x.data
    top = d[:, :, y0][:, :, :, x0] * (1 - fx) + d[:, :, y0][:, :, :, x1] * fx
    bot = d[:, :, y1][:, :, :, x0] * (1 - fx) + d[:, :, y1][:, :, :, x1] * fx
    return Tensor(top * (1 - fy) + bot * fy)


def _json_dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def gen_dataset(count: int, spec: PhantomSpec, accel: float, out_dir,
                rng: RngStream, pattern: str = EQUISPACED, acs_lines: int = 16,
                prefix: str = "item") -> dict:
    """Write `count` paired tensors: input = zero-filled recon of the
    row-undersampled spectrum, target = ground truth rescaled by its max.
    Item i uses phantom seed spec.seed + i; random masks draw one fresh mask
    per item from the given stream. Returns the manifest dict (also written
    as manifest.json)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    items = []
    for i in range(count):
        ispec = replace(spec, seed=spec.seed + i)
        gt = phantom(ispec).data[0, 0]
        mx = gt.max()
        if mx == 0.0:
            raise ValueError(f"phantom {i} (seed {ispec.seed}) is all zero; "
                             "increase min_ellipses")
        target = gt / mx
        mask = make_mask(spec.size, accel, acs_lines,
                         rng.child(f"mask{i}"), pattern)
        k = fft2(ComplexImage(gt, DOMAIN_IMAGE))
        inp = zero_filled_recon(undersample(k, mask))
        name_in = f"{prefix}_{i:04d}_input.ten"
        name_tg = f"{prefix}_{i:04d}_target.ten"
        try:
            save_ten(out / name_in, inp.data)
            save_ten(out / name_tg, target[None, None])
        except OSError as e:
            raise OSError(f"failed writing {out / name_in}: {e}") from e
        items.append({"index": i, "input": name_in, "target": name_tg,
                      "phantom_seed": ispec.seed})
    manifest = {
        "count": count, "size": spec.size, "accel": float(accel),
        "acs_lines": acs_lines, "pattern": pattern, "seed": spec.seed,
        "prefix": prefix, "items": items,
    }
    _json_dump(out / "manifest.json", manifest)
    return manifest


@dataclass
class Dataset:
    inputs: np.ndarray   # (N, 1, h, w)
    targets: np.ndarray  # (N, 1, h, w)
    manifest: dict

    def __len__(self) -> int:
        return self.inputs.shape[0]


def load_dataset(path) -> Dataset:
    d = Path(path)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest.json in {d}")
    manifest = json.loads(mpath.read_text())
    inputs, targets = [], []
    for item in manifest["items"]:
        inputs.append(load_ten(d / item["input"]))
        targets.append(load_ten(d / item["target"]))
    return Dataset(np.concatenate(inputs, axis=0),
                   np.concatenate(targets, axis=0), manifest)
