"""Image-quality metrics and report plumbing.

MSE averages squared error over each image then over the batch. PSNR is
10*log10(peak^2 / MSE) with a +infinity sentinel when MSE is zero; aggregate
means exclude (and count) the infinite rows. SSIM defaults to the global
form: one luminance/contrast/structure evaluation per image from whole-image
means, population variances, and covariance. A windowed mode averages the
same formula over Gaussian-weighted sliding windows instead.

CSV output is 6-decimal fixed point so reruns are byte-comparable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import ShapeError, Tensor

SSIM_GLOBAL = "global"
SSIM_WINDOWED = "windowed"


@dataclass(frozen=True)
class MetricsConfig:
    peakval: float = 1.0
    ssim_c1: float | None = None  # defaults to (0.01 * peakval)^2
    ssim_c2: float | None = None  # defaults to (0.03 * peakval)^2
    ssim_mode: str = SSIM_GLOBAL
    window: int = 7
    sigma: float = 1.5

    def __post_init__(self):
        if self.peakval <= 0:
            raise ValueError(f"peakval must be > 0, got {self.peakval}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError(f"ssim constants must be > 0, got c1={self.c1}, "
                             f"c2={self.c2}")
        if self.ssim_mode not in (SSIM_GLOBAL, SSIM_WINDOWED):
            raise ValueError(f"ssim_mode must be '{SSIM_GLOBAL}' or "
                             f"'{SSIM_WINDOWED}', got {self.ssim_mode!r}")
        if self.window < 1 or self.sigma <= 0:
            raise ValueError(f"bad window settings: window={self.window}, "
                             f"sigma={self.sigma}")

    @property
    def c1(self) -> float:
        return self.ssim_c1 if self.ssim_c1 is not None else (0.01 * self.peakval) ** 2

    @property
    def c2(self) -> float:
        return self.ssim_c2 if self.ssim_c2 is not None else (0.03 * self.peakval) ** 2


def _as_batch(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, None]
    if a.ndim != 4:
        raise ShapeError(f"metrics expect (n, c, h, w) or (h, w), got {a.shape}")
    return a


def _pair(yhat, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_batch(yhat), _as_batch(y)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(yhat, y) -> float:
    a, b = _pair(yhat, y)
    d = a - b
    return float(np.mean(np.mean(d * d, axis=(1, 2, 3))))


def psnr_from_mse(m: float, cfg: MetricsConfig | None = None) -> float:
    cfg = cfg or MetricsConfig()
    if m < 0:
        raise ValueError(f"mean squared error cannot be negative, got {m}")
    if m == 0.0:
        return math.inf
    return float(10.0 * np.log10(cfg.peakval ** 2 / m))


def psnr(yhat, y, cfg: MetricsConfig | None = None) -> float:
    return psnr_from_mse(mse(yhat, y), cfg)


def _ssim_single(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    mu_a = a.mean()
    mu_b = b.mean()
    da = a - mu_a
    db = b - mu_b
    var_a = np.mean(da * da)
    var_b = np.mean(db * db)
    cov = np.mean(da * db)
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(num / den)


def _gauss_kernel(window: int, sigma: float) -> np.ndarray:
    r = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_windowed(a: np.ndarray, b: np.ndarray, c1: float, c2: float,
                   window: int, sigma: float) -> float:
    if a.shape[0] < window or a.shape[1] < window:
        raise ShapeError(f"windowed ssim needs dims >= {window}, got {a.shape}")
    k = _gauss_kernel(window, sigma)
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = np.einsum("ijkl,kl->ij", wa, k)
    mu_b = np.einsum("ijkl,kl->ij", wb, k)
    e_aa = np.einsum("ijkl,kl->ij", wa * wa, k)
    e_bb = np.einsum("ijkl,kl->ij", wb * wb, k)
    e_ab = np.einsum("ijkl,kl->ij", wa * wb, k)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(yhat, y, cfg: MetricsConfig | None = None) -> float:
    cfg = cfg or MetricsConfig()
    a, b = _pair(yhat, y)
    vals = []
    for i in range(a.shape[0]):
        ai = a[i].reshape(-1, a.shape[3])  # stack channels along rows
        bi = b[i].reshape(ai.shape)
        if cfg.ssim_mode == SSIM_GLOBAL:
            vals.append(_ssim_single(ai, bi, cfg.c1, cfg.c2))
        else:
            vals.append(_ssim_windowed(ai, bi, cfg.c1, cfg.c2,
                                       cfg.window, cfg.sigma))
    return float(np.mean(vals))


@dataclass
class ImageMetrics:
    id: str
    mse: float
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    method: str
    overhead: int
    rows: list
    mean_mse: float
    mean_psnr: float       # over finite-PSNR rows only
    psnr_inf_count: int
    mean_ssim: float
    total_params: int = 0
    ssim_mode: str = SSIM_GLOBAL
    baseline: "MetricsReport | None" = None


def evaluate_pair(id_: str, yhat, y, cfg: MetricsConfig | None = None) -> ImageMetrics:
    cfg = cfg or MetricsConfig()
    return ImageMetrics(id=id_, mse=mse(yhat, y), psnr=psnr(yhat, y, cfg),
                        ssim=ssim(yhat, y, cfg))


def aggregate(rows: Sequence[ImageMetrics], method: str = "",
              overhead: int = 0, total_params: int = 0,
              ssim_mode: str = SSIM_GLOBAL) -> MetricsReport:
    if not rows:
        raise ValueError("cannot aggregate an empty row list")
    finite = [r.psnr for r in rows if math.isfinite(r.psnr)]
    inf_count = len(rows) - len(finite)
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    return MetricsReport(
        method=method, overhead=overhead, rows=list(rows),
        mean_mse=float(np.mean([r.mse for r in rows])),
        mean_psnr=mean_psnr, psnr_inf_count=inf_count,
        mean_ssim=float(np.mean([r.ssim for r in rows])),
        total_params=total_params, ssim_mode=ssim_mode)


def fmt6(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def write_image_csv(report: MetricsReport, path):
    lines = ["id,psnr,mse,ssim"]
    for r in report.rows:
        lines.append(f"{r.id},{fmt6(r.psnr)},{fmt6(r.mse)},{fmt6(r.ssim)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_aggregate_csv(reports: Sequence[MetricsReport], path):
    lines = ["method,params_overhead,psnr,mse,ssim"]
    for rep in reports:
        lines.append(f"{rep.method},{rep.overhead},{fmt6(rep.mean_psnr)},"
                     f"{fmt6(rep.mean_mse)},{fmt6(rep.mean_ssim)}")
    Path(path).write_text("\n".join(lines) + "\n")
