"""Desk-scale lab for undersampled MRI reconstruction.

Synthetic cardiac-like phantoms are pushed through a k-space undersampling
simulator, and attention-equipped U-Nets (trained with a from-scratch
reverse-mode autodiff core) learn to undo the aliasing. A benchmark harness
ranks attention kinds by SSIM the way comparison tables in the literature do.
"""
from .autodiff import (AutodiffError, GradGraph, Grads, ShapeError, Tensor,
                       grad_check)
from .attention import (AttentionModule, SimamConfig, attention_kinds,
                        make_attention, register_attention)
from .bench import BenchSpec, export_error_maps, run_bench, write_bench_csv
from .config import ExperimentConfig, load_experiment_config
from .kspace import (ComplexImage, Dataset, PhantomSpec, SamplingMask, fft2,
                     gen_dataset, ifft2, load_dataset, make_mask, phantom,
                     resize_bilinear, undersample, zero_filled_recon)
from .metrics import (ImageMetrics, MetricsConfig, MetricsReport, aggregate,
                      mse, psnr, psnr_from_mse, ssim)
from .rng import RngStream
from .tenfile import TenFormatError, load_ten, save_ten
from .trainer import (OptimizerState, TrainConfig, adamw_step, evaluate,
                      load_checkpoint, save_checkpoint, train)
from .unet import (UNetConfig, UNetModel, attention_sites, build_unet,
                   model_param_count, unet_forward)

__version__ = "0.1.0"
