"""Runge-Kutta inversion for rectified-flow models with decoupled-attention editing."""

from .ddta import AttentionCache, DecoupledAttention, ManipulationPlan, decompose_attention, manipulate, recompose_attention
from .estimators import DDTAEditor, RKFlowInverter
from .metrics import latent_metrics, psnr, ssim
from .pipeline import EditConfig, edit, error_bound, reconstruct
from .solver import DENOISE, INVERT, make_time_grid, roundtrip, solve
from .tableau import ButcherTableau, classify_order, load_tableau, registry_get, registry_names, validate_tableau
from .velocity import ToyMMDiT, ToyMMDiTConfig, make_analytic_field

__version__ = "0.1.0"

__all__ = [
    "AttentionCache",
    "ButcherTableau",
    "DDTAEditor",
    "DENOISE",
    "DecoupledAttention",
    "EditConfig",
    "INVERT",
    "ManipulationPlan",
    "RKFlowInverter",
    "ToyMMDiT",
    "ToyMMDiTConfig",
    "classify_order",
    "decompose_attention",
    "edit",
    "error_bound",
    "latent_metrics",
    "load_tableau",
    "make_analytic_field",
    "make_time_grid",
    "manipulate",
    "psnr",
    "recompose_attention",
    "reconstruct",
    "registry_get",
    "registry_names",
    "roundtrip",
    "solve",
    "ssim",
    "validate_tableau",
]
