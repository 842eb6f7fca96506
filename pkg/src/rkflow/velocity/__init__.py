from .analytic import (
    ConstantField,
    GaussToGaussField,
    LinearScalarField,
    LogisticField,
    TimePolyField,
    make_analytic_field,
)
from .base import FieldError, VelocityField, estimate_lipschitz
from .mmdit import PromptEmbedding, ToyMMDiT, ToyMMDiTConfig, embed_prompt, toy_mmdit_new

__all__ = [
    "ConstantField",
    "FieldError",
    "GaussToGaussField",
    "LinearScalarField",
    "LogisticField",
    "PromptEmbedding",
    "TimePolyField",
    "ToyMMDiT",
    "ToyMMDiTConfig",
    "VelocityField",
    "embed_prompt",
    "estimate_lipschitz",
    "make_analytic_field",
    "toy_mmdit_new",
]
