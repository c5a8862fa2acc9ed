"""Frequency-adaptive SAR despeckling: speckle statistics, Haar analysis,
a small autodiff engine and the wavelet-domain despeckling network."""

from .metrics import MetricReport, Region
from .model import SARFAH, ModelConfig, despeckle, loss_l1, param_count
from .lfsp import ODEConfig
from .speckle import GammaParams, GGDParams, fit_gamma, fit_ggd, synthesize_speckle, verify_theorem1
from .wavelet import SubBands, dwt2_haar, idwt2_haar

__version__ = "0.1.0"

__all__ = [
    "SARFAH",
    "ModelConfig",
    "ODEConfig",
    "despeckle",
    "loss_l1",
    "param_count",
    "GammaParams",
    "GGDParams",
    "fit_gamma",
    "fit_ggd",
    "synthesize_speckle",
    "verify_theorem1",
    "SubBands",
    "dwt2_haar",
    "idwt2_haar",
    "MetricReport",
    "Region",
]
