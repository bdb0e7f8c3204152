"""Hyperspectral unmixing with plug-and-play ADMM and its unrolled network."""
from ._errors import (DegenerateInputError, DivergenceError, FormatError, ParameterError,
                      SingularSystemError, SizeMismatchError, UnmixError)
from .admm import AdmmConfig, PnPADMMUnmixer
from .data import (AbundanceField, EndmemberMatrix, HyperCube, SynthSpec, add_noise,
                   generate_synthetic, load_cube, save_cube)
from .denoisers import DenoiserSpec, denoise
from .initialization import FCLS, VCA, InitResult, fcls, initialize, vca
from .metrics import EvalReport, align, armse, evaluate, mrmse, msad, psnr, sad
from .net import NetConfig, PnPNetUnmixer

__version__ = "0.1.0"

__all__ = [
    "AbundanceField", "AdmmConfig", "DegenerateInputError", "DenoiserSpec", "DivergenceError",
    "EndmemberMatrix", "EvalReport", "FCLS", "FormatError", "HyperCube", "InitResult",
    "NetConfig", "ParameterError", "PnPADMMUnmixer", "PnPNetUnmixer", "SingularSystemError",
    "SizeMismatchError", "SynthSpec", "UnmixError", "VCA", "add_noise", "align", "armse",
    "denoise", "evaluate", "fcls", "generate_synthetic", "initialize", "load_cube", "mrmse",
    "msad", "psnr", "sad", "save_cube", "vca",
]
