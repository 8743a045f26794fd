"""Spatial von Mises-Fisher regression for unit-vector responses along streamlines."""

from .baselines import fit_gauss1, fit_gauss2, fit_vmf_nonspatial
from .bench import BenchConfig, evaluate, run_benchmark
from .diagnostics import diagnose, effective_sample_size, hw_diagnostic
from .errors import SpvmfError
from .geometry import cayley_to_rotation, rotation_to_cayley, separation_angle, tangent_normal
from .inference import Contrast, angular_expectation, covariate_effect, effect_map, predict_modes, predictive_mode_draws
from .link import inverse_link, link
from .mcmc import PosteriorDraws, fit
from .model import CovariateTable, Dataset, DirectionField, ModelConfig, ModelState, StreamlineAtlas, validate
from .synthetic import SyntheticConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "Contrast",
    "CovariateTable",
    "Dataset",
    "DirectionField",
    "ModelConfig",
    "ModelState",
    "PosteriorDraws",
    "SpvmfError",
    "StreamlineAtlas",
    "SyntheticConfig",
    "angular_expectation",
    "cayley_to_rotation",
    "covariate_effect",
    "diagnose",
    "effect_map",
    "effective_sample_size",
    "evaluate",
    "fit",
    "fit_gauss1",
    "fit_gauss2",
    "fit_vmf_nonspatial",
    "hw_diagnostic",
    "inverse_link",
    "link",
    "predict_modes",
    "predictive_mode_draws",
    "rotation_to_cayley",
    "run_benchmark",
    "separation_angle",
    "simulate",
    "tangent_normal",
    "validate",
]
