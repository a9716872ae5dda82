"""Continuous data assimilation (nudging) harness for damped incompressible
flow on the periodic torus, with Monte-Carlo verification of the closed-form
synchronization guarantees."""

__version__ = "0.1.0"

from .fields import Grid, NormBundle, VelocityField, norms, poincare_lambda1, random_divfree_field
from .operators import ModelParams
from .noise import NoiseCoefficient, QWienerSpec
from .interpolant import InterpolantSpec
from .dynamics import AssimilationConfig, PairState, StepperConfig, TruthState
from .theory import ThresholdReport, check_config, compute_Mhat, compute_upvarpi, sigma_window

__all__ = [
    "Grid", "NormBundle", "VelocityField", "norms", "poincare_lambda1",
    "random_divfree_field", "ModelParams", "NoiseCoefficient", "QWienerSpec",
    "InterpolantSpec", "AssimilationConfig", "PairState", "StepperConfig",
    "TruthState", "ThresholdReport", "check_config", "compute_Mhat",
    "compute_upvarpi", "sigma_window", "__version__",
]
