"""Gaussian-process learning of interaction kernels in two-species particle systems."""

from .dynamics import SpeciesConfig, Trajectory, TrajectoryDataset, force_field, generate_dataset, integrate
from .gpcore import GPHyperparams, PosteriorCurve, TrainedGP, fit, posterior, posterior_curve
from .kernels import KernelSet, MaternParams, RadialKernel, preset

__all__ = [
    "SpeciesConfig",
    "Trajectory",
    "TrajectoryDataset",
    "force_field",
    "generate_dataset",
    "integrate",
    "GPHyperparams",
    "PosteriorCurve",
    "TrainedGP",
    "fit",
    "posterior",
    "posterior_curve",
    "KernelSet",
    "MaternParams",
    "RadialKernel",
    "preset",
]
