"""Edgeworth and local-limit expansions for Birkhoff sums of hyperbolic systems."""

from __future__ import annotations

from .errors import SpectralError
from .models import CircleMapSpec, MarkovSftSpec, NormalizedModel, RmpSpec, build_model
from .perturb import expand_model, spectral_data
from .polyexp import (
    ExpansionSet,
    GaussianBump,
    LatticeSequence,
    RaisedCosine,
    build_expansion,
)

__version__ = "0.1.0"

__all__ = [
    "CircleMapSpec",
    "ExpansionSet",
    "GaussianBump",
    "LatticeSequence",
    "MarkovSftSpec",
    "NormalizedModel",
    "RaisedCosine",
    "RmpSpec",
    "SpectralError",
    "build_expansion",
    "build_model",
    "expand_model",
    "spectral_data",
]
