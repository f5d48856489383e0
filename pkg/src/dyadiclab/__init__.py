"""Finite-depth dyadic harmonic analysis: Haar analysis, weights, sparse
operators, paraproducts, sparse domination and weighted operator norms."""

from .core import (
    CubeId,
    DyadicModel,
    HaarSpectrum,
    ModelError,
    StepFunction,
    analyze,
    cancellative_signatures,
    haar_constant_on,
    haar_function,
    synthesize,
)

__all__ = [
    "CubeId",
    "DyadicModel",
    "HaarSpectrum",
    "ModelError",
    "StepFunction",
    "analyze",
    "cancellative_signatures",
    "haar_constant_on",
    "haar_function",
    "synthesize",
]

__version__ = "0.1.0"
