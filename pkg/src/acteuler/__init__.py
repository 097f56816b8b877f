"""Steady 2D flow solver for activated Euler fluids.

Three-field H(div)-conforming DG discretization (piecewise-constant symmetric
traceless stress, lowest-order BDM velocity, piecewise-constant pressure) with
Newton linearization and augmented-Lagrangian block preconditioning.
"""

__version__ = "0.1.0"

from .constitutive import (  # noqa: F401
    ConstitutiveParams,
    SymTensor2,
    FourthOrderTangent,
    generalized_fluidity,
    d_from_s_regularized,
    s_from_d_regularized,
    s_from_d_unregularized,
    constitutive_tangent,
    nondimensionalize,
)
