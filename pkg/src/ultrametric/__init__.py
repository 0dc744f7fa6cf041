"""Heat kernels, Schrödinger semigroups and random walks on finite p-adic grids.

The finite level ``X_n = p^{-n} Z_p / p^n Z_p`` is represented by residues
``u`` modulo ``p^{2n}``; see :mod:`ultrametric.grid`.
"""

from .grid import GridError, GridParams, GridPoint, norm_table
from .transform import GridFunction, forward, inverse
from .density import density_closed_form, density_limit, density_spectral
from .spectral import CapacityError, PotentialSpec, SpectralModel, materialize_hamiltonian, propagator
from .stochastic import SeedSpec, feynman_kac_estimate, sample_bridges, sample_paths

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "GridError",
    "GridFunction",
    "GridParams",
    "GridPoint",
    "PotentialSpec",
    "SeedSpec",
    "SpectralModel",
    "density_closed_form",
    "density_limit",
    "density_spectral",
    "feynman_kac_estimate",
    "forward",
    "inverse",
    "materialize_hamiltonian",
    "norm_table",
    "propagator",
    "sample_bridges",
    "sample_paths",
]
