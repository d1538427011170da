"""Numerical lab for sharp stability of the Euclidean log-Sobolev inequality
around critical points: bubbles, residuals, Sobolev norms, linearized
spectra, manifold fits and two-bubble rate experiments."""

from .discretization import Field, Grid, SolverError, load_field, make_grid, save_field
from .core import (
    GaussianParams,
    bubble,
    bubble_sum,
    deficit,
    error_term,
    gauge_chain,
    gaussian_extremal,
    nonlinear_term,
    residual,
)
from .norms import norm_h1, norm_hminus1, norms, partition_geometry, separation_stats, weighted_norms
from .linearized import coercivity_gap, projection, projection_basis, spectrum
from .fit import fit_distance, struwe_decompose
from .bubbles import build_pair, lower_bound_witness, projected_linear_solve
from .experiments import interaction_curve, scalar_max_curve, stability_probe, sweep_rates

__version__ = "0.1.0"
