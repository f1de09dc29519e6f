"""Multivariate GLMMs for responses of different statistical nature.

Marginal Gamma / binomial / Gamma-compound-Poisson GLMMs with per-group
Gaussian random intercepts are fitted by Laplace approximation; the
predicted random components are then summarised by a BIC-selected Gaussian
graphical model, whose separation structure identifies minimal predictive
subsets of responses.
"""
from .families import Binomial, CompoundPoisson, DispersionParams, Gamma
from .data_io import ObservationTable, read_table, write_outputs
from .glmm import FittedGLMM, ResponseSpec, fit, fitted_means, predict_random_effects
from .tweedie_index import PowerGridResult, select_power_index
from .mglmm import MglmmFit, RandomEffectsMatrix, fit_all
from .graphs import (
    GraphSearchResult,
    LabeledGraph,
    gaussian_bic,
    is_separator,
    minimal_markov_blanket,
    search_min_bic,
)
from .simulate import MglmmSpec, graph_to_sigma, simulate_dataset
from .diagnostics import ResidualReport, pearson_residuals, pit_uniformity

__version__ = "0.1.0"
