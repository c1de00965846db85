"""Dynamic mixed-membership blockmodel with covariate regression.

Nodes split their interactions across latent groups; group propensities
respond to monadic covariates through a Dirichlet regression whose
coefficients switch with a hidden Markov state shared by the whole network;
edges form from the sampled group pair, a blockmodel, and dyadic covariates.
Inference is collapsed variational EM, with a stochastic (node-minibatch)
variant for large networks.
"""

from .model import (COUNT_MODES, THETA_EPS, GlobalStats, Hyperparams,
                    LatentState, ModelSpec, VariationalParams, compute_stats,
                    dirichlet_alphas, edge_prob, edge_probs,
                    interaction_norms, log_collapsed_posterior)
from .network import DynamicNetwork
from .objective import (analytic_gradients, elbo, expected_group_counts,
                        expected_trans_counts, hyper_objective, pack_grad,
                        pack_hyper, unpack_hyper)
from .vem import (FittedModel, VemConfig, e_step, fit_vem, m_step,
                  posterior_memberships, standard_errors,
                  transition_estimate)
from .svi import SviConfig, draw_holdout, fit_svi, sample_minibatch, svi_step
from .initialize import (align_labels, default_init,
                         estimate_period_blockmodel, spectral_init)
from .simulate import DgpPreset, generate, preset, recovery_metrics
from .dataio import (expand_missing, load_model, load_network, save_model,
                     write_network)
from .predict import auroc, covariate_effect, dyad_prob, forecast, online_refit

__version__ = "0.1.0"

__all__ = [
    "DynamicNetwork", "ModelSpec", "Hyperparams", "LatentState",
    "GlobalStats", "VariationalParams", "THETA_EPS", "COUNT_MODES",
    "dirichlet_alphas", "edge_prob", "edge_probs", "interaction_norms",
    "compute_stats", "log_collapsed_posterior",
    "elbo", "analytic_gradients", "expected_group_counts",
    "expected_trans_counts", "hyper_objective", "pack_hyper", "unpack_hyper",
    "pack_grad",
    "VemConfig", "FittedModel", "fit_vem", "e_step", "m_step",
    "posterior_memberships", "transition_estimate", "standard_errors",
    "SviConfig", "fit_svi", "svi_step", "sample_minibatch", "draw_holdout",
    "spectral_init", "estimate_period_blockmodel", "align_labels",
    "default_init",
    "DgpPreset", "preset", "generate", "recovery_metrics",
    "load_network", "write_network", "expand_missing", "save_model",
    "load_model",
    "dyad_prob", "covariate_effect", "forecast", "auroc", "online_refit",
    "__version__",
]
