"""Normalized power priors matched to Bayesian hierarchical models.

The bridge ``a0 = 1 / (2 v n0 / sigma0^2 + 1)`` links the power-prior weight
``a0`` to the between-study variance ``v`` of a normal hierarchical model, and
its multi-dataset generalization makes the BNPP and the BHM posteriors for the
current mean identical when the priors correspond.
"""
__version__ = "0.1.0"

from .core import DensityGrid, NormalSummary, PosteriorSummary, PriorSpec, StudySet, summarize
from .transform import (
    InducedPrior,
    f_multi,
    f_multi_inv,
    f_single,
    f_single_inv,
    h_k,
    induce_prior_a0_single,
    induce_prior_v_multi,
    induce_prior_v_single,
)
from .posterior import (
    marginal_a0k,
    marginal_theta_bhm,
    marginal_theta_bnpp,
    marginal_theta_inpp,
    marginal_theta_npp_single,
)
from .mcmc import SamplerConfig, gibbs_bhm, mh_bernoulli_bhm, mwg_bnpp, mwg_inpp
from .fitting import fit_beta_mle, fit_ig_kl
from .approx import TwoArmBinomialSummary, log_or

__all__ = [
    "__version__",
    "DensityGrid", "NormalSummary", "PosteriorSummary", "PriorSpec", "StudySet", "summarize",
    "InducedPrior", "f_single", "f_single_inv", "f_multi", "f_multi_inv", "h_k",
    "induce_prior_v_single", "induce_prior_v_multi", "induce_prior_a0_single",
    "marginal_theta_npp_single", "marginal_theta_inpp", "marginal_theta_bnpp",
    "marginal_theta_bhm", "marginal_a0k",
    "SamplerConfig", "gibbs_bhm", "mwg_bnpp", "mwg_inpp", "mh_bernoulli_bhm",
    "fit_ig_kl", "fit_beta_mle",
    "TwoArmBinomialSummary", "log_or",
]
