"""Double cascades of stress and default on interbank networks.

Three engines share one model description:

* :mod:`cascadenet.cascade_mc` simulates the cascade on sampled networks;
* :mod:`cascadenet.cascade_lti` iterates the analytic cascade mapping on
  random skeletons described by degree-type laws;
* :mod:`cascadenet.cascade_fixed` iterates the analytic mapping on one known
  skeleton with random balance sheets.
"""

__version__ = "0.1.0"

from .cascade_fixed import FixedLtiModel, fixed_lti_run
from .cascade_lti import LtiModel, iterate_to_fixed_point, lti_model_from_ensemble
from .cascade_mc import NetworkRealization, monte_carlo, realize_network, run_cascade
from .dists import BufferLaw, ExposureLaw, GridPmf, conv_power, convolve, discretize_lognormal, threshold_prob
from .ensemble import Ensemble, LawSpec
from .netgen import EdgeTypeLaw, NodeTypeLaw, Skeleton, empirical_laws, poisson_skeleton

__all__ = [
    "BufferLaw",
    "EdgeTypeLaw",
    "Ensemble",
    "ExposureLaw",
    "FixedLtiModel",
    "GridPmf",
    "LawSpec",
    "LtiModel",
    "NetworkRealization",
    "NodeTypeLaw",
    "Skeleton",
    "conv_power",
    "convolve",
    "discretize_lognormal",
    "empirical_laws",
    "fixed_lti_run",
    "iterate_to_fixed_point",
    "lti_model_from_ensemble",
    "monte_carlo",
    "poisson_skeleton",
    "realize_network",
    "run_cascade",
    "threshold_prob",
]
