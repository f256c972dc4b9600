"""Multi-resolution approximation with local projections for large spatial Gaussian processes."""
from .approx import (MLP, MRA, MRALP, BasisCache, BasisError, ModelConfig, PhiPolicy, approx_cov_eval,
                     approx_cov_matrix, build_basis, frobenius_gap, make_config)
from .fastpath import identity_checks, loglik, predict, predict_points
from .geom import Domain, PartitionSpec, build_partition
from .inference import crps_gaussian, evaluate, gp_simulate, mle_fit
from .kernels import CovParams, KernelSpec, TaperSpec
from .rangefinder import RangeFinderConfig, adaptive_range_finder, rank_targeted_phi

__version__ = "0.1.0"
