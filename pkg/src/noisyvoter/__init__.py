"""Noisy voter model and its dual arrow percolation."""

import warnings

# numba probes TBB on import of parallel kernels and falls back to OpenMP
warnings.filterwarnings("ignore", message="The TBB threading layer")

from .errors import BracketFailure, InfeasibleSize
from .lattice import (INFINITE, Arrow, ArrowField, ArrowRow, Boundary, LatticeWindow,
                      ModelParams, Stream, UniformField, arrow_from_uniform,
                      arrow_probabilities, sample_arrow_field)
from .dynamics import (ColorRow, FreshColorField, InitialCondition, PartitionRow,
                       run_forward, step_colors, step_partition)
from .genealogy import (CriticalEstimate, ReachedSet, SurvivalEstimate, branching_mean,
                        estimate_epsilon_c, exact_theta_n, grow_cluster, theta_n_mc)
from .renormalization import (BoxEventEstimate, BoxSpec, box_event_mc, clt_box_bound,
                              extremal_paths, renorm_certificate)
from .enhancement import (Cone, LambdaField, PivotalCounts, enhance, gamma,
                          pivotal_counts, pivotal_inequality_check, russo_check,
                          sample_lambda_field, theta_n_enh)
from .coupling import (CoupledState, DiscrepancyStats, cprime_transition,
                       cstar_lower_transition, estimate_epsilon_c_prime,
                       extinction_experiment, mean_field_bound, step_coupled)
from .qinf import (GClusterStats, derive_w_arrows, g_decay_profile,
                   permutation_invariance_test, qinf_coupling_check)

__version__ = "0.1.0"
