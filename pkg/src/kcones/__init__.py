"""Cones of rank k, dominated splittings and Lyapunov exponents for matrix cocycles."""

from .checkers import (Verdict, check_contracting, check_dominated,
                       check_dominated_in_probability, check_eventually_contracting,
                       equivalence_probe, roundtrip_report, theoremB_roundtrip,
                       theoremC_equivalence_probe)
from .cocycle import (BaseSystem, CocycleSpec, OrbitTrace, bernoulli, bundle_exponents,
                      cocycle_product, constant_cocycle, lyapunov_norm, lyapunov_spectrum,
                      markov, rotation, sample_orbit, top_lyapunov, trace_from_matrices)
from .cones import (ConeFamily, ConePair, ConeRankK, alpha_zero, angle_index_subspaces,
                    angle_index_vectors, constant_family, contraction_coefficients,
                    focusing_numbers, make_cone, standard_cone, strong_focusing_number,
                    tau_from_chi, thicken_cone)
from .config import ScenarioConfig, parse_config
from .errors import *  # noqa: F401,F403
from .report import RunReport, emit_report, run_scenario
from .splitting import (SplittingFamily, build_nested_cones, build_zeta_cone,
                        extract_dominated_splitting, graph_transform_complement,
                        make_zeta_data, met_decomposition, push_forward_top_space, zeta_index)
from .subspaces import (Splitting, Subspace, gap_distance, make_splitting, make_subspace,
                        separation_index, subspace_distance)

__version__ = "0.1.0"
