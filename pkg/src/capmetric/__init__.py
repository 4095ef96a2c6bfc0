"""Capacities, isocapacitary constants and Sobolev-type inequalities on finite metric measure graphs."""

from .capacity import (CapacityProblem, CapacityResult, StepFunction, capacity, capacity_profile,
                       content_capacity_ratio, content_cover, conductivity, global_capacity, hausdorff_content)
from .constants import (IsocapConstant, SobolevEstimate, build_chain_extremal, build_sup_extremal, chain_value,
                        gamma_ball, gamma_chain, gamma_conductor, gamma_subset, hardy_constant, integral_criterion,
                        poincare_estimate, sobolev_constant)
from .errors import (CapmetricError, ConstraintError, EnumerationCapError, ParameterError, SpaceFormatError,
                     ValidationError)
from .fields import (cavalieri, energy, level_data, minimal_upper_gradient, p_energy, qpey_rhs, truncate_dyadic)
from .space import (DiscreteMMSpace, Domain, ball, dist_to_complement, distance, doubling_estimate, dump_space,
                    load_space)
from .verify import (InequalityLink, VerificationReport, check_ball_criterion, check_capaint, check_conductivity,
                     check_conint, check_hardy, check_integral_criterion, check_qp, check_qpey, check_sobolev_pq,
                     inject_failure, median_level)

__version__ = "0.1.0"
