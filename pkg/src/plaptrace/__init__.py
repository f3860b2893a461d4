"""Weighted p-Laplace measure-data problems, trace constants and singular equations on P1 meshes."""

from .calculus import (DiscreteFunction, MeasureData, atoms, density_measure, lebesgue, level_profile,
                       lq_norm, measure_pairing, power_density, weak_lq_norm, weighted_p_energy, zero_measure)
from .mesh import (Mesh, Weight, build_interval_mesh, build_polygon_mesh, constant_weight, load_mesh,
                   power_weight, save_mesh)
from .potential import (ExhaustionSchedule, PotentialResult, StageError, wa_potential, wolff_potential,
                        wolff_sandwich_check)
from .singular import (SingularNonlinearity, SingularRunReport, barrier_check, g_transform, solve_singular,
                       verify_cor65, verify_thm12_equivalence, verify_thm13_bounds)
from .solver import (OperatorA, SolveReport, SolverOptions, comparison_check, energy_identity_check,
                     minimize_energy, solve)
from .trace import (CapacityResult, TraceEstimate, capacitary_condition_check, capacity, estimate_trace_constant,
                    estimate_weak_trace_constant, hardy_check, power_weight_admissible, verify_thm11_sandwich,
                    verify_thm51_weak)

__version__ = "0.1.0"
