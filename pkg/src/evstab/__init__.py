"""Numerical toolkit for static solutions of the spherically symmetric
Einstein-Vlasov system and their linear stability via a reduced radial
variational principle."""

__version__ = "0.1.0"

from .eos import EquationOfState, phi, phi_prime, profile_G, profile_H, profile_q
from .equilibria import (ShellParameters, SteadyState, build_shell, diagnostics,
                         equilibrium_residuals, load_state, save_state,
                         schwarzschild_critical_radii, schwarzschild_level_radii,
                         solve_singularity_free)
from .orbits import (OrbitTable, SupportEL, angle, characteristic_period,
                     effective_potential, orbit_solution, period, turning_points,
                     verify_single_well)
from .phase_space import (PhaseFunction, PhaseGrid, hlr_identity_residual,
                          inner_product, lambda_field, s4_bound, source_terms)
from .operators import (KernelBasis, b_apply, build_kernel_basis, check_kernelB,
                        lambda_identity_residuals, lift_to_kernelB, project_kerB,
                        transport_apply, transport_inverse)
from .mathur import (MathurKernel, StabilityReport, alpha0, beta0, eigensolve,
                     hs_norm, I_matrix, indicator_profile, kernel_K,
                     stability_report)
from .config import RunConfig, parse_config
from .pipeline import PipelineReport, RunResult, emit_artifacts, run_pipeline

__all__ = [name for name in dir() if not name.startswith("_")]
