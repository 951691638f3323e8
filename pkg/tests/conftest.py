import os

# single-CPU sandboxes: BLAS spin-waiting dominates otherwise
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from evstab.eos import EquationOfState
from evstab.equilibria import ShellParameters, build_shell, solve_singularity_free
from evstab.mathur import kernel_K
from evstab.operators import KernelBasis
from evstab.orbits import verify_single_well
from evstab.phase_space import PhaseGrid

SHELL_M = 1.0
SHELL_L0 = 15.0
SHELL_E0 = 0.98
SHELL_DELTA = 1e-3


@pytest.fixture(scope="session")
def shell_params():
    return ShellParameters(M=SHELL_M, L0=SHELL_L0, E_intermediate=SHELL_E0)


@pytest.fixture(scope="session")
def shell_eos():
    return EquationOfState(family="polytrope", k=1.0, l=0.0, L0=SHELL_L0)


@pytest.fixture(scope="session")
def shell_state(shell_params, shell_eos):
    return build_shell(shell_params, shell_eos, SHELL_DELTA)


@pytest.fixture(scope="session")
def vacuum_shell(shell_params, shell_eos):
    return build_shell(shell_params, shell_eos, 0.0)


@pytest.fixture(scope="session")
def shell_support(shell_state):
    return verify_single_well(shell_state)


@pytest.fixture(scope="session")
def shell_grid(shell_state, shell_support):
    return PhaseGrid(shell_state, shell_support)


@pytest.fixture(scope="session")
def shell_basis(shell_grid):
    return KernelBasis(shell_grid, 8, 8)


@pytest.fixture(scope="session")
def shell_kernel(shell_state, shell_basis):
    return kernel_K(shell_state, shell_basis)


@pytest.fixture(scope="session")
def polytrope_state():
    return solve_singularity_free(
        EquationOfState(family="polytrope", k=1.0, l=0.0, L0=0.0), 0.1)


@pytest.fixture(scope="session")
def king_state():
    return solve_singularity_free(EquationOfState(family="king"), 0.1)
