"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: GateError -> 2, NumericalError -> 3,
ConfigurationError -> 4.
"""


class EvStabError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(EvStabError):
    """Invalid or incomplete run configuration / parameter record."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class GateError(EvStabError):
    """A verification gate failed; later pipeline stages must not run."""


class SingleWellViolation(GateError):
    """More than one critical point of the effective potential inside I_L."""

    def __init__(self, L, radii):
        self.L = float(L)
        self.radii = [float(r) for r in radii]
        super().__init__(
            f"effective potential has {len(self.radii)} critical points "
            f"inside I_L for L={self.L:.6g}: {self.radii}"
        )


class NumericalError(EvStabError):
    """Integration / factorization / convergence failure."""


class OutOfSupportError(EvStabError):
    """Evaluation requested outside the admissible (E, L) or radial domain."""


class GridMismatchError(EvStabError):
    """Phase-space functions live on different quadrature grids."""


class TransportImageError(EvStabError):
    """Function is not in the image of the transport operator."""


class BoundaryValueWarning(RuntimeWarning):
    """A one-sided limit was returned at a support-boundary point."""
