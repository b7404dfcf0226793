"""Exception hierarchy.

Every error records the module and operation that raised it so that the
command line front end can emit structured diagnostics.
"""
from __future__ import annotations


class HypWRError(Exception):
    """Base class for all toolkit errors."""

    module = "hypwr"

    def __init__(self, message: str, operation: str = "", **context):
        super().__init__(message)
        self.operation = operation
        self.context = context

    def as_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "module": self.module,
            "operation": self.operation,
            "message": str(self),
        }


class SingularBoundaryMatrix(HypWRError):
    """A_d is numerically singular (characteristic boundary)."""

    module = "system_model"


class ExpressionError(HypWRError):
    """A coefficient expression could not be parsed or evaluated."""

    module = "system_model"


class NoSpectralGap(HypWRError):
    """Eigenvalues too close to the real axis for a direct splitting."""

    module = "spectral"


class ZeroKappa(HypWRError):
    """A kappa value vanished at a point classified as hyperbolic."""

    module = "spectral"


class GlancingOnPath(HypWRError):
    """A glancing point was met while continuing the stable bundle."""

    module = "lopatinskii"


class RankDeficient(HypWRError):
    """Boundary matrix (restricted or not) has insufficient rank."""

    module = "lopatinskii"


class OmegaRootNotFound(HypWRError):
    """No zero of the Lopatinskii determinant in the tau bracket."""

    module = "lopatinskii"


class BranchCollision(HypWRError):
    """Tracked eigenvalue branch met another branch."""

    module = "transport"


class ChartExit(HypWRError):
    """Trajectory left the declared chart."""

    module = "transport"


class BasisSwapFailed(HypWRError):
    """No eigenvector swap kept the refined basis well conditioned."""

    module = "transport"


class ClusterTooClose(HypWRError):
    """Eigenvalue clusters are not separated enough to solve the commutator equation."""

    module = "transport"


class CriticalFrequency(HypWRError):
    """Boundary solve is singular (frequency sits on the critical set)."""

    module = "estimator"


class NoGap(HypWRError):
    """Frequency problem posed at gamma = 0."""

    module = "estimator"
