"""Exception types shared across the library."""


class ShellRomError(Exception):
    """Base class for all library errors."""


class DomainError(ShellRomError, ValueError):
    """Evaluation point outside the parametric domain."""


class SingularGeometryError(ShellRomError):
    """Degenerate surface Jacobian at an evaluation point."""


class FullyTrimmedError(ShellRomError):
    """Trimming removed every basis function of a patch."""


class ConfigError(ShellRomError, ValueError):
    """Invalid configuration. Carries a list of (path, message) entries."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [("", errors)]
        self.errors = list(errors)
        lines = [f"{path}: {msg}" if path else msg for path, msg in self.errors]
        super().__init__("; ".join(lines))


class PairingError(ShellRomError):
    """Interface point could not be paired across patches."""


class GeometryMismatchError(ShellRomError):
    """Declared interface does not physically coincide on both patches."""


class ProjectionSpaceError(ShellRomError):
    """Degenerate interface projection space (singular mass matrix)."""


class AssemblyError(ShellRomError):
    """Assembled system violates an integrity requirement."""


class SingularSystemError(ShellRomError):
    """Linear system factorization failed."""


class ReducedSolveError(ShellRomError):
    """Reduced online system is singular or ill posed."""


class EmptyBasisError(ShellRomError):
    """POD received an all-zero snapshot matrix."""


class DegenerateModeError(ShellRomError):
    """DEIM interpolation system is singular."""


class InterpolationError(ShellRomError):
    """RBF interpolation is ill posed (coincident centers)."""


class UndefinedNormError(ShellRomError, ZeroDivisionError):
    """Relative error against a zero-norm reference."""


class ArtifactError(ShellRomError):
    """Artifact directory is missing, corrupt, or incompatible."""


class ExtrapolationWarning(UserWarning):
    """Parameter outside the trained box; the solve proceeds."""
