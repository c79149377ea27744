"""Exception types raised by the workbench."""


class SkyfError(Exception):
    """Base class for every error raised by skyf."""


class EmptyDomainError(SkyfError):
    pass


class EigenvalueConvergenceError(SkyfError):
    pass


class AdmissibilityError(SkyfError):
    """A field violates the unit-norm or Dirichlet clamping invariant."""


class SnapshotError(SkyfError):
    pass


class SnapshotFormatError(SnapshotError):
    """Bad magic bytes or unsupported version."""


class SnapshotSizeError(SnapshotError):
    pass


class SnapshotNormError(SnapshotError):
    pass


class DegenerateTriangleError(SkyfError):
    """A spherical triangle has an ill-defined solid angle (under-resolution)."""


class AnnulusError(SkyfError):
    """The insertion ball does not fit in the domain, or too few shells."""


class InsertionError(SkyfError):
    """The cutoff-and-paste construction failed at the chosen site."""


class NoCandidateError(SkyfError):
    pass


class RepairCapExceeded(SkyfError):
    pass


class ConfigError(SkyfError):
    pass
