"""Error types shared across modules."""


class LatticeAlignmentError(ValueError):
    """Two lattices (or a lattice and a scaling map) do not line up exactly."""


class InsufficientDataError(ValueError):
    """An estimator was asked to run on fewer samples than it can support."""


class CapacityError(ValueError):
    """A requested allocation exceeds the addressable size for one grid."""


class DecompositionInfeasible(ValueError):
    """Mass decomposition cannot produce the requested number of parts.

    Carries ``achievable``: the largest part count the input supports.
    """

    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable
