"""Exception types shared across modules."""


class InfeasibleError(ValueError):
    """A requested configuration admits no valid solution (e.g. an empty
    noise subspace or an empty block-diagonalization null space)."""
