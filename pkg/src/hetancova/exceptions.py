"""Exception hierarchy shared across the package."""


class AncovaError(Exception):
    """Base class for errors raised by hetancova."""


class InvalidInputError(AncovaError, ValueError):
    """Input arrays are malformed or contain non-finite values."""


class StructuralError(AncovaError, ValueError):
    """The data do not have the two-block group layout the model needs."""


class DegenerateGroupError(AncovaError):
    """A group sub-model leaves no residual degrees of freedom."""

    def __init__(self, group: int, n: int, rank: int):
        self.group = group
        self.n = n
        self.rank = rank
        self.required = rank + 1
        where = "the pooled model" if group == 0 else f"group {group}"
        super().__init__(
            f"{where} has n={n} observations but its design has rank "
            f"{rank}; at least {rank + 1} observations are needed to estimate "
            f"a residual variance"
        )


class LeverageError(AncovaError):
    """An observation has leverage 1, so HC2/HC3 weights are undefined."""
