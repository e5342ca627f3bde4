"""Exception types raised across the package."""


class AdmissibilityError(ValueError):
    """The cluster partition induces a directed cycle in the projected graph."""


class CapacityError(RuntimeError):
    """A brute-force enumeration was asked to exceed its configured size cap."""


class IdentificationError(RuntimeError):
    """No usable adjustment set is available for the fairness penalty."""


class EmptyGroupError(ValueError):
    """A sensitive group has no rows (or only zero weights) in the batch."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and the cause is chained."""

    def __init__(self, stage: str, seed: int, method: str | None, cause: BaseException):
        where = f"seed {seed}" + (f", method {method}" if method else "")
        super().__init__(f"{stage} failed ({where}): {cause}")
        self.stage = stage
        self.seed = seed
        self.method = method
