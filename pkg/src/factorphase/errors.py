"""Exception types shared across the package."""


class FactorPhaseError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(FactorPhaseError):
    """Malformed model or weight function."""


class BudgetError(FactorPhaseError):
    """A computation was refused because it exceeds its numerical budget."""


class DivergenceError(BudgetError):
    """The requested quantity diverges in the given parameter regime."""
