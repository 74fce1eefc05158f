"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Operand extents do not agree."""


class LabelError(ContractError):
    """A review cannot be given a helpfulness target."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""


class VerificationError(AssertionError):
    """A numerical self-check failed."""
