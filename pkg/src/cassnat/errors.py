"""Exception types shared across the package."""


class DimensionError(ValueError):
    """An op received operands whose shapes do not fit together."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class InfeasibleError(ValueError):
    """A CTC target cannot be aligned to the available frames."""


class CheckpointError(ValueError):
    """A checkpoint or corpus file is malformed or has an unsupported version."""


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss."""
