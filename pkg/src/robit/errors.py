"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class DataError(ValueError):
    """Input data that is structurally fine but semantically wrong (e.g. a bad choice index)."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NumericalError(ArithmeticError):
    """A sampler step produced a non-finite or non-SPD quantity."""

    def __init__(self, message, **context):
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)
        self.context = context


class ModeNotFound(RuntimeError):
    pass


class ChainAborted(NumericalError):
    """A chain stopped early; ``partial`` holds (chain, retained rows, iterations) collected so far."""

    def __init__(self, message, chain, iteration, partial):
        super().__init__(message, chain=chain, iteration=iteration)
        self.chain = chain
        self.iteration = iteration
        self.partial = partial
