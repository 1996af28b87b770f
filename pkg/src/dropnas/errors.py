"""Exception types shared across the package."""


class DropNasError(Exception):
    """Base class for all errors raised by dropnas."""


class ShapeError(DropNasError, ValueError):
    pass


class ConfigError(DropNasError, ValueError):
    pass


class DropoutParamError(ConfigError):
    pass


class DegenerateMaskError(DropNasError, RuntimeError):
    """Raised when repeated redraws keep producing an all-zero mask."""


class GenomeError(DropNasError, ValueError):
    pass


class TrainingDiverged(DropNasError, RuntimeError):
    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class FitError(DropNasError, RuntimeError):
    pass


class FormatError(DropNasError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class EvaluationError(DropNasError, RuntimeError):
    def __init__(self, genome, cause):
        super().__init__(f"evaluation failed for genome {list(genome)}: {cause}")
        self.genome = tuple(genome)
