"""Exception hierarchy shared by every module."""


class DualtabError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ContractError(DualtabError, ValueError):
    pass


class DimensionError(ContractError):
    pass


class NumericError(DualtabError, ArithmeticError):
    pass


class CapacityError(DualtabError):
    pass


class FormatError(DualtabError, ValueError):
    pass


class SplitError(DualtabError):
    pass


class CodecError(DualtabError):
    pass


class StatisticError(DualtabError):
    pass


class TaskGenerationError(DualtabError):
    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class TrainingError(DualtabError):
    def __init__(self, message, task_seed=None):
        super().__init__(message)
        self.task_seed = task_seed
