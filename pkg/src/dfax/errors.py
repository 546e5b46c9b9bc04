"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`DfaxError`. The CLI maps
the three families below onto exit codes 2, 3 and 4.
"""


class DfaxError(Exception):
    exit_code = 2


# input / configuration problems (exit 2)
class InvalidData(DfaxError):
    pass


class InvalidParameter(DfaxError):
    pass


class EmptySupport(DfaxError):
    pass


class InsufficientSupport(DfaxError):
    pass


class EmptyDataset(DfaxError):
    pass


class InsufficientClasses(DfaxError):
    pass


class SubsetBlowup(DfaxError):
    pass


class ParseError(DfaxError):
    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.column = column


class DeserializeError(DfaxError):
    pass


class VersionMismatch(DeserializeError):
    pass


class IoError(DfaxError, OSError):
    pass


# dimension / consistency problems (exit 3)
class ConsistencyError(DfaxError):
    exit_code = 3


class DimensionMismatch(ConsistencyError):
    pass


class MapMismatch(ConsistencyError):
    pass


class HashMismatch(ConsistencyError):
    pass


class MissingTargetClass(ConsistencyError):
    pass


class DegenerateComplement(ConsistencyError):
    pass


# classifier access problems (exit 4)
class ModelUnavailable(DfaxError):
    exit_code = 4

    def __init__(self, message, retries=0):
        super().__init__(f"{message} (after {retries} retries)" if retries else message)
        self.retries = retries


class InvalidModelOutput(ModelUnavailable):
    pass


class TrialFailed(DfaxError):
    exit_code = 4

    def __init__(self, message, trial=None, completed=None):
        super().__init__(message)
        self.trial = trial
        self.completed = list(completed or [])
