class cqException(RuntimeError):
    def __init__(self, message):
        self.message = message
        super(cqException, self).__init__(message)


class ConfigurationError(cqException):
    pass


# volio

class BadMagic(cqException):
    pass


class UnsupportedDatatype(cqException):
    pass


class Truncated(cqException):
    pass


class BadRank(cqException):
    pass


class InvalidRequest(cqException):
    pass


class EmptyPlan(cqException):
    pass


class IndexOutOfRange(cqException):
    pass


class BadFormat(cqException):
    pass


# kernels and models

class ShapeMismatch(cqException):
    pass


class BadQubit(cqException):
    pass


class BadLength(cqException):
    pass


class EmptyDataset(cqException):
    pass


class BadRange(cqException):
    pass


class BadTimestep(cqException):
    pass


class EmptyBatch(cqException):
    pass


# pipeline

class MissingDiffusionModel(cqException):
    pass


class BadVersion(cqException):
    pass


class DuplicateName(cqException):
    pass


class NoRuns(cqException):
    pass


class EmptyInput(cqException):
    pass
