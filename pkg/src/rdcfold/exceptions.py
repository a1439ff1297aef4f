"""Exception hierarchy shared by every rdcfold module."""


class RdcFoldError(Exception):
    """Base class for all errors raised by rdcfold."""


class ValidationError(RdcFoldError, ValueError):
    """An input violates a documented precondition."""


class InputShapeError(ValidationError):
    """Sequence lengths or array shapes are inconsistent."""


class ParseError(ValidationError):
    """A data file line could not be parsed."""

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        where = ""
        if path is not None:
            where = f"{path}:"
        if line_number is not None:
            where += f"{line_number}:"
        super().__init__(f"{where} {message}" if where else message)


class InsufficientDataError(RdcFoldError):
    """Too few RDC records to determine an order tensor."""

    def __init__(self, message, residue=None, medium=None):
        self.residue = residue
        self.medium = medium
        super().__init__(message)


class SearchError(RdcFoldError):
    """A Stage 2 iteration failed; carries the failing iteration index."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class WorkerError(RdcFoldError):
    """A worker failed while evaluating its chunk."""

    def __init__(self, message, worker_id, combination_index=None):
        self.worker_id = worker_id
        self.combination_index = combination_index
        super().__init__(f"worker {worker_id}: {message}")
