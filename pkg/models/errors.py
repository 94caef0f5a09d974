"""Exception hierarchy. Every class carries the exit code the CLI reports."""

from typing import Any, Dict, Optional


class ShapeLinkerError(Exception):
    exit_code = 1


class InvalidInputError(ShapeLinkerError, ValueError):
    exit_code = 2


class SmilesError(InvalidInputError):
    """SMILES rejected by the parser; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class SmilesSyntaxError(SmilesError):
    pass


class UnclosedRingError(SmilesError):
    pass


class UnclosedBranchError(SmilesError):
    pass


class ValenceError(SmilesError):
    pass


class MultiFragmentError(SmilesError):
    pass


class EmbeddingFailedError(InvalidInputError):
    pass


class NumericError(ShapeLinkerError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, layer: Optional[str] = None):
        self.layer = layer
        if layer is not None:
            message = f"{message} [{layer}]"
        super().__init__(message)


class SamplingFailedError(NumericError):
    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message, layer="surface")


class TrainingFailedError(NumericError):
    def __init__(self, message: str, epoch: int, diagnostics: Optional[Dict[str, Any]] = None):
        self.epoch = epoch
        self.diagnostics = dict(diagnostics or {})
        super().__init__(f"{message} at epoch {epoch}", layer="training")
