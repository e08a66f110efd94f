from typing import Any


class SublabError(Exception):
    """Base class for errors raised by the laboratory's services.

    These exceptions carry a human-readable ``detail`` and never know about the
    command line. The CLI maps them to exit codes and a JSON error record in one
    place (see ``sublab.cli.error_handlers``).
    """

    def __init__(self, detail: str) -> None:
        self.detail = detail
        super().__init__(detail)


class InputDomainError(SublabError):
    """An argument lies outside its domain (token id, class label, ...)."""


class ShapeError(SublabError):
    """Operand shapes are incompatible."""


class ContractError(SublabError):
    """A documented precondition of an operation was violated."""


class DegenerateInputError(SublabError):
    """Labels carry a single class, so no classifier can be fit."""


class UndefinedSimilarityError(SublabError):
    """A representation is constant after centering; similarity is undefined."""


class StorageError(SublabError):
    """A persisted corpus, checkpoint or embedding file is malformed."""


class RunError(SublabError):
    """Training diverged; ``diagnostics`` says where."""

    def __init__(self, detail: str, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(detail)
        self.diagnostics = diagnostics or {}
