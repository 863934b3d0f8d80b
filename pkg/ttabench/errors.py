from typing import Any, Optional

USAGE_ERROR_EXIT_CODE = 2
RUNTIME_ERROR_EXIT_CODE = 3
DEFAULT_ERROR_MESSAGE = "Unknown failure in ttabench"


class TTABenchError(Exception):
    _EXIT_CODE = RUNTIME_ERROR_EXIT_CODE

    def __init__(self, message: Optional[str] = None, **context: Any):
        super().__init__(message)
        self._message = message
        self.context = context

    @property
    def message(self) -> str:
        return self._message or DEFAULT_ERROR_MESSAGE

    @property
    def exit_code(self) -> int:
        return self._EXIT_CODE

    def __str__(self):
        return "{} (exit: {})".format(self.message, self.exit_code)


class ValidationError(TTABenchError):
    _EXIT_CODE = USAGE_ERROR_EXIT_CODE


class DimensionMismatch(ValidationError):
    pass


class ModeMismatch(ValidationError):
    pass


class UnknownMethodError(ValidationError):
    def __init__(self, tag: str, suggestions=(), available=()):
        self.tag = tag
        self.suggestions = tuple(suggestions)
        self.available = tuple(available)
        message = "Unknown method tag '{}'".format(tag)
        if self.suggestions:
            message += "; did you mean: {}".format(", ".join(self.suggestions))
        if self.available:
            message += "; available tags: {}".format(", ".join(self.available))
        super().__init__(message, tag=tag)


class BundleFormatError(TTABenchError):
    pass


class DegenerateInput(TTABenchError):
    pass


class NoConfidenceError(TTABenchError):
    pass
