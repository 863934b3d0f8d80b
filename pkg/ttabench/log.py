"""Rendering for the ``"template {field}"`` + ``extra={...}`` logging convention used across the package."""
import logging
import string

_RESERVED = frozenset(logging.LogRecord("", 0, "", 0, "", (), None).__dict__) | {"message", "asctime"}


class ExtraFieldsFormatter(logging.Formatter):
    """Formats the record message as a ``str.format`` template filled from the record's extras.

    Placeholders with no matching extra are left as they are.
    """

    def format(self, record):
        extras = {k: v for k, v in record.__dict__.items() if k not in _RESERVED}
        if extras and isinstance(record.msg, str):
            record.msg = string.Formatter().vformat(record.msg, (), _KeepMissing(extras))
        return super().format(record)


class _KeepMissing(dict):
    def __missing__(self, key):
        return "{" + key + "}"


def configure_logging(level="WARNING", stream=None):
    handler = logging.StreamHandler(stream)
    handler.setFormatter(ExtraFieldsFormatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    root = logging.getLogger("ttabench")
    root.handlers[:] = [handler]
    root.setLevel(level if isinstance(level, int) else str(level).upper())
    root.propagate = False
    return root
