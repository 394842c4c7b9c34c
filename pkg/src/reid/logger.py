"""
Logging helpers for the reid app.

Messages carry a status prefix and optional structured data rendered as
JSON after a ``| Data:`` separator.
"""

import logging
from typing import Optional

from shared.utils import dumps_record


def get_logger(name: str = 'reid') -> logging.Logger:
    return logging.getLogger(name)


def _compose(message: str, exception: Optional[BaseException] = None,
             extra_data: Optional[dict] = None) -> str:
    if exception is not None:
        message = f"{message} | Exception: {type(exception).__name__}: {exception}"
    if extra_data:
        message = f"{message} | Data: {dumps_record(extra_data)}"
    return message


def log_success(message: str, extra_data: Optional[dict] = None, logger_name: str = 'reid') -> None:
    """Log a completed operation (training run, evaluation, export)."""
    get_logger(logger_name).info("SUCCESS: %s", _compose(message, extra_data=extra_data))


def log_info(message: str, extra_data: Optional[dict] = None, logger_name: str = 'reid') -> None:
    """Log a progress message."""
    get_logger(logger_name).info("INFO: %s", _compose(message, extra_data=extra_data))


def log_warning(message: str, extra_data: Optional[dict] = None, logger_name: str = 'reid') -> None:
    get_logger(logger_name).warning("WARNING: %s", _compose(message, extra_data=extra_data))


def log_error(message: str, exception: Optional[BaseException] = None,
              extra_data: Optional[dict] = None, logger_name: str = 'reid') -> None:
    """Log a failure; the exception type and text are appended when given."""
    get_logger(logger_name).error("ERROR: %s", _compose(message, exception, extra_data))
