"""Logging utilities for the dyad validation pipeline."""

import logging
import logging.handlers
import os
import threading
import time


class ThreadSafeRotatingFileHandler(logging.handlers.RotatingFileHandler):
    """A thread-safe version of RotatingFileHandler."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.emit_lock = threading.Lock()

    def emit(self, record):
        """Thread-safe emit with retry logic."""
        tries = 0
        while tries < 3:  # Retry up to 3 times
            try:
                with self.emit_lock:
                    super().emit(record)
                break
            except Exception:
                tries += 1
                time.sleep(0.1)


FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DETAILED_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
CONSOLE_FORMAT = '%(levelname)s - %(message)s'


def attach_file_handlers(logger, log_dir, level=logging.DEBUG):
    """Attach the rotating debug and error files to ``logger``.

    Args:
        logger: Logger to configure
        log_dir: Directory for ``debug.log`` and ``error.log``
        level: Level of the debug file handler

    Returns:
        list: The handlers that were added (empty if already attached)

    Handlers of a previous run directory are closed and replaced.
    """
    os.makedirs(log_dir, exist_ok=True)
    debug_path = os.path.abspath(os.path.join(log_dir, "debug.log"))
    for handler in logger.handlers:
        if getattr(handler, 'baseFilename', None) == debug_path:
            return []

    # One run directory at a time
    for handler in list(logger.handlers):
        if isinstance(handler, ThreadSafeRotatingFileHandler):
            handler.close()
            logger.removeHandler(handler)

    detailed_formatter = logging.Formatter(DETAILED_FORMAT)

    # Debug file handler - for detailed debug information
    debug_handler = ThreadSafeRotatingFileHandler(
        debug_path,
        maxBytes=10*1024*1024,  # 10MB
        backupCount=5
    )
    debug_handler.setLevel(level)
    debug_handler.setFormatter(detailed_formatter)

    # Error file handler - for warnings and errors
    error_handler = ThreadSafeRotatingFileHandler(
        os.path.join(log_dir, "error.log"),
        maxBytes=5*1024*1024,  # 5MB
        backupCount=3
    )
    error_handler.setLevel(logging.WARNING)
    error_handler.setFormatter(detailed_formatter)

    logger.addHandler(debug_handler)
    logger.addHandler(error_handler)
    return [debug_handler, error_handler]


def setup_group_logger(group_id: str, log_dir: str = "logs") -> logging.Logger:
    """Set up a dedicated logger for one agent group's run.

    Args:
        group_id: Group name (model name or "human")
        log_dir: Directory to store log files

    Returns:
        Logger instance writing ``<group>_run.log``
    """
    os.makedirs(log_dir, exist_ok=True)

    safe_name = ''.join(c if c.isalnum() or c in '-_.' else '_' for c in group_id)
    logger = logging.getLogger(f"dyad_validation.group.{safe_name}")
    logger.setLevel(logging.DEBUG)

    # Remove any existing handlers to avoid duplicate logging
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)

    fh = ThreadSafeRotatingFileHandler(
        os.path.join(log_dir, f"{safe_name.lower()}_run.log"),
        maxBytes=10*1024*1024,
        backupCount=2
    )
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(logging.Formatter(FILE_FORMAT))
    logger.addHandler(fh)

    return logger
