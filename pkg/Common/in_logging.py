import logging

from pythonjsonlogger import jsonlogger

from .in_config import LOG_LEVEL


class JSONFormatter(jsonlogger.JsonFormatter):
    """
    JSON formatter for the lab's loggers.
    Emits one object per record with the fields the reports are grepped by.
    """

    def add_fields(self, log_record, record, message_dict):
        """
        Populate the JSON object for a record.

        Args:
            log_record (dict): The output mapping being built.
            record (logging.LogRecord): The log record to format.
            message_dict (dict): Fields parsed from a dict message.
        """
        super().add_fields(log_record, record, message_dict)
        log_record["level"] = record.levelname
        log_record["time"] = self.formatTime(record, self.datefmt)
        log_record["name"] = record.name
        log_record["filename"] = record.filename
        log_record["lineno"] = record.lineno


def set_log_level(level: str) -> None:
    """Apply a level to every logger created by get_service_logger."""
    for name in list(logging.root.manager.loggerDict):
        logger = logging.getLogger(name)
        if getattr(logger, "_flowlab", False):
            logger.setLevel(level)
            for handler in logger.handlers:
                handler.setLevel(level)


def get_service_logger(name: str) -> logging.Logger:
    """
    Get a configured logger with a JSON formatter.

    Args:
        name (str): The name of the logger.

    Returns:
        logging.Logger: The configured logger.
    """
    logger = logging.getLogger(name)
    if getattr(logger, "_flowlab", False):
        return logger

    logger.setLevel(LOG_LEVEL)

    # stderr, so CSV written to stdout stays clean
    console_handler = logging.StreamHandler()
    console_handler.setLevel(LOG_LEVEL)
    console_handler.setFormatter(JSONFormatter("%(message)s"))

    logger.addHandler(console_handler)
    logger.propagate = False
    logger._flowlab = True

    return logger
