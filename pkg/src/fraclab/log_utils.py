from __future__ import annotations

import logging

log_config = {
    "version": 1,
    "disable_existing_loggers": False,  # keep module loggers created at import time
    "formatters": {
        "default": {"format": "[%(asctime)s] %(levelname)-2s: %(name)-20s %(message)s"},
    },
    "handlers": {
        "default": {
            "class": "logging.StreamHandler",
            "level": "DEBUG",
            "formatter": "default",
        },
    },
    "loggers": {
        "fraclab": {"level": "INFO"},
    },
    "root": {
        "level": "WARNING",
        "handlers": ["default"],
    },
}


def set_verbosity(verbose: bool) -> None:
    logging.getLogger("fraclab").setLevel(logging.DEBUG if verbose else logging.INFO)
