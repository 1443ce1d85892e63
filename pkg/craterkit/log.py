# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

import logging
import logging.config
from threading import local
from typing import Any, Optional

STATE = local()

#: The format of every log line.  Stage and item come from StageFilter.
LOG_FORMAT = "%(levelname)-8s [%(asctime)s] [%(stage)s:%(item)s] %(name)s: %(message)s"


def get_stage() -> Optional[str]:
    """Retrieves the pipeline stage for the current thread.
    """
    return getattr(STATE, "stage", None)


def get_item() -> Optional[str]:
    """Retrieves the item (usually an image stem) being processed by
    the current thread.
    """
    return getattr(STATE, "item", None)


def set_stage(stage: Optional[str], item: Optional[str] = None) -> None:
    """Set the stage and item for the current thread.  Worker threads
    inherit nothing, so per-image jobs call this themselves.
    """
    STATE.stage = stage
    STATE.item = item


class StageFilter(logging.Filter):
    """Adds the current stage and item to log records.
    """

    def filter(self, record: Any) -> bool:
        record.stage = get_stage() or "-"
        record.item = get_item() or "-"
        return True


def configure_logging(level: str = "INFO") -> None:
    """Send craterkit's log records to standard error, one per line.
    """
    logging.config.dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "filters": {
            "stage": {
                "()": "craterkit.log.StageFilter",
            },
        },
        "formatters": {
            "standard": {
                "format": LOG_FORMAT,
            },
        },
        "handlers": {
            "console": {
                "level": "DEBUG",
                "class": "logging.StreamHandler",
                "stream": "ext://sys.stderr",
                "filters": ["stage"],
                "formatter": "standard",
            },
        },
        "loggers": {
            "craterkit": {
                "handlers": ["console"],
                "level": level.upper(),
                "propagate": False,
            },
        },
    })
