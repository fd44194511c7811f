import sys
import json
import logging
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import numpy as np
import structlog
from structlog.stdlib import LoggerFactory

from ergodic_ia.config import settings


def add_timestamp(logger, method_name, event_dict):
    """Add timestamp to log entries"""
    event_dict["timestamp"] = datetime.now(timezone.utc).isoformat()
    return event_dict


def serialize_value(obj):
    """JSON serializer for numpy scalars, arrays and complex numbers"""
    if isinstance(obj, datetime):
        return obj.isoformat()
    if isinstance(obj, np.ndarray):
        # complex entries come back through this hook one by one
        return obj.tolist()
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"Object of type {type(obj)} is not JSON serializable")


def json_serializer(obj: Dict[str, Any], **kwargs) -> str:
    """Render an event dict as a JSON line"""
    return json.dumps(obj, default=serialize_value, ensure_ascii=False)


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None):
    """Setup structured logging on stderr; stdout is reserved for tables"""
    level_name = (level or settings.LOG_LEVEL).upper()
    logging.basicConfig(
        stream=sys.stderr,
        format="%(message)s",
        level=getattr(logging, level_name, logging.INFO),
        force=True,
    )

    renderer = (
        structlog.dev.ConsoleRenderer(colors=False)
        if (fmt or settings.LOG_FORMAT) == "console"
        else structlog.processors.JSONRenderer(serializer=json_serializer)
    )

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            add_timestamp,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


class EpisodeLogger:
    """Logger for protocol episodes and batches"""

    def __init__(self):
        self.logger = structlog.get_logger("episode")

    def log_episode_aborted(self, scheme: str, reason: str, attempt: int, **kwargs):
        """Log a degenerate draw that forces a resample"""
        self.logger.debug(
            "episode_aborted", scheme=scheme, reason=reason, attempt=attempt, **kwargs
        )

    def log_episode_completed(self, scheme: str, status: str, aborts: int, **kwargs):
        """Log a finished episode and its resample count"""
        self.logger.debug("episode_completed", scheme=scheme, status=status, aborts=aborts, **kwargs)

    def log_pairing(self, found: bool, slots_scanned: int, **kwargs):
        """Log the result of a complementary-pair search"""
        event = "pairing_found" if found else "pairing_not_found"
        level = "debug" if found else "warning"
        getattr(self.logger, level)(event, slots_scanned=slots_scanned, **kwargs)

    def log_batch_event(self, event: str, batch_index: int, **kwargs):
        """Log batch lifecycle events"""
        self.logger.debug(f"batch_{event}", batch_index=batch_index, **kwargs)


class SystemLogger:
    """Logger for run-level events"""

    def __init__(self):
        self.logger = structlog.get_logger("system")

    def log_startup(self, component: str, **kwargs):
        """Log component startup"""
        self.logger.info("component_startup", component=component, **kwargs)

    def log_shutdown(self, component: str, **kwargs):
        """Log component shutdown"""
        self.logger.info("component_shutdown", component=component, **kwargs)

    def log_run_complete(
        self,
        scheme: str,
        episodes_completed: int,
        episodes_aborted: int,
        wall_time_seconds: float,
        **kwargs,
    ):
        """Log run completion with counts and resource usage"""
        self.logger.info(
            "run_complete",
            scheme=scheme,
            episodes_completed=episodes_completed,
            episodes_aborted=episodes_aborted,
            wall_time_seconds=wall_time_seconds,
            **kwargs,
        )

    def log_property_check(self, name: str, passed: bool, **kwargs):
        """Log a property suite result"""
        level = "info" if passed else "error"
        getattr(self.logger, level)("property_check", property=name, passed=passed, **kwargs)


episode_logger = EpisodeLogger()
system_logger = SystemLogger()


setup_logging()
