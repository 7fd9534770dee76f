"""
Logging configuration and optional Sentry error tracking.
"""
import logging
import sys
from typing import Optional

from app.config import settings


def setup_logging(log_level: str = "INFO") -> logging.Logger:
    """
    Set up console logging for library and CLI use.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Configured root logger
    """
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    formatter = logging.Formatter(
        fmt='%(asctime)s | %(levelname)s | %(name)s | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(numeric_level)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    root_logger.handlers.clear()
    root_logger.addHandler(console_handler)

    # Reduce noise from third-party libraries
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('urllib3').setLevel(logging.WARNING)

    return root_logger


def setup_sentry() -> bool:
    """
    Initialize Sentry for error tracking of benchmark runs.
    Only activates if DGP_SENTRY_DSN is configured.

    Returns:
        True when Sentry was initialized
    """
    sentry_dsn = getattr(settings, 'sentry_dsn', None)

    if not sentry_dsn:
        logging.getLogger('dgpselect').debug("Sentry DSN not configured - error tracking disabled")
        return False

    try:
        import sentry_sdk

        sentry_sdk.init(
            dsn=sentry_dsn,
            environment=settings.environment,
            traces_sample_rate=0.0,
            send_default_pii=False,
        )
        logging.getLogger('dgpselect').info("Sentry initialized successfully")
        return True

    except ImportError:
        logging.getLogger('dgpselect').warning("sentry-sdk not installed - error tracking disabled")
    except Exception as e:
        logging.getLogger('dgpselect').error("Failed to initialize Sentry: %s", e)
    return False


def report_stage_failure(stage: str, error: BaseException) -> Optional[str]:
    """
    Send a benchmark stage failure to Sentry, tagged with the stage name.

    Returns:
        Sentry event id, or None when tracking is disabled
    """
    if not settings.sentry_dsn:
        return None
    try:
        import sentry_sdk

        with sentry_sdk.new_scope() as scope:
            scope.set_tag("stage", stage)
            return sentry_sdk.capture_exception(error)
    except Exception as e:
        logging.getLogger('dgpselect').warning("Could not report failure to Sentry: %s", e)
        return None


# Package logger
logger = logging.getLogger('dgpselect')
