import logging
import sys

import structlog


# Define these first to avoid ImportError in circular scenarios
def log_stage(stage: str, **kwargs):
    get_logger("ssni").info("stage", stage=stage, **kwargs)


def log_training_step(model: str, step: int, loss: float, **kwargs):
    get_logger("ssni.training").info("training_step", model=model, step=step, loss=loss, **kwargs)


def log_attack_step(mode: str, iteration: int, mean_loss: float, **kwargs):
    get_logger("ssni.attack").debug("attack_step", mode=mode, iteration=iteration, mean_loss=mean_loss, **kwargs)


def get_logger(name: str) -> structlog.BoundLogger:
    return structlog.get_logger(name)


# Configure later
def setup_logging():
    from ..config import LogFormat, settings

    if settings.logging.format == LogFormat.CONSOLE:
        renderer = structlog.dev.ConsoleRenderer()
    else:
        renderer = structlog.processors.JSONRenderer()

    level = getattr(logging, settings.logging.level.upper(), logging.INFO)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        # stderr keeps CLI JSON on stdout clean
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        wrapper_class=structlog.make_filtering_bound_logger(level),
        cache_logger_on_first_use=True,
    )

    # Stdlib redirection
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level)

    # matplotlib font cache chatter
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


# Global logger initialization
logger = get_logger("ssni")
