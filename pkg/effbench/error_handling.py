import sys
import traceback
from functools import wraps

import click
from loguru import logger

from effbench.consts import EXIT_COMPATIBILITY, EXIT_RUNTIME, EXIT_SPEC


class EffbenchError(Exception):
    def __init__(self, description, code=EXIT_RUNTIME):
        super().__init__(description)
        self.description = description
        self.code = code


class SpecError(EffbenchError):
    def __init__(self, description, line=None, stage=None):
        if line is not None:
            description = f"line {line}: {description}"
        if stage is not None:
            description = f"stage {stage}: {description}"
        super().__init__(description, EXIT_SPEC)
        self.line = line
        self.stage = stage


class CompatibilityError(EffbenchError):
    def __init__(self, description):
        super().__init__(description, EXIT_COMPATIBILITY)


class TensorError(EffbenchError):
    pass


class ShapeError(TensorError):
    pass


class GraphStateError(EffbenchError):
    pass


class TrainingError(EffbenchError):
    pass


class DataFormatError(EffbenchError):
    def __init__(self, description, offset=None):
        if offset is not None:
            description = f"{description} (byte offset {offset})"
        super().__init__(description)
        self.offset = offset


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class LabelRangeError(DataFormatError):
    pass


def handle_verified_exception(e):
    logger.debug(f"Exception! {e.description}")
    return e.description, e.code


def handle_unverified_exception(e, debug=False):
    msg = traceback.format_exc()
    logger.error(msg)
    if not debug:
        msg = f"Something went wrong: {e}"
    return msg, EXIT_RUNTIME


def handles_errors(func):
    """Turn package errors raised by a command into an exit code and a stderr message."""

    @wraps(func)
    def func_wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (click.exceptions.ClickException, click.exceptions.Exit, SystemExit):
            raise
        except EffbenchError as e:
            message, code = handle_verified_exception(e)
        except Exception as e:
            ctx = click.get_current_context(silent=True)
            debug = bool(ctx and ctx.obj and ctx.obj.DEBUG)
            message, code = handle_unverified_exception(e, debug=debug)
        click.echo(f"error: {message}", err=True)
        sys.exit(code)

    return func_wrapper
