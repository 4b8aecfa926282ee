"""
Decorators module providing pipeline specific decorators.
"""
import inspect
import time
from functools import wraps
from typing import Callable, Optional

from core.exceptions import PhaseError
from core.logger import Log
from helpers.data_time_helper import format_duration


def _describe(f: Callable, content: Optional[str], args: tuple, kwargs: dict) -> str:
    if not content:
        return f.__name__.replace('_', ' ').capitalize()
    try:
        format_args = dict(zip(inspect.signature(f).parameters, args))
        format_args.update(kwargs)
        return content.format(**format_args)
    except (KeyError, IndexError, AttributeError):
        return content


def phase(func: Optional[Callable] = None, *, name: Optional[str] = None, content: Optional[str] = None) -> Callable:
    """
    Decorator marking a function as a pipeline phase.
    Can be used with or without parameters.

    The phase start is logged as a step, its duration on completion. Any exception
    escaping the function is re-raised as a PhaseError tagged with the phase name;
    PhaseErrors from nested phases pass through unchanged.

    @param func: Function to decorate
    @param name: Phase name used in the error tag (default: function name)
    @param content: Optional step description template. Can include {param} placeholders
    @return: Decorated function
    """

    def decorator(f: Callable) -> Callable:
        phase_name = name or f.__name__

        @wraps(f)
        def wrapper(*args, **kwargs):
            Log.step(f"{phase_name}: {_describe(f, content, args, kwargs)}")
            started = time.monotonic()
            try:
                result = f(*args, **kwargs)
            except PhaseError:
                raise
            except Exception as e:
                Log.error(f"Phase {phase_name} failed after {format_duration(time.monotonic() - started)}: "
                          f"{type(e).__name__}: {e}")
                raise PhaseError(phase_name, e) from e
            Log.info(f"Phase {phase_name} finished in {format_duration(time.monotonic() - started)}")
            return result

        wrapper.phase_name = phase_name
        return wrapper

    if func is None:
        return decorator
    return decorator(func)
