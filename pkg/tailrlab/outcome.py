import functools
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence, TextIO

from tailrlab.bounds import VerificationFailedError
from tailrlab.config import MissingEnvironmentVariableError
from tailrlab.form import ConfigValidationError
from tailrlab.serialization import CamelCaseAttributesMixin, to_json

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


class ErrorDetail(CamelCaseAttributesMixin):
    """
    Describes one offending field or check and why it caused the run to fail.
    """

    def __init__(self, description: str, location: str):
        self.description = description
        self.location = location

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ErrorDetail) and \
               other.location == self.location and \
               other.description == self.description

    def __ne__(self, other: object) -> bool:
        return not self == other

    def __repr__(self):
        return f'ErrorDetail(description={self.description}, location={self.location})'


class Outcome(CamelCaseAttributesMixin):
    """
    The result of one CLI subcommand. Successful outcomes carry the list of produced files,
    failed outcomes carry error details (and schemas for configuration errors).
    """

    def __init__(self,
                 success: bool,
                 exit_code: int,
                 message: str,
                 error_details: Optional[Sequence[ErrorDetail]] = None,
                 schemas: Optional[Dict[str, Any]] = None,
                 files: Optional[Sequence[str]] = None):
        self.success = success
        self.exit_code = exit_code
        self.message = message
        self.error_details = list(error_details or [])
        self.schemas = schemas or {}
        self.files = list(files or [])

    def to_json(self) -> str:
        return to_json(self)

    def __repr__(self):
        return (f'Outcome(success={self.success}, exit_code={self.exit_code}, '
                f'message=\'{self.message}\', error_details={self.error_details})')


def ok(message: str = 'Run completed successfully', files: Optional[Sequence[str]] = None) -> Outcome:
    return Outcome(success=True, exit_code=EXIT_OK, message=message, files=files)


def verification_failed(error_details: Sequence[ErrorDetail]) -> Outcome:
    """
    :param error_details: One detail per failing check
    :return: Verification failure outcome
    """
    return Outcome(success=False,
                   exit_code=EXIT_VERIFICATION_FAILED,
                   message='One or more verification checks exceeded their tolerance.',
                   error_details=error_details)


def bad_config(error_details: Sequence[ErrorDetail] = None,
               schemas: Optional[Dict[str, Any]] = None) -> Outcome:
    """
    :param error_details: Details on which configuration fields were rejected
    :param schemas: Schemas of the models the configuration was validated against
    :return: Configuration error outcome
    """
    return Outcome(success=False,
                   exit_code=EXIT_CONFIG_ERROR,
                   message='Given configuration was incorrect. Consult the below details to address the issue.',
                   error_details=error_details or [],
                   schemas=schemas if schemas is not None else {})


def runtime_error(ex: Exception) -> Outcome:
    return Outcome(success=False,
                   exit_code=EXIT_RUNTIME_ERROR,
                   message='Run failed due to a runtime error',
                   error_details=[ErrorDetail(description=str(ex), location=type(ex).__name__)])


def emit(outcome: Outcome, stream: Optional[TextIO] = None) -> int:
    """
    Writes failed outcomes as JSON to standard error and returns the exit code.
    """
    if not outcome.success:
        stream = stream or sys.stderr
        stream.write(outcome.to_json())
    return outcome.exit_code


def error_handler(decorated):
    """
    Wraps a subcommand so that every exception becomes an Outcome with the right exit code.
    Apply it as the innermost decorator of each command.

    @error_handler
    def cmd_verify(config):
        # command logic that potentially raises errors
    :param decorated: The command implementation that will be extended with error handling
    :return: The decorated command
    """

    @functools.wraps(decorated)
    def wrapped_handler(*args, **kwargs) -> Outcome:
        try:
            return decorated(*args, **kwargs)
        except VerificationFailedError as ex:
            details = [ErrorDetail(description=description, location=name) for name, description in ex.failures]
            return verification_failed(details)
        except ConfigValidationError as ex:
            return bad_config(error_details=_build_error_details(ex.errors), schemas=ex.schemas)
        except MissingEnvironmentVariableError as ex:
            return bad_config(error_details=[ErrorDetail(description=str(ex), location=ex.env_var_name)])
        except Exception as ex:
            logger = logging.getLogger(__name__)
            logger.error('Command %s failed with an unexpected error', decorated.__name__)
            logger.exception(ex)
            return runtime_error(ex)

    return wrapped_handler


def _build_error_details(errors: List[Dict[str, Any]]) -> Sequence[ErrorDetail]:
    """
    Flattens pydantic error locations into dotted paths such as verify.trials

    :param errors: Errors as reported by ValidationError.errors()
    :return: List of error details built from given pydantic errors
    """
    return [ErrorDetail(location='.'.join(str(part) for part in error['loc']), description=error['msg'])
            for error in errors]
