from typing import Any, Dict, Optional, Sequence, Type, TypeVar, Union

import jsonpickle
from pydantic import BaseModel, ValidationError


class ConfigValidationError(Exception):
    """
    Error raised when a run configuration (or one of its sections) is invalid
    """

    def __init__(self,
                 errors: Optional[Sequence[Dict[str, Any]]] = None,
                 message: str = None,
                 schemas: Dict[str, Any] = None):
        self.errors = errors or []
        self.message = message or 'Configuration was not validated successfully'
        self.schemas = schemas or {}

    def __str__(self):
        locations = ', '.join('.'.join(str(part) for part in error.get('loc', ())) for error in self.errors)
        return f'{self.message}: {locations}' if locations else self.message


# Configuration models must inherit from pydantic's BaseModel
T = TypeVar('T', bound=BaseModel)


def resolve_config(data: Union[str, bytes, Dict[str, Any]], config_type: Type[T]) -> T:
    """
    Resolves a configuration model from JSON text or an already decoded dict. Validates the
    data against the model and raises ConfigValidationError if it does not comply.

    :param data: The configuration as string, bytes or dictionary.
    :param config_type: The model type to resolve
    :return: The resolved configuration
    """
    if not (isinstance(config_type, type) and issubclass(config_type, BaseModel)):
        name = getattr(config_type, '__name__', repr(config_type))
        raise ValueError(f'Unsupported config type: {name}. Type must be subclass of pydantic.BaseModel')

    try:
        if isinstance(data, (str, bytes)):
            data = jsonpickle.loads(data)

        return config_type(**data)
    except ValidationError as ex:
        raise ConfigValidationError(errors=ex.errors(),
                                    schemas={config_type.__name__: config_type.schema()}) from ex
    except (TypeError, ValueError) as ex:
        # jsonpickle.loads raises these when the text is not JSON; ** raises TypeError for non mappings.
        errors = [
            {
                'loc': ['config'],
                'msg': 'Configuration either did not exist or was not a valid JSON object.'
            }
        ]
        raise ConfigValidationError(
            message='Configuration could not be validated due to given json not existing or being valid',
            errors=errors,
            schemas={config_type.__name__: config_type.schema()}
        ) from ex
