# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Declarative, validated settings sections.

A section is a plain class whose annotated attributes become fields::

  >>> @schema
  ... class TilingSettings:
  ...   tile_size: int = Field(default=512, minimum=1)
  ...   overlap: int = Field(default=64, minimum=0)

  >>> load_schema(TilingSettings, {"tile_size": "256"})
  TilingSettings(tile_size=256, overlap=64)

  >>> load_schema(TilingSettings, {"tile_size": 0})
  Traceback (most recent call last):
    ...
  ValidationError: invalid settings: tile_size: value must be >= 1
"""

import re
from typing import (
    Any, Callable, Dict, Generic, List, Optional, Sequence, Type, TypeVar, Union, get_type_hints,
    no_type_check
)

from typing_extensions import Protocol

from .errors import FieldValidationError, ValidationError
from .typing import extract_optional_annotation, list_item_annotation

_T = TypeVar("_T")


class _Missing:
    """The type of missing values.
    """

    def __repr__(self) -> str:  # pragma: no cover
        return "Missing"


#: Canary value representing missing attributes or values.
Missing = _Missing()

_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off"}


def is_schema(ob: Any) -> bool:
    """Returns True if the given type is a schema.
    """
    return isinstance(ob, type) and hasattr(ob, "_SCHEMA") and hasattr(ob, "_FIELDS")


@no_type_check
def field(*args, **kwargs) -> Any:
    """An alias for :class:`.Field` that keeps type checkers quiet
    about defaults.
    """
    return Field(*args, **kwargs)


class Validator(Protocol[_T]):  # pragma: no cover
    """Validators ensure that values conform to arbitrary constraints.
    """

    def can_validate_field(self, field: "Field[_T]") -> bool:
        """Returns True if this validator understands the given field.
        """
        ...

    @no_type_check
    def validate(self, field: "Field[_T]", value: Any, **options: Any) -> _T:
        """Validate and possibly transform the given value.

        Raises:
          FieldValidationError: If the value is not valid.
        """
        ...


class Field(Generic[_T]):
    """An individual setting on a schema.

    Parameters:
      name: The name of the field.  Populated by @schema.
      annotation: The field's annotation.  Populated by @schema.
      description: A short human-readable description.
      default: The default value of the field.
      default_factory: A callable producing the default value.
      allow_coerce: Whether or not values may be converted to the
        field's type.  Command-line overrides always arrive as strings
        so this defaults to True.
      validator: An explicit validator.  Picked automatically for
        numbers, strings, lists and nested schemas.
      **validator_options: Options passed to the validator, such as
        ``minimum``, ``maximum``, ``choices`` or ``min_items``.
    """

    __slots__ = [
        "name",
        "annotation",
        "description",
        "default",
        "default_factory",
        "allow_coerce",
        "validator",
        "validator_options",
    ]

    def __init__(
            self,
            name: Optional[str] = None,
            annotation: Optional[Any] = None,
            description: Optional[str] = None,
            default: Union[_T, _Missing] = Missing,
            default_factory: Optional[Callable[[], _T]] = None,
            allow_coerce: bool = True,
            validator: Optional[Validator[_T]] = None,
            **validator_options: Any,
    ) -> None:
        self.name = name
        self.annotation = annotation
        self.description = description
        self.default = default
        self.default_factory = default_factory
        self.allow_coerce = allow_coerce
        self.validator = validator
        self.validator_options = validator_options

    @property
    def has_default(self) -> bool:
        return self.default is not Missing or self.default_factory is not None

    def select_validator(self) -> None:
        if self.validator is None:
            self.validator = _select_validator(self)

        if self.validator_options and self.validator is None:
            raise RuntimeError(f"no validator could be selected for field {self.name!r}")

    def make_default(self) -> Any:
        if self.default_factory is not None:
            return self.default_factory()
        return self.default

    @no_type_check
    def validate(self, value: Any) -> _T:
        """Validate and possibly coerce the given value.

        Raises:
          FieldValidationError: When the value is not valid.
          ValidationError: When a nested schema is not valid.
        """
        is_optional, annotation = extract_optional_annotation(self.annotation)
        if value is Missing:
            if self.has_default:
                return self.make_default()

            elif is_optional:
                return None

            raise FieldValidationError("this field is required")

        if value is None:
            if not is_optional:
                raise FieldValidationError("this field cannot be null")

            return value

        if annotation in (bool, int, float, str):
            value = self._check_scalar(annotation, value)

        if self.validator:
            return self.validator.validate(self, value, **self.validator_options)
        return value

    def _check_scalar(self, annotation: Type[Any], value: Any) -> Any:
        # bool is a subclass of int so it has to be rejected by hand.
        if isinstance(value, annotation) and not (annotation is not bool and isinstance(value, bool)):
            return value

        if annotation is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)

        if not self.allow_coerce:
            raise FieldValidationError(f"unexpected type {type(value).__name__}")

        return coerce(annotation, value)

    def __repr__(self) -> str:
        params = ", ".join(f"{name}={getattr(self, name)!r}" for name in self.__slots__)
        return f"{type(self).__name__}({params})"


def coerce(annotation: Any, value: Any) -> Any:
    """Convert a (usually string) value to the given annotation.

    Raises:
      FieldValidationError: When the value cannot be converted.
    """
    _, annotation = extract_optional_annotation(annotation)
    if annotation is bool:
        text = str(value).strip().lower()
        if text in _TRUTHY:
            return True
        if text in _FALSY:
            return False
        raise FieldValidationError(f"value {value!r} could not be coerced to bool")

    item_annotation = list_item_annotation(annotation)
    if item_annotation is not None:
        if isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        return [coerce(item_annotation, item) for item in value]

    if annotation in (int, float, str):
        if annotation is not str and isinstance(value, bool):
            raise FieldValidationError(f"value {value!r} could not be coerced to {annotation.__name__}")

        if annotation is int and isinstance(value, float) and not value.is_integer():
            raise FieldValidationError(f"value {value!r} is not an integer")

        try:
            if annotation is int and isinstance(value, str):
                return int(value.strip(), 10)
            return annotation(value)
        except (TypeError, ValueError):
            raise FieldValidationError(f"value {value!r} could not be coerced to {annotation.__name__}")

    return value


class NumberValidator:
    """Validates ints and floats.
    """

    def can_validate_field(self, field: Field[_T]) -> bool:
        _, annotation = extract_optional_annotation(field.annotation)
        return annotation is int or annotation is float

    def validate(
            self,
            field: Field[_T],
            value: Union[int, float],
            minimum: Optional[Union[int, float]] = None,
            maximum: Optional[Union[int, float]] = None,
            exclusive_minimum: Optional[Union[int, float]] = None,
            exclusive_maximum: Optional[Union[int, float]] = None,
    ) -> Union[int, float]:
        if minimum is not None and value < minimum:
            raise FieldValidationError(f"value must be >= {minimum}")

        if maximum is not None and value > maximum:
            raise FieldValidationError(f"value must be <= {maximum}")

        if exclusive_minimum is not None and value <= exclusive_minimum:
            raise FieldValidationError(f"value must be > {exclusive_minimum}")

        if exclusive_maximum is not None and value >= exclusive_maximum:
            raise FieldValidationError(f"value must be < {exclusive_maximum}")

        return value


class StringValidator:
    """Validates strings.
    """

    def can_validate_field(self, field: Field[_T]) -> bool:
        _, annotation = extract_optional_annotation(field.annotation)
        return annotation is str

    def validate(
            self,
            field: Field[_T],
            value: str,
            choices: Optional[Sequence[str]] = None,
            pattern: Optional[str] = None,
            min_length: Optional[int] = None,
    ) -> str:
        if choices is not None and value not in choices:
            raise FieldValidationError(f"must be one of: {', '.join(repr(choice) for choice in choices)}")

        if pattern is not None and not re.match(pattern, value):
            raise FieldValidationError(f"must match pattern {pattern!r}")

        if min_length is not None and len(value) < min_length:
            raise FieldValidationError(f"length must be >= {min_length}")

        return value


class ListValidator:
    """Validates lists, checking every item against the list's type
    parameter.
    """

    def can_validate_field(self, field: Field[_T]) -> bool:
        _, annotation = extract_optional_annotation(field.annotation)
        return list_item_annotation(annotation) is not None

    @no_type_check
    def validate(
            self,
            field: Field[_T],
            value: List[Any],
            min_items: Optional[int] = None,
            max_items: Optional[int] = None,
            item_options: Optional[Dict[str, Any]] = None,
    ) -> List[Any]:
        _, annotation = extract_optional_annotation(field.annotation)
        if isinstance(value, (str, tuple)) and field.allow_coerce:
            value = coerce(annotation, value)

        if not isinstance(value, list):
            raise FieldValidationError("value must be a list")

        if min_items is not None and len(value) < min_items:
            raise FieldValidationError(f"length must be >= {min_items}")

        if max_items is not None and len(value) > max_items:
            raise FieldValidationError(f"length must be <= {max_items}")

        item_field = Field(annotation=list_item_annotation(annotation), **(item_options or {}))
        item_field.select_validator()

        items = []
        for i, item in enumerate(value):
            try:
                items.append(item_field.validate(item))
            except FieldValidationError as e:
                raise ValidationError({i: str(e)})
            except ValidationError as e:
                raise ValidationError({i: e.reasons})

        return items


class SchemaValidator:
    """Validates dictionaries against nested schema classes.
    """

    def can_validate_field(self, field: Field[_T]) -> bool:
        _, annotation = extract_optional_annotation(field.annotation)
        return is_schema(annotation)

    def validate(self, field: Field[_T], value: Any) -> Any:
        _, annotation = extract_optional_annotation(field.annotation)
        if isinstance(value, annotation):
            return value

        if not isinstance(value, dict):
            raise FieldValidationError("value must be a table")

        return load_schema(annotation, value)


#: The set of built-in validators.  Fields will attempt to use one of
#: these unless otherwise specified.
VALIDATORS: List[Validator[Any]] = [
    NumberValidator(),
    StringValidator(),
    ListValidator(),
    SchemaValidator(),
]


def _select_validator(field: Field[_T]) -> Optional[Validator[_T]]:
    for validator in VALIDATORS:
        if validator.can_validate_field(field):
            return validator
    return None


def schema(cls: Type[_T]) -> Type[_T]:
    """Turn a class with annotated attributes into a schema with
    generated ``__init__``, ``__eq__`` and ``__repr__`` methods.

    Raises:
      RuntimeError: When the attributes are invalid.
    """
    fields: Dict[str, Field[Any]] = {}
    for base in cls.__mro__[-1:0:-1]:
        fields.update(getattr(base, "_FIELDS", {}))

    found_default = False
    for name, annotation in get_type_hints(cls).items():
        value = cls.__dict__.get(name, Missing)
        if isinstance(value, Field):
            value.name = name
            value.annotation = annotation
            fields[name] = value
        elif value is not Missing or name not in fields:
            fields[name] = Field(name=name, annotation=annotation, default=value)

        current = fields[name]
        current.select_validator()
        if current.has_default:
            found_default = True
        elif found_default:
            raise RuntimeError("attributes without a default cannot follow ones with a default")

        if name in cls.__dict__:
            delattr(cls, name)

    if not fields:
        raise RuntimeError(f"schema {cls.__name__} doesn't have any fields")

    setattr(cls, "__slots__", list(fields))
    setattr(cls, "_SCHEMA", True)
    setattr(cls, "_FIELDS", fields)
    _install(cls, "__init__", *_init_source(fields))
    _install(cls, "__eq__", ["self", "other"], _EQ_BODY)
    _install(cls, "__repr__", ["self"], _REPR_BODY)
    return cls


@no_type_check
def load_schema(schema: Type[_T], data: Dict[str, Any]) -> _T:
    """Validate a settings dictionary against a schema and instantiate it.

    Raises:
      TypeError: When schema isn't a schema.
      ValidationError: When the data is not valid.  Every bad or
        unknown key is reported at once.
    """
    if not is_schema(schema):
        raise TypeError(f"{schema} is not a schema")

    errors, params = {}, {}
    for name in data:
        if name not in schema._FIELDS:
            errors[name] = "unknown setting"

    for field in schema._FIELDS.values():
        try:
            params[field.name] = field.validate(data.get(field.name, Missing))
        except FieldValidationError as e:
            errors[field.name] = str(e)
        except ValidationError as e:
            errors[field.name] = e.reasons

    if errors:
        raise ValidationError(errors)

    return schema(**params)


@no_type_check
def dump_schema(ob: Any) -> Dict[str, Any]:
    """Convert a schema instance into a dictionary.

    Raises:
      TypeError: If ob is not a schema instance.
    """
    if not is_schema(type(ob)):
        raise TypeError(f"{ob} is not a schema")

    data = {}
    for name in ob._FIELDS:
        value = getattr(ob, name)
        if is_schema(type(value)):
            value = dump_schema(value)
        elif isinstance(value, list):
            value = list(value)
        data[name] = value
    return data


def _init_source(fields: Dict[str, Field[Any]]) -> Any:
    namespace: Dict[str, Any] = {}
    params, body = ["self"], []
    for field in fields.values():
        if field.has_default:
            # Defaults are produced per instance so mutable ones aren't shared.
            namespace[f"_{field.name}_field"] = field
            params.append(f"{field.name}=Missing")
            body.append(f"self.{field.name} = _{field.name}_field.make_default() "
                        f"if {field.name} is Missing else {field.name}")
        else:
            params.append(field.name)
            body.append(f"self.{field.name} = {field.name}")
    return params, body, namespace


def _install(
        cls: Type[Any],
        name: str,
        params: List[str],
        body: List[str],
        namespace: Optional[Dict[str, Any]] = None,
) -> None:
    if name in cls.__dict__:
        return

    source = f"def {name}({', '.join(params)}):\n    " + "\n    ".join(body)
    fn_globals = {"Missing": Missing, **(namespace or {})}
    fn_locals: Dict[str, Any] = {}
    exec(source, fn_globals, fn_locals)
    setattr(cls, name, fn_locals[name])


_EQ_BODY = [
    "if type(other) is not type(self):",
    "    return NotImplemented",
    "return all(getattr(self, name) == getattr(other, name) for name in self._FIELDS)",
]

_REPR_BODY = [
    "params = ', '.join(f'{name}={getattr(self, name)!r}' for name in self._FIELDS)",
    "return f'{type(self).__name__}({params})'",
]
