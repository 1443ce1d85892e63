# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

import os
from string import Template
from typing import Any, Dict, List, Mapping, Optional, Union, cast

import toml

#: Canary value representing missing values.
Missing = object()


class Settings(Dict[str, Any]):
    """A dictionary of raw (not yet validated) settings.
    """

    def deep_get(self, path: str, default: Optional[Any] = None) -> Optional[Any]:
        """Look up a deeply-nested setting by its path.

        Examples:

          >>> settings = Settings({"tiling": {"tile_size": 512}})
          >>> settings.deep_get("tiling.tile_size")
          512

        Raises:
          TypeError: When attempting to index into a primitive value
            or when indexing a list with a non-integer.

        Parameters:
          path: A dot-separated string representing the path to the value.
          default: The value to return if the path cannot be traversed.
        """
        root: Any = self
        for name in path.split("."):
            if isinstance(root, list):
                try:
                    root = root[int(name)]
                except (IndexError, ValueError):
                    raise TypeError(f"invalid index '{name}' for list {root!r}")

            elif isinstance(root, dict):
                root = root.get(name, Missing)

            else:
                raise TypeError(f"value {root!r} at subpath '{name}' is not a list or a dict")

            if root is Missing:
                return default

        return root

    def strict_get(self, path: str) -> Any:
        """Get a required setting.

        Raises:
          RuntimeError: If the value for that setting cannot be found.
        """
        value = self.deep_get(path, Missing)
        if value is Missing:
            raise RuntimeError(f"Cannot find required setting at path {path!r}.")

        return value

    def deep_set(self, path: str, value: Any) -> None:
        """Set a nested setting, creating intermediate tables as needed.
        """
        *parents, name = path.split(".")
        root: Dict[str, Any] = self
        for parent in parents:
            child = root.setdefault(parent, {})
            if not isinstance(child, dict):
                raise TypeError(f"setting {parent!r} in path {path!r} is not a table")
            root = child
        root[name] = value

    def merged(self, overrides: Mapping[str, Any]) -> "Settings":
        """Returns a copy of these settings with dotted-path overrides applied.
        """
        settings = type(self)(_deep_copy(self))
        for path, value in overrides.items():
            settings.deep_set(path, value)
        return settings


class TOMLSettings(Settings):
    """A dictionary of settings parsed from a TOML file.

    String values may reference environment variables with ``$NAME`` or
    ``${NAME}``; a literal dollar sign is written ``$$``.  This comes in
    handy for external command templates::

      [detect]
      command = "$YOLO_HOME/detect.sh --weights {model}.pt {in} {out}"
    """

    @classmethod
    def from_path(cls, path: str) -> "TOMLSettings":
        """Load a TOML file into a dictionary.

        Raises:
          FileNotFoundError: When the settings file does not exist.
          RuntimeError: When an environment substitution fails.
        """
        with open(path, encoding="utf-8") as f:
            settings = cls(toml.load(f))

        _substitute_from_env(settings)
        return settings


def _substitute(setting: str, value: str, env: Mapping[str, str]) -> str:
    try:
        return Template(value).substitute(env)
    except KeyError as e:
        raise RuntimeError(f"{e} environment variable missing for setting {setting!r}.")
    except ValueError:
        raise RuntimeError(f"Invalid variable substitution syntax for value {value!r} in setting {setting!r}.")


def _substitute_from_env(
        ob: Union[Dict[str, Any], List[Any]],
        env: Mapping[str, str] = cast(Mapping[str, str], os.environ),
        parent: str = "$",
) -> None:
    items = enumerate(ob) if isinstance(ob, list) else ob.items()
    for key, value in list(items):
        setting_name = f"{parent}.{key}"
        if isinstance(value, str):
            ob[key] = _substitute(setting_name, value, env)  # type: ignore

        elif isinstance(value, (dict, list)):
            _substitute_from_env(value, env, parent=setting_name)


def _deep_copy(ob: Any) -> Any:
    if isinstance(ob, dict):
        return {name: _deep_copy(value) for name, value in ob.items()}
    if isinstance(ob, list):
        return [_deep_copy(value) for value in ob]
    return ob
