# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Dependency injection for pipeline commands.

Commands declare what they need through their parameter annotations::

  def cmd_detect(images: Path, out: Path, config: Config, detector: Detector) -> List[Path]:
    ...

and a :class:`CommandResolver` fills in every parameter the caller
didn't pass explicitly from its components.
"""

import functools
from concurrent.futures import Executor, ThreadPoolExecutor
from inspect import Parameter, signature
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar, no_type_check

from typing_extensions import Protocol

from .config import Config
from .detect import BaselineDetector, Detector, ExternalDetector
from .errors import ResolutionError
from .translate import ExternalTranslator, HistogramMatchingTranslator, Translator

_T = TypeVar("_T", covariant=True)


class Component(Protocol[_T]):  # pragma: no cover
    """The component protocol.

    Examples:

      >>> class CatalogComponent:
      ...   is_singleton = True
      ...
      ...   def can_handle_parameter(self, parameter: Parameter) -> bool:
      ...     return parameter.annotation is Catalog
      ...
      ...   def resolve(self, config: Config) -> Catalog:
      ...     return Catalog(config.georef)

    """

    @property
    def is_singleton(self) -> bool:
        """If True, the component is resolved once and shared by every
        command run through the same injector.  Defaults to False.
        """

    def can_handle_parameter(self, parameter: Parameter) -> bool:
        """Returns True when parameter represents the desired component.
        """

    @no_type_check
    def resolve(self) -> _T:
        """Returns an instance of the component.
        """


class ConfigComponent:
    is_singleton = True

    def __init__(self, config: Config) -> None:
        self.config = config

    def can_handle_parameter(self, parameter: Parameter) -> bool:
        return parameter.annotation is Config

    def resolve(self) -> Config:
        return self.config


class ExecutorComponent:
    """Provides the thread pool per-image stages run on, sized by
    ``pipeline.jobs``.  Single-job runs get no pool at all.
    """

    is_singleton = True

    def can_handle_parameter(self, parameter: Parameter) -> bool:
        return parameter.annotation in (Executor, Optional[Executor])

    def resolve(self, config: Config) -> Optional[Executor]:
        if config.pipeline.jobs <= 1:
            return None
        return ThreadPoolExecutor(max_workers=config.pipeline.jobs, thread_name_prefix="craterkit")


class DetectorComponent:
    is_singleton = True

    def can_handle_parameter(self, parameter: Parameter) -> bool:
        return parameter.annotation is Detector

    def resolve(self, config: Config, executor: Optional[Executor]) -> Detector:
        if config.detect.detector == "external":
            return ExternalDetector(config.detect.command or "")
        return BaselineDetector(config.detector_params(), executor)


class TranslatorFactory:
    """Builds the configured translator once the target-domain images
    are known.
    """

    def __init__(self, config: Config) -> None:
        self.config = config

    def for_target(self, target_images: Iterable[Any]) -> Translator:
        settings = self.config.translate
        if settings.translator == "external":
            return ExternalTranslator(settings.command or "")
        return HistogramMatchingTranslator.from_images(target_images, labelled_only=settings.pool_labelled_only)


class TranslatorComponent:
    def can_handle_parameter(self, parameter: Parameter) -> bool:
        return parameter.annotation is TranslatorFactory

    def resolve(self, config: Config) -> TranslatorFactory:
        return TranslatorFactory(config)


class CommandInjector:
    """Holds the components and the singletons resolved from them.

    Parameters:
      components: The components used to resolve commands' parameters.
    """

    __slots__ = [
        "components",
        "singletons",
    ]

    def __init__(self, components: List[Component[Any]]) -> None:
        self.components = components
        self.singletons: Dict[Component[Any], Any] = {}

    def get_resolver(self) -> "CommandResolver":
        return CommandResolver(self.components, self.singletons)

    def close(self) -> None:
        """Shut down any executors handed out by the components.
        """
        for instance in self.singletons.values():
            if isinstance(instance, Executor):
                instance.shutdown(wait=True)
        self.singletons.clear()


class CommandResolver:
    """Fills in a command's parameters from components.
    """

    __slots__ = [
        "components",
        "singletons",
        "instances",
    ]

    def __init__(self, components: List[Component[Any]], singletons: Dict[Component[Any], Any]) -> None:
        self.components = components
        self.singletons = singletons
        self.instances: Dict[Component[Any], Any] = {}

    def resolve(self, fn: Callable[..., Any]) -> Callable[..., Any]:
        """Returns a version of ``fn`` whose unfilled parameters are
        provided by components.

        Raises:
          ResolutionError: When no component can provide a parameter
            that has no default.
        """

        @functools.wraps(fn)
        def resolved_fn(**params: Any) -> Any:
            for parameter in _get_parameters(fn):
                if parameter.name in params:
                    continue

                for component in self.components:
                    if component.can_handle_parameter(parameter):
                        params[parameter.name] = self._instance(component)
                        break
                else:
                    if parameter.default is Parameter.empty:
                        raise ResolutionError(f"cannot resolve parameter {parameter} of command {fn.__name__}")

            return fn(**params)

        return resolved_fn

    def _instance(self, component: Component[Any]) -> Any:
        cache = self.singletons if getattr(component, "is_singleton", False) else self.instances
        try:
            return cache[component]
        except KeyError:
            instance = cache[component] = self.resolve(component.resolve)()
            return instance


@functools.lru_cache(maxsize=128)
def _get_parameters(fn: Callable[..., Any]) -> Iterable[Parameter]:
    return signature(fn).parameters.values()


def default_components(config: Config) -> List[Component[Any]]:
    return [
        ConfigComponent(config),
        ExecutorComponent(),
        DetectorComponent(),
        TranslatorComponent(),
    ]
