# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Running external translators and detectors.

Command templates are split with :func:`shlex.split` and never run
through a shell.  Placeholders like ``{in}`` and ``{out}`` are replaced
inside each token, so ``--source={in}`` works as expected.
"""

import logging
import os
import re
import shlex
import subprocess
from pathlib import Path
from threading import Lock
from typing import Dict, Iterable, List, Mapping, Optional

from .errors import CommandFailed, InvalidParameter

LOGGER = logging.getLogger(__name__)

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

_LOCKS: Dict[str, Lock] = {}
_LOCKS_LOCK = Lock()


def placeholders(template: str) -> List[str]:
    """Returns the placeholder names used in a command template.
    """
    return _PLACEHOLDER_RE.findall(template)


def require_placeholders(template: str, names: Iterable[str]) -> None:
    """Raises InvalidParameter unless every name appears in the template.
    """
    found = set(placeholders(template))
    missing = [name for name in names if name not in found]
    if missing:
        missing_list = ", ".join("{" + name + "}" for name in missing)
        raise InvalidParameter(f"command template {template!r} lacks placeholders: {missing_list}")


def render_command(template: str, substitutions: Mapping[str, str]) -> List[str]:
    """Split a template into argv and substitute its placeholders.

    Raises:
      InvalidParameter: When the template references an unknown placeholder.
    """
    def replace(match: "re.Match[str]") -> str:
        name = match.group(1)
        try:
            return str(substitutions[name])
        except KeyError:
            raise InvalidParameter(f"unknown placeholder {{{name}}} in command template {template!r}")

    try:
        tokens = shlex.split(template)
    except ValueError as e:
        raise InvalidParameter(f"command template {template!r} cannot be parsed: {e}")

    if not tokens:
        raise InvalidParameter("command template is empty")

    return [_PLACEHOLDER_RE.sub(replace, token) for token in tokens]


def directory_lock(directory: os.PathLike) -> Lock:
    """Returns the lock guarding external jobs that write to ``directory``.
    """
    key = os.path.realpath(str(directory))
    with _LOCKS_LOCK:
        return _LOCKS.setdefault(key, Lock())


def run_command(
        template: str,
        substitutions: Mapping[str, str],
        output_dir: Optional[os.PathLike] = None,
        timeout: Optional[float] = None,
) -> None:
    """Run an external command once.

    Only one command runs per output directory at a time.  The
    command's own output is forwarded to the log at debug level.

    Raises:
      CommandFailed: If the command exits with a nonzero status or
        cannot be started.
    """
    argv = render_command(template, substitutions)
    lock = directory_lock(Path(output_dir if output_dir is not None else substitutions.get("out", ".")))
    with lock:
        LOGGER.info("Running %s.", " ".join(shlex.quote(arg) for arg in argv))
        try:
            process = subprocess.run(
                argv,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                timeout=timeout,
                check=False,
            )
        except FileNotFoundError:
            raise CommandFailed(f"command {argv[0]!r} not found", returncode=127)
        except subprocess.TimeoutExpired:
            raise CommandFailed(f"command {argv[0]!r} timed out after {timeout}s", returncode=-1)

    output = process.stdout.decode("utf-8", errors="replace").strip()
    for line in output.splitlines():
        LOGGER.debug("%s: %s", argv[0], line)

    if process.returncode != 0:
        raise CommandFailed(f"command {argv[0]!r} exited with status {process.returncode}", process.returncode)
