import shlex
import sys
from pathlib import Path

import pytest

COMMANDS = Path(__file__).parent / "fixtures" / "commands"


@pytest.fixture
def stub_command():
    """Builds a command template that runs one of the stand-in tools
    under the current interpreter.
    """
    def make(script, *args):
        program = " ".join(shlex.quote(part) for part in (sys.executable, str(COMMANDS / script)))
        return " ".join((program, *args))
    return make
