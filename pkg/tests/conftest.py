import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hmmpriv.smt import default_solver_command  # noqa: E402


def solver_available() -> bool:
    return shutil.which(default_solver_command().split()[0]) is not None


needs_solver = pytest.mark.skipif(not solver_available(), reason="no SMT solver on PATH")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import lines

    out = lines()
    if out:
        terminalreporter.section("acceptance criteria")
        for line in out:
            terminalreporter.write_line(line)
