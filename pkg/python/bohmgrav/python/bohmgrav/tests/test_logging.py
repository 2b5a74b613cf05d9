import logging
import os
import subprocess
import sys

import pytest
from bohmgrav import set_log_level


def test_set_log_level_accepts_string_or_int() -> None:
    set_log_level("DEBUG")
    set_log_level(logging.DEBUG)
    assert logging.getLogger("bohmgrav").level == logging.DEBUG
    with pytest.raises(ValueError):
        set_log_level("debug")


def test_set_log_level_clamps_illegal_values() -> None:
    set_log_level(-1)
    assert logging.getLogger("bohmgrav").level == 0
    set_log_level(2**64)
    assert logging.getLogger("bohmgrav").level == 2**32 - 1


def _run_logging_script(
    test_script: str, env: dict[str, str]
) -> subprocess.CompletedProcess[str]:
    # Run a script in a child process so logger can be re-initialized from env.
    result = subprocess.run(
        [sys.executable, "-c", test_script],
        env=env,
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert "test_init_with_env_complete" in result.stdout
    return result


SOLVE_SCRIPT = """
import bohmgrav

bohmgrav.classical_solve(bohmgrav.build_disk_mesh(3), 0.0)

print("test_init_with_env_complete")
"""


SOLVE_WITH_SET_LOG_LEVEL_SCRIPT = """
import bohmgrav

bohmgrav.set_log_level("INFO")
bohmgrav.classical_solve(bohmgrav.build_disk_mesh(3), 0.0)

print("test_init_with_env_complete")
"""


def test_logging_disabled_by_default() -> None:
    env = os.environ.copy()
    env.pop("BOHMGRAV_LOG_LEVEL", None)

    result = _run_logging_script(SOLVE_SCRIPT, env)
    assert "classical solve converged" not in result.stderr


def test_set_log_level_enables_logging() -> None:
    env = os.environ.copy()
    env.pop("BOHMGRAV_LOG_LEVEL", None)

    result = _run_logging_script(SOLVE_WITH_SET_LOG_LEVEL_SCRIPT, env)
    assert "[INFO:bohmgrav.classical] classical solve converged" in result.stderr


def test_env_log_level_takes_precedence_over_set_log_level() -> None:
    env = os.environ.copy()
    env["BOHMGRAV_LOG_LEVEL"] = "WARNING"

    result = _run_logging_script(SOLVE_WITH_SET_LOG_LEVEL_SCRIPT, env)
    assert "classical solve converged" not in result.stderr


def test_env_log_level_debug() -> None:
    env = os.environ.copy()
    env["BOHMGRAV_LOG_LEVEL"] = "DEBUG"

    result = _run_logging_script(SOLVE_WITH_SET_LOG_LEVEL_SCRIPT, env)
    assert "classical newton 1" in result.stderr
