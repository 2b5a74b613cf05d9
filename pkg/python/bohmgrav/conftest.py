# Configure pytest to skip tests marked with `slow` or `benchmark` unless the matching flag is
# provided. The `benchmark` marker is defined by `pytest_benchmark`; `slow` is registered in
# pyproject.toml.
# - https://docs.pytest.org/en/stable/example/simple.html#control-skipping-of-tests-according-to-command-line-option # noqa: E501
#
# In order to define the option flags, this file must be in the root of the project.

from typing import List

import pytest

gated_markers = {
    "benchmark": "--with-benchmarks",
    "slow": "--with-slow",
}


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--with-benchmarks", action="store_true", default=False, help="run benchmarks"
    )
    parser.addoption(
        "--with-slow",
        action="store_true",
        default=False,
        help="run long reproduction studies",
    )


def pytest_collection_modifyitems(
    config: pytest.Config, items: List[pytest.Item]
) -> None:
    for marker, flag in gated_markers.items():
        if config.getoption(flag):
            continue
        if config.getoption("-m") == marker:  # running only these tests
            continue
        skip_marker = pytest.mark.skip(reason=f"need {flag} option to run")
        for item in items:
            if marker in item.keywords:
                item.add_marker(skip_marker)
