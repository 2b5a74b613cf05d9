from __future__ import annotations

import math
from typing import NamedTuple


class InvariantCheck(NamedTuple):
    """
    The outcome of one runtime invariant check.

    :param name: Short identifier, used as a manifest key.
    :param passed: Whether the check holds.
    :param value: The measured quantity.
    :param limit: The bound it was compared against.
    """

    name: str
    passed: bool
    value: float
    limit: float

    def describe(self) -> str:
        status = "pass" if self.passed else "fail"
        return f"{status} value={self.value:.6e} limit={self.limit:.6e}"


def at_most(name: str, value: float, limit: float) -> InvariantCheck:
    return InvariantCheck(name, math.isfinite(value) and value <= limit, value, limit)


def at_least(name: str, value: float, limit: float) -> InvariantCheck:
    return InvariantCheck(name, math.isfinite(value) and value >= limit, value, limit)


def greater_than(name: str, value: float, limit: float) -> InvariantCheck:
    return InvariantCheck(name, math.isfinite(value) and value > limit, value, limit)
