from __future__ import annotations

import math
from dataclasses import dataclass

METHODS = ("flip-equitailed", "flip-symmetric", "wald", "sandwich")


@dataclass(frozen=True)
class ConfidenceInterval:
    """A confidence interval for the target coefficient.

    Bounds may be infinite.  ``p_evaluations`` counts sign-flip p-value
    requests made while building the interval (zero for Wald-type ones).
    """

    lower: float
    upper: float
    level: float
    method: str
    estimate: float = math.nan
    p_evaluations: int = 0

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def finite(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper
