from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MeanDispResult:
    """Mean displacement value with its convergence bookkeeping.

    ``tail_estimate`` bounds the part of the time integral beyond ``horizon``;
    it is ``inf`` when the run was cut short (diverged, stalled, over budget).
    """

    value: float
    tail_estimate: float
    horizon: float
    converged: bool
    flag: str = "ok"
    imag_residue: float = 0.0

    def __post_init__(self):
        if self.converged and not math.isfinite(self.tail_estimate):
            raise ValueError("a converged result needs a finite tail estimate")
