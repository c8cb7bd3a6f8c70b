from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossResult:
    """Scalar objective value with its gradient w.r.t. the differentiated input."""

    value: float
    gradient: np.ndarray
