"""Small shared utilities for the test suite."""

import numpy as np


def rel_err(a, b, floor: float = 0.0) -> float:
    """Norm-wise relative error, the usual gradient-check measure.

    ``floor`` keeps the denominator away from zero when the true gradient
    vanishes and both sides are pure rounding noise.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)
