"""Shared test utilities: finite differences and tolerance checks."""

import numpy as np

FD_STEP = 1e-5
FD_REL = 1e-4
FD_ABS = 1e-7


def central_diff(fn, values: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.empty_like(values)
    for idx in range(values.size):
        old = values[idx]
        values[idx] = old + step
        up = fn()
        values[idx] = old - step
        down = fn()
        values[idx] = old
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def assert_grads_close(analytic, numeric, rel=FD_REL, abs_tol=FD_ABS):
    analytic = np.asarray(analytic).reshape(-1)
    numeric = np.asarray(numeric).reshape(-1)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    gap = np.abs(analytic - numeric)
    bad = gap > abs_tol + rel * scale
    assert not bad.any(), (
        f"{bad.sum()} of {bad.size} gradient entries disagree; "
        f"worst gap {gap.max():.3e} at scale {scale[gap.argmax()]:.3e}"
    )
