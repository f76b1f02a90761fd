"""Input validation helpers shared by the estimators."""

import numpy as np


def as_float_array(x, name, ndim=None):
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_rows_data(rows, data):
    """Validate a stacked subproblem system (K rows, K data values)."""
    rows = as_float_array(rows, "rows", ndim=2)
    data = as_float_array(data, "data", ndim=1)
    if rows.shape[0] != data.shape[0]:
        raise ValueError(
            f"row count {rows.shape[0]} does not match data length {data.shape[0]}"
        )
    return rows, data


def broadcast_bound(value, n, name):
    """Expand a scalar or per-subproblem nonnegative bound to shape (n,)."""
    if value is None:
        return np.zeros(n)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or length-{n} array")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be nonnegative and finite")
    return arr
