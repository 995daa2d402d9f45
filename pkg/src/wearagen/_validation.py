import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError


def check_windows(X, num_bins=None, seq_len=None, allow_shorter=False):
    """Validate a ``(n, seq_len, 3)`` array of bin indices and return it as int64."""
    if hasattr(X, "windows"):
        X = X.windows
    try:
        X = check_array(X, dtype=None, allow_nd=True, ensure_min_samples=1,
                        ensure_min_features=1, ensure_all_finite=True)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if X.ndim != 3 or X.shape[2] != 3:
        raise ValidationError(f"expected windows of shape (n, seq_len, 3), got {X.shape}")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(X == np.round(X)):
            raise ValidationError("window entries must be integer bin indices")
    X = X.astype(np.int64)
    if seq_len is not None:
        if X.shape[1] > seq_len or (X.shape[1] < seq_len and not allow_shorter):
            raise ValidationError(f"window length {X.shape[1]} != seq_len {seq_len}")
    if X.min() < 0 or (num_bins is not None and X.max() >= num_bins):
        raise ValidationError(f"bin indices must lie in [0, {num_bins - 1 if num_bins else 'num_bins-1'}]")
    return X


def check_values(X):
    """Validate channel values with the three channels on the last axis."""
    try:
        X = check_array(X, dtype=np.float64, allow_nd=True, ensure_all_finite=True)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if X.shape[-1] != 3:
        raise ValidationError(f"expected 3 channels on the last axis, got shape {X.shape}")
    return X
