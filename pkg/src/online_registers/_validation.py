"""Argument and input checks shared by the public entry points."""
from __future__ import annotations

import numbers

import numpy as np


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_nonneg_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_sequences(X, *, n_features=None, dtype=np.float64, min_length=1) -> list[np.ndarray]:
    """Normalize ``X`` into a list of finite 2-D ``(T_i, n_features)`` arrays.

    Accepts a single 2-D matrix, a 3-D array ``(n, T, d)``, or any iterable
    of 2-D matrices with a common feature width.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        seqs = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 2:
        seqs = [X]
    else:
        try:
            seqs = list(X)
        except TypeError:
            raise TypeError(f"expected an array or a list of arrays, got {type(X).__name__}") from None
    if not seqs:
        raise ValueError("X contains no sequences")

    out = []
    for k, seq in enumerate(seqs):
        arr = np.asarray(seq, dtype=dtype)
        if arr.ndim != 2:
            raise ValueError(f"sequence {k} must be 2-D (frames, features), got shape {arr.shape}")
        if arr.shape[0] < min_length:
            raise ValueError(f"sequence {k} has {arr.shape[0]} frames, need at least {min_length}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"sequence {k} contains NaN or infinite values")
        out.append(arr)
    widths = {a.shape[1] for a in out}
    if len(widths) != 1:
        raise ValueError(f"sequences disagree on feature width: {sorted(widths)}")
    if n_features is not None and out[0].shape[1] != n_features:
        raise ValueError(f"X has {out[0].shape[1]} features, expected {n_features}")
    return out
