"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .imaging import LinearImage


def check_image(img, channels=None, allow_negative=False, name="image", dtype=np.float32):
    """Return ``img`` as a finite ``(C, H, W)`` array."""
    arr = img.data if isinstance(img, LinearImage) else np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected (C, H, W), got shape {arr.shape}")
    _check_values(arr, channels, allow_negative, name)
    return arr.astype(dtype, copy=False)


def check_batch(X, channels=None, multiple_of=1, allow_negative=True, name="X", dtype=np.float32):
    """Return ``X`` as a finite ``(N, C, H, W)`` array; single images gain a batch axis."""
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name}: expected (N, C, H, W), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: empty batch")
    h, w = arr.shape[-2:]
    if h % multiple_of or w % multiple_of:
        raise ValueError(f"{name}: spatial size {(h, w)} must be a multiple of {multiple_of}")
    _check_values(arr, channels, allow_negative, name)
    return arr.astype(dtype, copy=False)


def _check_values(arr, channels, allow_negative, name):
    if channels is not None and arr.shape[-3] != channels:
        raise ValueError(f"{name}: expected {channels} channels, got {arr.shape[-3]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    if not allow_negative and np.any(arr < 0):
        raise ValueError(f"{name}: contains negative values")
