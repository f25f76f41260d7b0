"""Least-squares scale alignment between an image and a reference."""

from __future__ import annotations

import warnings

import numpy as np

from .formation import EPS


def ls_scale_align(gt, ref, mask=None) -> float:
    """Scale ``a`` minimizing ``||a * gt - ref||^2``, i.e. ``<gt, ref> / <gt, gt>``.

    Falls back to 1.0 (with a warning) when ``gt`` has no energy.
    """
    gt = np.asarray(gt, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), gt.shape)
        gt, ref = gt[mask], ref[mask]
    energy = float(np.sum(gt * gt))
    if energy < EPS:
        warnings.warn("scale alignment against a zero image; using scale 1", RuntimeWarning,
                      stacklevel=2)
        return 1.0
    return float(np.sum(gt * ref) / energy)
