"""Assemble network inputs and supervision targets for each stage.

Upstream layers come either from ground truth through the formation algebra
(oracle mode) or from fitted upstream estimators, so a stage can be trained
and probed in isolation from the errors of earlier stages.
"""

from __future__ import annotations

import numpy as np

from ..alignment import ls_scale_align
from ..formation import (
    albedo_from_chroma,
    grayscale_oracle,
    inverse_shading,
    rgb_shading,
    safe_div,
    shading_from_inverse,
    shading_to_chroma,
)
from ..imaging import avg_pool, luminance
from .stages import StageSpec

CHROMA_MARGIN = 1e-4
INVERSE_MARGIN = 1e-6  # a float32 sigmoid can round to exactly 0
CHROMA_DOWNSCALE = 4


def stack_scenes(scenes):
    """Stack ground-truth scenes into ``(I, A_d, S_d)`` batches."""
    I = np.stack([s.components.I for s in scenes])
    A = np.stack([s.components.A_d for s in scenes])
    S = np.stack([s.components.S_d for s in scenes])
    return I, A, S


def clip_chroma(C):
    return np.clip(C, CHROMA_MARGIN, 1 - CHROMA_MARGIN)


def predicted_shading(D):
    """Shading from a network's inverse-shading output."""
    return shading_from_inverse(np.clip(np.asarray(D, dtype=np.float64), INVERSE_MARGIN, 1.0))


def concat_inputs(spec: StageSpec, layers: dict) -> np.ndarray:
    return np.concatenate([layers[name] for name in spec.inputs], axis=1).astype(np.float32)


class LayerBuilder:
    """Lazily computes the intermediate layers of a batch.

    ``upstream`` maps stage ids (``gray0``, ``chroma``, ``albedo``) to fitted
    estimators; stages not listed fall back to ground truth.
    """

    def __init__(self, I, A_gt=None, S_gt=None, upstream=None):
        self.I = np.asarray(I, dtype=np.float32)
        self.A_gt = A_gt
        self.S_gt = S_gt
        self.upstream = upstream or {}
        self._cache = {"I": self.I}

    def __getitem__(self, name):
        if name not in self._cache:
            getattr(self, f"_make_{name}")()
        return self._cache[name]

    def _need_gt(self, what):
        if self.A_gt is None:
            raise ValueError(f"{what} needs ground-truth albedo or an upstream estimator")

    def _make_S_g(self):
        if "gray0" in self.upstream:
            D_g = self.upstream["gray0"].predict(self.I)
            S_g = predicted_shading(D_g)
            A_g = safe_div(self.I, S_g)
        else:
            self._need_gt("grayscale decomposition")
            A_g, S_g = grayscale_oracle(self.I, self.A_gt)
        self._cache["S_g"] = S_g.astype(np.float32)
        self._cache["A_g"] = A_g.astype(np.float32)

    _make_A_g = _make_S_g

    def _make_C_low(self):
        if "chroma" in self.upstream:
            est = self.upstream["chroma"]
            X = concat_inputs(est.spec_, self)
            C = clip_chroma(est.predict(X))
        else:
            self._need_gt("oracle chroma")
            _, C_full = shading_to_chroma(rgb_shading(self.I, self.A_gt))
            C = avg_pool(C_full, CHROMA_DOWNSCALE)
        self._cache["C_low"] = C.astype(np.float32)

    def _make_A_hat(self):
        A_hat, S_hat = albedo_from_chroma(self.I, self["S_g"], self["C_low"])
        self._cache["A_hat"] = A_hat.astype(np.float32)
        self._cache["S_hat"] = S_hat.astype(np.float32)

    _make_S_hat = _make_A_hat

    def _make_A_d(self):
        if "albedo" in self.upstream:
            est = self.upstream["albedo"]
            A_d = est.predict(concat_inputs(est.spec_, self))
        else:
            self._need_gt("oracle albedo")
            A_d = self.A_gt
        self._cache["A_d"] = np.asarray(A_d, dtype=np.float32)

    def _make_S_c(self):
        self._cache["S_c"] = rgb_shading(self.I, self["A_d"]).astype(np.float32)


def align_shading(S_gt, S_ref):
    """Rescale each ground-truth shading so its luminance best matches ``S_ref``."""
    out = np.empty_like(S_gt)
    lum_gt, lum_ref = luminance(S_gt), luminance(S_ref)
    for i in range(len(S_gt)):
        out[i] = S_gt[i] * ls_scale_align(lum_gt[i], lum_ref[i])
    return out


def build_target(spec: StageSpec, layers: LayerBuilder) -> np.ndarray:
    I, A_gt, S_gt = layers.I, layers.A_gt, layers.S_gt
    if A_gt is None:
        raise ValueError("targets need ground-truth albedo")
    ds = spec.downscale
    if spec.target == "D_g":
        _, S_g = grayscale_oracle(I, A_gt)
        y = inverse_shading(S_g)
    elif spec.target == "C":
        _, C = shading_to_chroma(rgb_shading(I, A_gt))
        y = avg_pool(C, ds)
    elif spec.target == "A_d":
        y = avg_pool(A_gt, ds)
    elif spec.target == "D":
        if S_gt is None:
            raise ValueError("diffuse targets need ground-truth shading")
        ref = layers["S_c"] if "S_c" in spec.inputs else rgb_shading(I, A_gt)
        y = avg_pool(inverse_shading(align_shading(S_gt, ref)), ds)
    elif spec.target == "D_c":
        S_c = rgb_shading(I, A_gt)
        ref = layers["S_hat"] if "S_hat" in spec.inputs else S_c
        y = avg_pool(inverse_shading(align_shading(S_c, ref)), ds)
    else:
        raise ValueError(f"unknown target {spec.target}")
    return np.asarray(y, dtype=np.float32)


def build_stage_data(spec: StageSpec, scenes, upstream=None):
    """``(X, y)`` arrays for training or probing a stage on ground-truth scenes."""
    I, A, S = stack_scenes(scenes)
    layers = LayerBuilder(I, A, S, upstream)
    return concat_inputs(spec, layers), build_target(spec, layers)
