"""Chained inference through the staged pipeline."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..formation import (
    IntrinsicComponents,
    albedo_from_chroma,
    compute_residual,
    grayscale_oracle,
    rgb_shading,
    safe_div,
)
from ..validation import check_image
from .estimator import StageEstimator
from .features import LayerBuilder, build_stage_data, clip_chroma, predicted_shading
from .stages import STAGES

GRAY_MODES = ("oracle_gray", "net_gray")


def _batch(x):
    x = np.asarray(x, dtype=np.float32)
    return x[None] if x.ndim == 3 else x


def infer_chroma(chroma: StageEstimator, I, S_g, A_g):
    """Low-resolution shading chroma in (0, 1) from the grayscale decomposition."""
    X = np.concatenate([_batch(I), _batch(S_g), _batch(A_g)], axis=1)
    out = clip_chroma(chroma.predict(X))
    return out[0] if np.ndim(I) == 3 else out


def infer_albedo(albedo: StageEstimator, I, A_hat, S_hat):
    X = np.concatenate([_batch(I), _batch(A_hat), _batch(S_hat)], axis=1)
    out = albedo.predict(X)
    return out[0] if np.ndim(I) == 3 else out


def infer_diffuse(diffuse: StageEstimator, I, A_d, S_c):
    """Diffuse shading from the predicted inverse shading, and the residual."""
    X = np.concatenate([_batch(I), _batch(A_d), _batch(S_c)], axis=1)
    D = diffuse.predict(X)
    S_d = predicted_shading(D).astype(np.float32)
    R = compute_residual(_batch(I), _batch(A_d), S_d)
    if np.ndim(I) == 3:
        return S_d[0], R[0]
    return S_d, R


def infer_baseline(baseline: StageEstimator, I):
    out = baseline.predict(_batch(I))
    return out[0] if np.ndim(I) == 3 else out


class IntrinsicDecomposer(TransformerMixin, BaseEstimator):
    """Grayscale decomposition -> chroma -> albedo -> diffuse shading -> residual.

    ``gray_mode='oracle_gray'`` builds ``(A_g, S_g)`` from a reference albedo
    passed to ``transform``; ``'net_gray'`` uses the stage-0 network.
    ``fit`` trains every stage estimator that is not yet fitted, in pipeline
    order, each on the predictions of the already-fitted earlier stages.
    """

    def __init__(self, gray_mode="oracle_gray", gray0=None, chroma=None, albedo=None, diffuse=None):
        self.gray_mode = gray_mode
        self.gray0 = gray0
        self.chroma = chroma
        self.albedo = albedo
        self.diffuse = diffuse

    def _stages(self):
        order = ["chroma", "albedo", "diffuse"]
        if self.gray_mode == "net_gray":
            order.insert(0, "gray0")
        return order

    def fit(self, X, y=None, val_scenes=None):
        """``X`` is a list of ground-truth scenes."""
        if self.gray_mode not in GRAY_MODES:
            raise ValueError(f"gray_mode must be one of {GRAY_MODES}")
        upstream = {}
        for name in self._stages():
            est = getattr(self, name)
            if est is None:
                raise ValueError(f"no estimator given for stage {name!r}")
            if not hasattr(est, "net_"):
                spec = STAGES[name]
                Xs, ys = build_stage_data(spec, X, upstream)
                if val_scenes:
                    Xv, yv = build_stage_data(spec, val_scenes, upstream)
                    est.fit(Xs, ys, Xv, yv)
                else:
                    est.fit(Xs, ys)
            upstream[name] = est
        self.is_fitted_ = True
        return self

    @classmethod
    def from_checkpoints(cls, paths: dict, gray_mode="oracle_gray"):
        """Build from ``{stage: checkpoint_path}``."""
        ests = {k: StageEstimator.load(v) for k, v in paths.items()}
        obj = cls(gray_mode=gray_mode, **ests)
        obj.is_fitted_ = True
        return obj

    @classmethod
    def from_run(cls, run_dir, gray_mode="oracle_gray"):
        ckpts = Path(run_dir) / "checkpoints"
        paths = {s: ckpts / f"{s}.iidc" for s in ("gray0", "chroma", "albedo", "diffuse")
                 if (ckpts / f"{s}.iidc").exists()}
        return cls.from_checkpoints(paths, gray_mode)

    def gray_decomposition(self, I, reference_albedo=None):
        if self.gray_mode == "oracle_gray":
            if reference_albedo is None:
                raise ValueError("oracle_gray mode needs a reference albedo")
            return grayscale_oracle(I, reference_albedo)
        if self.gray0 is None:
            raise ValueError("net_gray mode needs a fitted gray0 estimator")
        S_g = predicted_shading(self.gray0.predict(_batch(I)))
        S_g = S_g.astype(np.float32)
        if np.ndim(I) == 3:
            S_g = S_g[0]
        return safe_div(I, S_g), S_g

    def decompose(self, I, reference_albedo=None) -> IntrinsicComponents:
        """Run the full chain on one ``(3, H, W)`` linear image."""
        I = check_image(I, channels=3, name="I")
        A_g, S_g = self.gray_decomposition(I, reference_albedo)
        C = infer_chroma(self.chroma, I, S_g, A_g)
        A_hat, S_hat = albedo_from_chroma(I, S_g, C)
        A_d = infer_albedo(self.albedo, I, A_hat, S_hat)
        S_c = rgb_shading(I, A_d)
        S_d, R = infer_diffuse(self.diffuse, I, A_d, S_c)
        comp = IntrinsicComponents(I=I, A_d=A_d, S_d=S_d, R=R, S_g=S_g, A_g=A_g, C=C,
                                   S_hat=S_hat, A_hat=A_hat, S_c=S_c,
                                   D=(1 / (S_d + 1)).astype(np.float32))
        return comp

    def transform(self, X, reference_albedo=None):
        """Decompose a sequence of images; returns a list of components."""
        refs = reference_albedo if reference_albedo is not None else [None] * len(X)
        return [self.decompose(img, ref) for img, ref in zip(X, refs)]

    def probe_layers(self, I, A_gt=None, S_gt=None):
        """Layer builder with this pipeline's fitted stages as upstream."""
        upstream = {k: getattr(self, k) for k in ("gray0", "chroma", "albedo")
                    if getattr(self, k) is not None and (k != "gray0" or self.gray_mode == "net_gray")}
        return LayerBuilder(I, A_gt, S_gt, upstream)
