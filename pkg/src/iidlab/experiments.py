"""Ablation runs: train each variant of a stage and compare them on test scenes.

Upstream layers are chained: the albedo table is trained on chroma predicted
by the chroma network of the same seed, and the diffuse table on albedo
predicted by the albedo network of that seed.  Tables therefore share their
upstream estimators when run together through ``run_ablations``.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .formation import albedo_from_chroma, inverse_shading, rgb_shading, safe_div
from .imaging import resize_bilinear
from .metrics import si_rmse
from .pipeline.estimator import StageEstimator
from .pipeline.features import (LayerBuilder, align_shading, build_stage_data, clip_chroma,
                                predicted_shading, stack_scenes)
from .pipeline.stages import ABLATION_TABLES, ablation_variants
from .pipeline.training import default_widths

log = logging.getLogger(__name__)

# upstream stages each table consumes, in training order
TABLE_UPSTREAM = {"chroma": (), "albedo": ("chroma",), "diffuse": ("chroma", "albedo")}
TABLE_METRIC = {"chroma": "albedo_si_rmse", "albedo": "albedo_si_rmse", "diffuse": "D_si_rmse"}


@dataclass
class AblationResult:
    table: str
    metric: str
    rows: list = field(default_factory=list)  # (variant, seed, value)

    def means(self) -> dict:
        out = {}
        for variant in dict.fromkeys(r[0] for r in self.rows):
            out[variant] = float(np.mean([r[2] for r in self.rows if r[0] == variant]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["table", "variant", "seed", self.metric])
        for variant, seed, value in self.rows:
            writer.writerow([self.table, variant, seed, f"{value:.6f}"])
        for variant, value in self.means().items():
            writer.writerow([self.table, variant, "mean", f"{value:.6f}"])
        return buf.getvalue()


def _mean_si_rmse(pred, gt):
    return float(np.mean([si_rmse(p, g) for p, g in zip(pred, gt)]))


def score_variant(est: StageEstimator, scenes, upstream=None) -> float:
    """Mean per-image error of a fitted variant on ``scenes``.

    Albedo-producing variants are scored by albedo si-RMSE at full resolution;
    diffuse variants by si-RMSE of inverse shading against ground truth whose
    scale is aligned to the oracle RGB shading (the same reference for all
    variants).
    """
    spec = est.spec_
    I, A, S = stack_scenes(scenes)
    layers = LayerBuilder(I, A, S, upstream)
    X = np.concatenate([layers[name] for name in spec.inputs], axis=1)
    pred = est.predict(X).astype(np.float64)
    size = I.shape[-2:]
    if spec.target == "C":
        A_pred, _ = albedo_from_chroma(I, layers["S_g"], clip_chroma(pred))
        return _mean_si_rmse(A_pred, A)
    if spec.target == "A_d":
        if spec.downscale > 1:
            pred = resize_bilinear(pred, size)
        return _mean_si_rmse(pred, A)
    if spec.target == "D_c":
        return _mean_si_rmse(safe_div(I, predicted_shading(pred)), A)
    if spec.target == "D":
        D_gt = inverse_shading(align_shading(S, rgb_shading(I, A)))
        return _mean_si_rmse(pred, D_gt)
    raise ValueError(f"no score for target {spec.target}")


def _fit(variant, seed, train, val, upstream, settings):
    spec = ablation_variants(variant)
    widths = settings.get("widths") or default_widths(variant)
    X, y = build_stage_data(spec, train, upstream)
    Xv, yv = build_stage_data(spec, val, upstream) if val else (None, None)
    est = StageEstimator(stage=variant, widths=tuple(widths), iterations=settings["iterations"],
                         batch_size=settings["batch_size"], lr=settings["lr"], seed=seed,
                         eval_interval=settings["iterations"])
    t0 = time.perf_counter()
    est.fit(X, y, Xv, yv)
    log.info("ablation %s seed=%d fitted in %.1fs", variant, seed, time.perf_counter() - t0)
    return est


def run_ablations(tables, scenes, seeds=(0, 1, 2), iterations=600, batch_size=8, lr=1e-3,
                  widths=None) -> dict:
    """Run several ablation tables; returns ``{table: AblationResult}``.

    ``scenes`` is ``(train, val, test)``, each a list of ground-truth scenes.
    """
    train, val, test = scenes
    settings = {"iterations": iterations, "batch_size": batch_size, "lr": lr, "widths": widths}
    needed = set(tables)
    for t in tables:
        if t not in ABLATION_TABLES:
            raise KeyError(f"unknown ablation table {t!r}; choose from {sorted(ABLATION_TABLES)}")
        needed.update(TABLE_UPSTREAM[t])
    results = {t: AblationResult(t, TABLE_METRIC[t]) for t in tables}
    for seed in seeds:
        upstream = {}
        for table in ("chroma", "albedo", "diffuse"):
            if table not in needed:
                continue
            chain = {k: upstream[k] for k in TABLE_UPSTREAM[table]}
            variants = ABLATION_TABLES[table] if table in results else (table,)
            for variant in variants:
                est = _fit(variant, seed, train, val, chain, settings)
                if table in results:
                    results[table].rows.append((variant, seed, score_variant(est, test, chain)))
                if variant == table:
                    upstream[table] = est
    return results


def run_ablation(table, scenes, seeds=(0, 1, 2), **kwargs) -> AblationResult:
    return run_ablations([table], scenes, seeds, **kwargs)[table]
