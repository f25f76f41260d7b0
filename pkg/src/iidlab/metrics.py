"""Evaluation metrics for estimated intrinsic layers.

All image arguments are ``(C, H, W)`` or ``(H, W)`` arrays.  Numbers produced
here are internally comparable across runs of this package only; the
formulas are pinned below and are not those of any external benchmark.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .alignment import ls_scale_align
from .imaging import luminance

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LMSE_MIN_ENERGY = 1e-5

COLUMNS = ("scene_id", "lmse", "rmse", "si_rmse", "ssim", "intensity", "chromaticity")


def _as3d(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def rmse(P, G):
    """Plain RMSE; not scale-invariant."""
    P, G = _as3d(P), _as3d(G)
    return float(np.sqrt(np.mean((P - G) ** 2)))


def si_rmse(P, G):
    """RMSE after the least-squares global rescaling of ``P`` onto ``G``."""
    P, G = _as3d(P), _as3d(G)
    return rmse(ls_scale_align(P, G) * P, G)


def lmse(P, G, window=None, stride=None):
    """Local scale-invariant MSE over half-overlapping square windows.

    Every window gets its own least-squares scale (shared by all channels;
    zero when the estimate has no energy there).  The summed squared errors
    are normalized by the summed ground-truth energy of the same windows.
    ``window`` defaults to an eighth of the smaller image side.
    """
    P, G = _as3d(P), _as3d(G)
    h, w = G.shape[-2:]
    window = window or max(1, min(h, w) // 8)
    stride = stride or max(1, window // 2)

    def window_sums(x):
        summed = sliding_window_view(x.sum(axis=0), (window, window)).sum(axis=(-2, -1))
        return summed[::stride, ::stride]

    pp = window_sums(P * P)
    pg = window_sums(P * G)
    gg = window_sums(G * G)
    safe_pp = np.where(pp > LMSE_MIN_ENERGY, pp, 1.0)
    alpha = np.where(pp > LMSE_MIN_ENERGY, pg / safe_pp, 0.0)
    ssq = np.maximum(gg - 2 * alpha * pg + alpha**2 * pp, 0.0)
    total = gg.sum()
    return float(ssq.sum() / total) if total > 0 else 0.0


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    x = sliding_window_view(x, len(g), axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(x, -1, -2), len(g), axis=-1) @ g, -1, -2)


def ssim(P, G, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2, data_range=None):
    """Mean structural similarity with a Gaussian window ('valid' filtering).

    The dynamic range defaults to ``max(G) - min(G)`` (1 for constant ``G``).
    """
    P, G = _as3d(P), _as3d(G)
    window = min(window, *G.shape[-2:])
    g = gaussian_window(window, sigma)
    if data_range is None:
        data_range = float(G.max() - G.min()) or 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_p, mu_g = _filter_valid(P, g), _filter_valid(G, g)
    var_p = _filter_valid(P * P, g) - mu_p**2
    var_g = _filter_valid(G * G, g) - mu_g**2
    cov = _filter_valid(P * G, g) - mu_p * mu_g
    num = (2 * mu_p * mu_g + c1) * (2 * cov + c2)
    den = (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den))


def region_masks(albedo, max_regions=64):
    """Boolean masks of the constant-color regions of a piecewise-constant albedo."""
    A = _as3d(albedo)
    flat = A.reshape(A.shape[0], -1).T
    _, labels = np.unique(flat, axis=0, return_inverse=True)
    labels = labels.reshape(A.shape[-2:])
    masks = [labels == k for k in range(labels.max() + 1)]
    masks.sort(key=lambda m: -m.sum())
    return masks[:max_regions]


def _angle_deg(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    # atan2 of |u x v| and u . v stays accurate for nearly parallel vectors
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v))))


def intensity_chroma_error(P, G, masks=None):
    """Albedo intensity (x100) and chromaticity (degrees) errors over masks.

    One global scale aligns ``P`` to ``G`` over all masked pixels.  Intensity
    is the mean over masks of the squared difference of mean luminances;
    chromaticity is the mean angle between the mean RGB vectors per mask.
    """
    P, G = _as3d(P), _as3d(G)
    if masks is None or len(masks) == 0:
        masks = [np.ones(G.shape[-2:], dtype=bool)]
    masks = [np.asarray(m, dtype=bool).reshape(G.shape[-2:]) for m in masks]
    union = np.any(masks, axis=0)
    alpha = ls_scale_align(P, G, union[None])
    Pa = alpha * P
    lum_p, lum_g = luminance(Pa)[0], luminance(G)[0]
    inten, chroma = [], []
    for m in masks:
        inten.append((lum_p[m].mean() - lum_g[m].mean()) ** 2)
        chroma.append(_angle_deg(Pa[:, m].mean(axis=1), G[:, m].mean(axis=1)))
    return float(np.mean(inten) * 100), float(np.mean(chroma))


# -- reports --------------------------------------------------------------------------


def score_albedo(pred, gt, scene_id=""):
    inten, chroma = intensity_chroma_error(pred, gt, region_masks(gt))
    return {
        "scene_id": scene_id,
        "lmse": lmse(pred, gt),
        "rmse": rmse(pred, gt),
        "si_rmse": si_rmse(pred, gt),
        "ssim": ssim(pred, gt),
        "intensity": inten,
        "chromaticity": chroma,
    }


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=lambda: {
        "ssim_window": SSIM_WINDOW, "ssim_sigma": SSIM_SIGMA, "ssim_k1": SSIM_K1,
        "ssim_k2": SSIM_K2, "lmse_window": "min(H,W)/8", "lmse_stride": "window/2",
    })

    def aggregate(self) -> dict:
        return {c: float(np.mean([r[c] for r in self.rows])) if self.rows else float("nan")
                for c in COLUMNS[1:]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in sorted(self.rows, key=lambda r: r["scene_id"]):
            writer.writerow([r["scene_id"], *(f"{r[c]:.6f}" for c in COLUMNS[1:])])
        agg = self.aggregate()
        writer.writerow(["mean", *(f"{agg[c]:.6f}" for c in COLUMNS[1:])])
        return buf.getvalue()

    def summary(self) -> str:
        agg = self.aggregate()
        lines = [
            "# albedo metrics (internal definitions; not comparable to published tables)",
            "# rmse is NOT scale-invariant; lmse, si_rmse, intensity and chromaticity are",
            *(f"# {k} = {v}" for k, v in self.config.items()),
            f"images: {len(self.rows)}",
            *(f"{c}: {agg[c]:.6f}" for c in COLUMNS[1:]),
        ]
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(self.to_csv())
        (out_dir / "summary.txt").write_text(self.summary())
        return out_dir


def evaluate_dataset(manifest, components_dir, split="test", layer="A_d") -> MetricReport:
    """Score predicted component directories against a generated dataset.

    ``components_dir/<scene_id>/`` must hold a component directory for every
    scene of ``split`` in the manifest; scenes are visited in id order.
    """
    from .formation import load_components
    from .synthgen import read_manifest

    report = MetricReport()
    components_dir = Path(components_dir)
    for entry in read_manifest(manifest):
        if split is not None and entry.split != split:
            continue
        gt = getattr(load_components(entry.path), layer)
        pred_dir = components_dir / entry.scene_id
        if not pred_dir.exists():
            raise FileNotFoundError(f"no predicted components for {entry.scene_id} in {components_dir}")
        pred = getattr(load_components(pred_dir), layer)
        report.rows.append(score_albedo(pred, gt, entry.scene_id))
    return report
