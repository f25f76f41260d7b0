"""Illumination-aware edits on decomposed components.

Every edit is a pure function of an ``IntrinsicComponents``; the ``*_linear``
variants return the unclipped linear result and the public ones the
display-encoded sRGB image in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formation import IntrinsicComponents, load_components
from .imaging import LinearImage, linear_to_srgb, luminance, read_image, srgb_to_linear, write_image

OPERATIONS = ("despecularize", "whitebalance", "recover_highlights")
DEFAULT_TAU = 0.02


def _encode(linear):
    return linear_to_srgb(np.clip(linear, 0.0, 1.0))


def diffuse_linear(comp: IntrinsicComponents):
    return comp.A_d * comp.S_d


def despecularize(comp: IntrinsicComponents):
    """The diffuse image ``A_d * S_d``: drops the residual, specular or clipped."""
    return _encode(diffuse_linear(comp))


def whitebalance_linear(comp: IntrinsicComponents, keep_residual=False):
    S_neutral = np.broadcast_to(luminance(comp.S_d), comp.S_d.shape)
    out = comp.A_d * S_neutral
    if keep_residual:
        out = out + np.maximum(comp.R, 0)
    return out


def whitebalance(comp: IntrinsicComponents, keep_residual=False):
    """Replace the shading by its luminance, so every light becomes neutral."""
    return _encode(whitebalance_linear(comp, keep_residual))


def clipped_mask(comp: IntrinsicComponents, tau=DEFAULT_TAU):
    """Pixels whose most negative residual channel is below ``-tau``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return comp.R.min(axis=0, keepdims=True) < -tau


def recover_highlights(comp: IntrinsicComponents, exposure=1.0, tau=DEFAULT_TAU):
    """Re-expose the diffuse image, which keeps values above 1 where the input clipped.

    Returns ``(image, clipped_mask)``.
    """
    if exposure <= 0:
        raise ValueError("exposure must be positive")
    return _encode(exposure * diffuse_linear(comp)), clipped_mask(comp, tau)


@dataclass(frozen=True)
class EditRequest:
    source: str
    operation: str
    output: str
    exposure: float = 1.0
    tau: float = DEFAULT_TAU
    keep_residual: bool = False

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise ValueError(f"operation must be one of {OPERATIONS}")
        if self.exposure <= 0:
            raise ValueError("exposure must be positive")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")


def apply_edit(comp: IntrinsicComponents, req: EditRequest):
    """Run the edit; returns ``(srgb_image, mask or None)``."""
    if req.operation == "despecularize":
        return despecularize(comp), None
    if req.operation == "whitebalance":
        return whitebalance(comp, req.keep_residual), None
    return recover_highlights(comp, req.exposure, req.tau)


def run_edit(req: EditRequest, root=".") -> Path:
    """Load components from ``req.source`` (a component directory), edit and write."""
    root = Path(root)
    comp = load_components(root / req.source)
    image, mask = apply_edit(comp, req)
    out = root / req.output
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(LinearImage(image.astype(np.float32), "srgb"), out)
    if mask is not None:
        mask_path = out.with_name(out.stem + "_mask.iidf")
        write_image(LinearImage(np.repeat(mask, 3, axis=0).astype(np.float32), "data"), mask_path)
    return out


def load_input_image(path) -> np.ndarray:
    """Read a PNG or IIDF image as linear RGB ``(3, H, W)``."""
    img = read_image(path)
    if img.color_space == "srgb":
        img = srgb_to_linear(img)
    if img.channels != 3:
        raise ValueError(f"{path}: expected an RGB image, got {img.channels} channels")
    return np.asarray(img, dtype=np.float32)
