"""Image formation models and the deterministic maps between their variables.

Three models are related here:

* grayscale diffuse ``I = A_g * S_g`` with single-channel shading,
* RGB diffuse ``I = A_c * S_c`` with colorful shading,
* intrinsic residual ``I = A_d * S_d + R`` with an additive signed remainder.

All divisions are guarded as ``x / max(y, EPS)`` so exact ratios are kept
wherever the divisor is at least ``EPS`` and black pixels stay black.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .imaging import LinearImage, luminance, read_iidf, resize_bilinear, write_iidf

EPS = 1e-4


def safe_div(num, den, eps=EPS):
    return num / np.maximum(den, eps)


def shading_to_chroma(S, eps=EPS):
    """Split RGB shading into luminance and the bounded chroma map ``C``.

    ``U = S_r / S_g`` and ``V = S_b / S_g`` are the red/green and blue/green
    ratios; ``C = [1/(U+1), 1/(V+1)]`` maps them into (0, 1).  Neutral shading
    gives exactly ``(0.5, 0.5)``.
    """
    S = np.asarray(S)
    if S.shape[-3] != 3:
        raise ValueError(f"shading must have 3 channels, got {S.shape}")
    green = np.maximum(S[..., 1:2, :, :], eps)
    u = S[..., 0:1, :, :] / green
    v = S[..., 2:3, :, :] / green
    C = np.concatenate([1 / (u + 1), 1 / (v + 1)], axis=-3)
    return luminance(S), C


def chroma_to_shading(lum, C):
    """Rebuild RGB shading from luminance and chroma.

    The direction ``(U, 1, V)`` is recovered from ``C`` and scaled so the
    luminance of the result equals ``lum`` exactly.
    """
    lum = np.asarray(lum)
    C = np.asarray(C)
    if C.shape[-3] != 2:
        raise ValueError(f"chroma must have 2 channels, got {C.shape}")
    if np.any(C <= 0) or np.any(C >= 1):
        raise ValueError("chroma values must lie strictly inside (0, 1)")
    if np.any(lum < 0):
        raise ValueError("luminance must be non-negative")
    u = (1 - C[..., 0:1, :, :]) / C[..., 0:1, :, :]
    v = (1 - C[..., 1:2, :, :]) / C[..., 1:2, :, :]
    ones = np.ones_like(u)
    direction = np.concatenate([u, ones, v], axis=-3)
    return direction * (lum / luminance(direction))


def inverse_shading(S):
    """Map unbounded shading into (0, 1] via ``D = 1 / (S + 1)``."""
    S = np.asarray(S)
    if np.any(S < 0):
        raise ValueError("shading must be non-negative")
    return 1 / (S + 1)


def shading_from_inverse(D):
    D = np.asarray(D)
    if np.any(D <= 0) or np.any(D > 1):
        raise ValueError("inverse shading must lie in (0, 1]")
    return 1 / D - 1


def compute_residual(I, A_d, S_d):
    """The non-diffuse remainder ``R = I - A_d * S_d`` (signed)."""
    return np.asarray(I) - np.asarray(A_d) * np.asarray(S_d)


def rgb_shading(I, A, eps=EPS):
    """Colorful shading of the RGB diffuse model, ``S_c = I / A``."""
    return safe_div(np.asarray(I), np.asarray(A), eps)


def grayscale_oracle(I, A_d, S_d=None, eps=EPS):
    """Grayscale decomposition ``(A_g, S_g)`` implied by a known diffuse albedo.

    ``S_g`` is the luminance of ``I / A_d`` and ``A_g = I / S_g``, so any
    shading color ends up in ``A_g``.  ``S_d`` is accepted for symmetry with
    the ground-truth tuple but is not needed.
    """
    S_c = rgb_shading(I, A_d, eps)
    S_g = luminance(S_c)
    A_g = safe_div(np.asarray(I), S_g, eps)
    return A_g, S_g


def upsample_chroma(C_low, size):
    return resize_bilinear(C_low, size)


def albedo_from_chroma(I, S_g, C_low, eps=EPS):
    """Colorize grayscale shading with (possibly low-res) chroma.

    Returns ``(A_hat, S_hat)`` with ``S_hat`` carrying luminance ``S_g`` and
    the upsampled chroma, and ``A_hat = I / S_hat``.
    """
    I = np.asarray(I)
    C_up = upsample_chroma(C_low, I.shape[-2:])
    S_hat = chroma_to_shading(S_g, C_up)
    A_hat = safe_div(I, S_hat, eps)
    return A_hat, S_hat


# -- component bundles --------------------------------------------------------

# role -> (file stem, color-space tag)
ROLES = {
    "I": ("image", "linear"),
    "A_d": ("albedo", "linear"),
    "S_d": ("shading", "linear"),
    "R": ("residual", "data"),
    "S_g": ("gray_shading", "linear"),
    "A_g": ("gray_albedo", "linear"),
    "C": ("chroma", "data"),
    "S_hat": ("chroma_shading", "linear"),
    "A_hat": ("chroma_albedo", "linear"),
    "S_c": ("rgb_shading", "linear"),
    "D": ("inverse_shading", "data"),
}
COMPONENTS_MANIFEST = "components.txt"


@dataclass
class IntrinsicComponents:
    """A decomposition of one image, optionally with intermediate layers."""

    I: np.ndarray
    A_d: np.ndarray
    S_d: np.ndarray
    R: np.ndarray
    S_g: np.ndarray | None = None
    A_g: np.ndarray | None = None
    C: np.ndarray | None = None
    S_hat: np.ndarray | None = None
    A_hat: np.ndarray | None = None
    S_c: np.ndarray | None = None
    D: np.ndarray | None = None
    extras: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_diffuse(cls, I, A_d, S_d, **intermediates):
        return cls(I=I, A_d=A_d, S_d=S_d, R=compute_residual(I, A_d, S_d), **intermediates)

    def layers(self):
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name in ROLES and getattr(self, f.name) is not None}

    def diffuse(self):
        return self.A_d * self.S_d

    def check(self, atol=1e-6, atol_models=1e-5, eps=EPS):
        """Raise ``ValueError`` if a formation identity is violated."""
        err = np.max(np.abs(self.I - (self.A_d * self.S_d + self.R)))
        if err > atol:
            raise ValueError(f"residual model violated by {err:.3g}")
        if self.S_g is not None and self.A_g is not None:
            ok = np.broadcast_to(self.S_g >= eps, self.I.shape)
            err = np.abs(self.I - self.A_g * self.S_g)[ok]
            if err.size and err.max() > atol_models:
                raise ValueError(f"grayscale model violated by {err.max():.3g}")
        if self.S_hat is not None and self.A_hat is not None:
            ok = self.S_hat >= eps
            err = np.abs(self.I - self.A_hat * self.S_hat)[ok]
            if err.size and err.max() > atol_models:
                raise ValueError(f"RGB diffuse model violated by {err.max():.3g}")
        if self.D is not None:
            err = np.max(np.abs(self.D - inverse_shading(self.S_d)))
            if err > atol:
                raise ValueError(f"inverse shading mismatch {err:.3g}")
        return self


def save_components(comp: IntrinsicComponents, directory) -> Path:
    """Write every present layer as IIDF plus a ``role = file`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for role, arr in comp.layers().items():
        stem, tag = ROLES[role]
        if tag != "data" and np.any(arr < 0):
            tag = "data"
        write_iidf(LinearImage(arr, tag), directory / f"{stem}.iidf")
        lines.append(f"{role} = {stem}.iidf")
    (directory / COMPONENTS_MANIFEST).write_text("\n".join(lines) + "\n")
    return directory


def read_kv(path) -> dict:
    """Parse a ``key = value`` text file; ``#`` starts a comment line."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_components(directory) -> IntrinsicComponents:
    directory = Path(directory)
    manifest = directory / COMPONENTS_MANIFEST
    if manifest.exists():
        entries = read_kv(manifest)
    else:
        entries = {role: f"{stem}.iidf" for role, (stem, _) in ROLES.items()
                   if (directory / f"{stem}.iidf").exists()}
    unknown = set(entries) - set(ROLES)
    if unknown:
        raise ValueError(f"unknown component roles {sorted(unknown)}")
    layers = {role: read_iidf(directory / name).data.copy() for role, name in entries.items()}
    missing = {"I", "A_d", "S_d"} - set(layers)
    if missing:
        raise ValueError(f"{directory}: missing components {sorted(missing)}")
    if "R" not in layers:
        layers["R"] = compute_residual(layers["I"], layers["A_d"], layers["S_d"])
    return IntrinsicComponents(**layers)
