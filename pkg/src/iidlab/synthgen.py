"""Procedural ground-truth scenes: sparse albedo, height-field geometry,
colored directional lights, Phong highlights and sensor clipping."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .formation import (
    EPS,
    IntrinsicComponents,
    compute_residual,
    grayscale_oracle,
    inverse_shading,
    read_kv,
    rgb_shading,
    save_components,
    shading_to_chroma,
)
from .imaging import LinearImage, luminance, read_iidf, write_iidf

MANIFEST = "manifest.txt"
PARAMS_FILE = "params.txt"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SceneParams:
    resolution: int = 64
    albedo_regions: tuple[int, int] = (3, 8)
    lights: tuple[int, int] = (1, 3)
    light_chroma_strength: float = 0.6
    specular_strength: float = 0.5
    shininess: float = 30.0
    clip_probability: float = 0.0
    ambient: float = 0.15
    seed: int = 0

    def __post_init__(self):
        r = self.resolution
        if r < 32 or r & (r - 1):
            raise ValueError(f"resolution must be a power of two >= 32, got {r}")
        for name in ("albedo_regions", "lights"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} range {lo, hi} is empty or non-positive")
        if self.lights[1] > 3:
            raise ValueError("at most 3 lights")
        for name in ("light_chroma_strength", "specular_strength", "clip_probability"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.shininess <= 0 or self.ambient < 0:
            raise ValueError("shininess must be positive and ambient non-negative")

    def to_kv(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ",".join(map(str, value))
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, kv: dict) -> "SceneParams":
        unknown = set(kv) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scene parameters {sorted(unknown)}")
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.name in ("albedo_regions", "lights"):
                kwargs[f.name] = tuple(int(v) for v in raw.split(","))
            elif f.name in ("resolution", "seed"):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)


@dataclass
class SceneGT:
    components: IntrinsicComponents
    specular_mask: np.ndarray
    clipped_mask: np.ndarray
    lights: list = field(default_factory=list)
    seed: int | None = None
    scene_id: str | None = None


def _albedo(rng, n, k_range):
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    sites = rng.uniform(0, 1, size=(k, 2))
    colors = rng.uniform(0.1, 0.9, size=(k, 3))
    yy, xx = np.mgrid[0:n, 0:n]
    pts = np.stack([(yy + 0.5) / n, (xx + 0.5) / n], axis=-1)
    d2 = ((pts[:, :, None, :] - sites[None, None]) ** 2).sum(-1)
    labels = d2.argmin(-1)
    return colors[labels].transpose(2, 0, 1), labels, k


def _normals(rng, n):
    yy, xx = np.mgrid[0:n, 0:n]
    y = (yy + 0.5) / n
    x = (xx + 0.5) / n
    h = np.zeros((n, n))
    for _ in range(int(rng.integers(3, 9))):
        cy, cx = rng.uniform(0, 1, 2)
        sigma = rng.uniform(0.08, 0.25)
        amp = rng.uniform(-0.25, 0.25)
        h += amp * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma**2))
    dy, dx = np.gradient(h, 1 / n)
    nrm = np.stack([-dx, -dy, np.ones_like(h)])
    return nrm / np.linalg.norm(nrm, axis=0, keepdims=True)


def _lights(rng, params):
    count = int(rng.integers(params.lights[0], params.lights[1] + 1))
    out = []
    for _ in range(count):
        theta = rng.uniform(0, 2 * np.pi)
        z = rng.uniform(0.35, 1.0)
        r = np.sqrt(1 - z * z)
        direction = np.array([r * np.cos(theta), r * np.sin(theta), z])
        hue = rng.uniform(0.05, 1.0, 3)
        hue = hue / luminance(hue.reshape(3, 1, 1)).item()
        s = params.light_chroma_strength
        intensity = rng.uniform(0.7, 1.3) / count
        color = intensity * ((1 - s) + s * hue)
        out.append((color, direction))
    return out


def gen_scene(params: SceneParams, seed: int | None = None) -> SceneGT:
    """Generate one ground-truth tuple; deterministic in ``(params, seed)``."""
    seed = params.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = params.resolution
    albedo, labels, k = _albedo(rng, n, params.albedo_regions)
    normals = _normals(rng, n)
    lights = _lights(rng, params)

    shading = np.full((3, n, n), params.ambient)
    spec = np.zeros((3, n, n))
    view = np.array([0.0, 0.0, 1.0])
    for color, direction in lights:
        ndotl = np.tensordot(direction, normals, axes=1)
        lit = np.maximum(ndotl, 0.0)
        shading = shading + color[:, None, None] * lit
        refl = 2 * ndotl * normals - direction[:, None, None]
        rdotv = np.maximum(np.tensordot(view, refl, axes=1), 0.0)
        lobe = np.where(ndotl > 0, rdotv**params.shininess, 0.0)
        spec = spec + color[:, None, None] * lobe

    shiny_regions = rng.uniform(size=k) < 0.5
    shiny_regions[rng.integers(k)] = True
    spec = params.specular_strength * spec * shiny_regions[labels][None]
    spec[spec < 1e-6] = 0.0

    pre = albedo * shading + spec
    if rng.uniform() < params.clip_probability:
        target_peak = rng.uniform(1.2, 1.6)
    else:
        target_peak = rng.uniform(0.6, 0.95)
    scale = target_peak / pre.max()
    shading = shading * scale
    spec = spec * scale

    albedo = albedo.astype(np.float32)
    shading = shading.astype(np.float32)
    spec = spec.astype(np.float32)
    pre = albedo * shading + spec
    image = np.clip(pre, 0.0, 1.0)
    residual = compute_residual(image, albedo, shading)

    comp = IntrinsicComponents(I=image, A_d=albedo, S_d=shading, R=residual)
    specular_mask = np.any(spec > 0, axis=0, keepdims=True).astype(np.float32)
    clipped_mask = np.any(pre > 1, axis=0, keepdims=True).astype(np.float32)
    lights = [(c * scale, d) for c, d in lights]
    return SceneGT(comp, specular_mask, clipped_mask, lights, seed=seed)


def make_targets(scene: SceneGT, eps=EPS) -> dict:
    """Supervision targets derived from a ground-truth scene."""
    c = scene.components
    _, C = shading_to_chroma(rgb_shading(c.I, c.A_d, eps), eps)
    A_g, S_g = grayscale_oracle(c.I, c.A_d, c.S_d, eps)
    return {"C_gt": C, "D_gt": inverse_shading(c.S_d), "S_g_gt": S_g, "A_g_gt": A_g}


def split_of(seed: int) -> str:
    """Deterministic train/val/test tag (80/10/10) from a hash of the seed."""
    bucket = hashlib.sha256(str(int(seed)).encode()).digest()[0] % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


def write_scene(scene: SceneGT, directory) -> Path:
    directory = Path(directory)
    save_components(scene.components, directory)
    masks = np.concatenate([scene.specular_mask, scene.clipped_mask])
    write_iidf(LinearImage(masks, "data"), directory / "masks.iidf")
    rows = [" ".join(f"{v:.9g}" for v in (*color, *direction)) for color, direction in scene.lights]
    (directory / "lights.txt").write_text("\n".join(rows) + "\n")
    return directory


def read_scene(directory, seed=None, scene_id=None) -> SceneGT:
    from .formation import load_components

    directory = Path(directory)
    comp = load_components(directory)
    masks = read_iidf(directory / "masks.iidf").data
    lights = []
    lights_file = directory / "lights.txt"
    if lights_file.exists():
        for row in lights_file.read_text().split("\n"):
            if row.strip():
                vals = np.array([float(v) for v in row.split()])
                lights.append((vals[:3], vals[3:]))
    return SceneGT(comp, masks[0:1].copy(), masks[1:2].copy(), lights, seed, scene_id)


def gen_dataset(params: SceneParams, n: int, out_dir, base_seed: int | None = None) -> Path:
    """Write ``n`` scenes plus ``manifest.txt``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = params.seed if base_seed is None else base_seed
    rows = ["scene_id seed split path"]
    for i in range(n):
        seed = base_seed + i
        scene_id = f"scene_{i:05d}"
        write_scene(gen_scene(params, seed), out_dir / scene_id)
        rows.append(f"{scene_id} {seed} {split_of(seed)} {scene_id}")
    (out_dir / PARAMS_FILE).write_text(params.to_kv())
    manifest = out_dir / MANIFEST
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


@dataclass(frozen=True)
class ManifestEntry:
    scene_id: str
    seed: int
    split: str
    path: Path


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != ["scene_id", "seed", "split", "path"]:
        raise ValueError(f"{path}: missing manifest header")
    entries = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4 or parts[2] not in SPLITS:
            raise ValueError(f"{path}: malformed manifest row {ln!r}")
        entries.append(ManifestEntry(parts[0], int(parts[1]), parts[2], path.parent / parts[3]))
    return sorted(entries, key=lambda e: e.scene_id)


def read_params(manifest_path) -> SceneParams:
    root = Path(manifest_path)
    root = root if root.is_dir() else root.parent
    return SceneParams.from_kv(read_kv(root / PARAMS_FILE))


def load_dataset(manifest_path, split: str | None = None) -> list[SceneGT]:
    return [read_scene(e.path, e.seed, e.scene_id)
            for e in read_manifest(manifest_path) if split is None or e.split == split]
