"""Config files, run directories and the stage training entry points.

A run directory looks like::

    runs/<name>/config           key = value config of the latest stage trained
    runs/<name>/checkpoints/     <stage>.iidc (each embeds its own settings)
    runs/<name>/curves.csv       stage, iteration, train_loss, val_loss, val_mse
    runs/<name>/samples/         validation predictions (IIDF)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..formation import read_kv
from ..imaging import LinearImage, write_iidf
from ..synthgen import load_dataset, read_manifest
from .estimator import NumericalError, StageEstimator
from .features import build_stage_data
from .stages import StageSpec, get_stage

log = logging.getLogger(__name__)

DEFAULT_WIDTHS = {"chroma": (16, 32, 64, 64), "baseline": (24, 48, 96, 96)}
BASE_WIDTHS = (16, 32, 64)


def default_widths(stage_name):
    spec = get_stage(stage_name)
    return DEFAULT_WIDTHS.get(spec.name, DEFAULT_WIDTHS.get(spec.stage, BASE_WIDTHS))


@dataclass
class TrainConfig:
    """Training configuration; serialized as ``key = value`` lines.

    ``upstream`` is ``oracle`` or a comma list ``stage=checkpoint`` naming
    frozen estimators whose predictions replace ground-truth inputs.
    """

    manifest: str
    stage: str = "chroma"
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 3e-4
    seed: int = 0
    mse_weight: float = 1.0
    msg_weight: float = 1.0
    msg_scales: int = 4
    eval_interval: int = 100
    widths: str = ""
    upstream: str = "oracle"
    name: str = ""
    max_scenes: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in ("int", int):
                setattr(self, f.name, int(value))
            elif f.type in ("float", float):
                setattr(self, f.name, float(value))
        if self.iterations < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("iterations, batch_size and eval_interval must be positive")
        if self.max_scenes < 0:
            raise ValueError("max_scenes must be >= 0")
        get_stage(self.stage)

    @classmethod
    def from_kv(cls, kv: dict, **overrides):
        known = {f.name for f in fields(cls)}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        merged = {**kv, **{k: v for k, v in overrides.items() if v is not None}}
        if "manifest" not in merged:
            raise ValueError("config needs a 'manifest' entry")
        return cls(**merged)

    @classmethod
    def from_file(cls, path, **overrides):
        return cls.from_kv(read_kv(path), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def run_name(self) -> str:
        return self.name or f"{self.stage}_s{self.seed}"

    def width_tuple(self):
        if self.widths:
            return tuple(int(v) for v in str(self.widths).split(","))
        return default_widths(self.stage)

    def upstream_estimators(self, root=".") -> dict:
        if not self.upstream or self.upstream == "oracle":
            return {}
        out = {}
        for item in self.upstream.split(","):
            stage, path = item.split("=", 1)
            out[stage.strip()] = StageEstimator.load(Path(root) / path.strip())
        return out

    def estimator(self) -> StageEstimator:
        return StageEstimator(stage=self.stage, widths=self.width_tuple(), iterations=self.iterations,
                              batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                              mse_weight=self.mse_weight, msg_weight=self.msg_weight,
                              msg_scales=self.msg_scales, eval_interval=self.eval_interval)


def load_splits(manifest, max_scenes=0):
    train = load_dataset(manifest, "train")
    val = load_dataset(manifest, "val")
    if max_scenes:
        train = train[:max_scenes]
    if not train:
        raise ValueError(f"{manifest}: no training scenes")
    return train, val


def write_curves(rows, path, stage):
    """Write (or update) ``curves.csv``; rows of other stages already there are kept."""
    path = Path(path)
    kept = []
    if path.exists():
        with open(path, newline="") as fh:
            kept = [r for r in csv.reader(fh)][1:]
        kept = [r for r in kept if r and r[0] != stage]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "iteration", "train_loss", "val_loss", "val_mse"])
        writer.writerows(kept)
        for r in rows:
            writer.writerow([stage, r["iteration"], *("" if r[k] is None else f"{r[k]:.8g}"
                                                     for k in ("train_loss", "val_loss", "val_mse"))])


def train_stage(spec: StageSpec | str, cfg: TrainConfig, root=".", scenes=None):
    """Train one stage and write its run directory; returns ``(checkpoint, estimator)``."""
    spec = get_stage(spec) if isinstance(spec, str) else spec
    if spec.name != cfg.stage:
        cfg = TrainConfig(**{**asdict(cfg), "stage": spec.name})
    root = Path(root)
    train, val = scenes if scenes is not None else load_splits(root / cfg.manifest, cfg.max_scenes)
    upstream = cfg.upstream_estimators(root)
    X, y = build_stage_data(spec, train, upstream)
    X_val, y_val = build_stage_data(spec, val, upstream) if val else (None, None)

    run_dir = root / "runs" / cfg.run_name()
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "samples").mkdir(exist_ok=True)
    (run_dir / "config").write_text(cfg.to_text())

    est = cfg.estimator()
    try:
        est.fit(X, y, X_val, y_val)
    except NumericalError as err:
        seeds = [train[i].seed for i in err.batch_indices]
        (run_dir / "nan_dump.txt").write_text(f"{err}\nbatch seeds: {seeds}\n")
        raise NumericalError(f"{err}; batch seeds {seeds}", err.batch_indices) from err

    ckpt = est.save(run_dir / "checkpoints" / f"{spec.name}.iidc")
    write_curves(est.curve_, run_dir / "curves.csv", spec.name)
    if X_val is not None:
        pred = est.predict(X_val[:1])[0]
        sample = f"{spec.name}_{val[0].scene_id or 'val0'}.iidf"
        write_iidf(LinearImage(pred, "data"), run_dir / "samples" / sample)
    log.info("trained %s -> %s", spec.name, ckpt)
    return ckpt, est


def train_baseline(cfg: TrainConfig, root=".", scenes=None):
    return train_stage("baseline", cfg, root, scenes)


def manifest_seeds(manifest, split=None):
    return [e.seed for e in read_manifest(manifest) if split is None or e.split == split]
