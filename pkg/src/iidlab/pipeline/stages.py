"""Stage definitions: which layers a network sees and what it predicts."""

from __future__ import annotations

from dataclasses import dataclass, replace

FEATURE_CHANNELS = {
    "I": 3,
    "S_g": 1,
    "A_g": 3,
    "A_hat": 3,
    "S_hat": 3,
    "A_d": 3,
    "S_c": 3,
}

# D_g: inverse grayscale shading, C: shading chroma, A_d: diffuse albedo,
# D: inverse diffuse shading, D_c: inverse RGB shading of the diffuse model.
TARGET_CHANNELS = {"D_g": 1, "C": 2, "A_d": 3, "D": 3, "D_c": 3}

STAGE_IDS = ("gray0", "chroma", "albedo", "diffuse", "baseline")


@dataclass(frozen=True)
class StageSpec:
    name: str
    stage: str
    inputs: tuple[str, ...]
    target: str
    downscale: int = 1
    mse_weight: float = 1.0
    msg_weight: float = 1.0

    def __post_init__(self):
        if self.stage not in STAGE_IDS:
            raise ValueError(f"unknown stage {self.stage!r}")
        unknown = [f for f in self.inputs if f not in FEATURE_CHANNELS]
        if unknown or self.target not in TARGET_CHANNELS:
            raise ValueError(f"unknown inputs {unknown} or target {self.target!r}")
        if self.downscale < 1 or self.downscale & (self.downscale - 1):
            raise ValueError("downscale must be a power of two")

    @property
    def in_channels(self) -> int:
        return sum(FEATURE_CHANNELS[f] for f in self.inputs)

    @property
    def out_channels(self) -> int:
        return TARGET_CHANNELS[self.target]

    @property
    def out_level(self) -> int:
        return self.downscale.bit_length() - 1

    def with_weights(self, mse_weight, msg_weight):
        return replace(self, mse_weight=mse_weight, msg_weight=msg_weight)


STAGES = {
    "gray0": StageSpec("gray0", "gray0", ("I",), "D_g"),
    "chroma": StageSpec("chroma", "chroma", ("I", "S_g", "A_g"), "C", downscale=4),
    "albedo": StageSpec("albedo", "albedo", ("I", "A_hat", "S_hat"), "A_d"),
    "diffuse": StageSpec("diffuse", "diffuse", ("I", "A_d", "S_c"), "D"),
    "baseline": StageSpec("baseline", "baseline", ("I",), "A_d"),
}

_VARIANTS = {
    # chroma ablation: predict low-res chroma vs. low-res albedo from the same input
    "direct_albedo": StageSpec("direct_albedo", "chroma", ("I", "S_g", "A_g"), "A_d", downscale=4),
    # albedo ablation
    "albedo_image_only": StageSpec("albedo_image_only", "albedo", ("I",), "A_d"),
    "albedo_gray_input": StageSpec("albedo_gray_input", "albedo", ("I", "S_g", "A_g"), "A_d"),
    "shading_estimation": StageSpec("shading_estimation", "albedo", ("I", "A_hat", "S_hat"), "D_c"),
    # diffuse ablation
    "diffuse_image_only": StageSpec("diffuse_image_only", "diffuse", ("I",), "D"),
    "diffuse_gray_input": StageSpec("diffuse_gray_input", "diffuse", ("I", "S_g", "A_g"), "D"),
}

ABLATION_TABLES = {
    "chroma": ("chroma", "direct_albedo"),
    "albedo": ("albedo", "shading_estimation", "albedo_gray_input", "albedo_image_only"),
    "diffuse": ("diffuse", "diffuse_gray_input", "diffuse_image_only"),
}


def get_stage(name: str) -> StageSpec:
    if name in STAGES:
        return STAGES[name]
    return ablation_variants(name)


def ablation_variants(name: str) -> StageSpec:
    """Stage spec for a pipeline stage or one of its ablated alternatives."""
    if name in _VARIANTS:
        return _VARIANTS[name]
    if name in STAGES:
        return STAGES[name]
    raise KeyError(f"unknown variant {name!r}; choose from {sorted({*STAGES, *_VARIANTS})}")
