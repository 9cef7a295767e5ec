"""Named model shapes (the benchmark MoE models) and hardware profiles."""

from __future__ import annotations

from typing import Dict, Optional, Tuple

from .cost import HardwareProfile
from .model import ModelConfig, Phase, TaskKind

# name: (L, B, N, M, H, E/P, k, f)
MODEL_TABLE: Dict[str, Tuple[int, int, int, int, int, int, int, float]] = {
    "gpt2-tiny-moe": (12, 4, 256, 256, 512, 1, 2, 1.0),
    "bert-large-moe": (24, 4, 512, 512, 1024, 2, 1, 1.0),
    "llama2-moe": (32, 4, 512, 1024, 4096, 1, 1, 1.0),
    "llama2-moe-l": (64, 4, 512, 1024, 4096, 1, 1, 1.0),
    "deepseek-v2-s": (4, 4, 256, 5120, 1536, 2, 8, 1.0),
    "deepseek-v2-m": (7, 4, 256, 5120, 1536, 2, 1, 1.0),
}

# Customized layer of the ablation study, stacked into a few blocks so
# that all-reduce of one block can overlap work of the next.
ABLATION_LAYER = dict(B=4, N=512, M=8192, H=8192, k=2, f=1.2)

DEFAULT_P = 16
DEFAULT_R = 2
ABLATION_R = 4


def model_preset(name: str, P: int = DEFAULT_P, R: Optional[int] = None) -> ModelConfig:
    """Config of a named model; ``R`` defaults to 2 (4 for the ablation layer)."""
    key = name.lower()
    if key == "ablation-layer":
        return ModelConfig(P=P, L=4, E=P, R=R or ABLATION_R, **ABLATION_LAYER)
    R = R or DEFAULT_R
    if key not in MODEL_TABLE:
        raise KeyError(f"unknown model preset {name!r}; have {sorted(MODEL_NAMES)}")
    L, B, N, M, H, e_per_p, k, f = MODEL_TABLE[key]
    return ModelConfig(P=P, L=L, B=B, N=N, M=M, H=H, E=e_per_p * P, k=k, f=f, R=R)


MODEL_NAMES = tuple(MODEL_TABLE) + ("ablation-layer",)


def _profiles() -> Dict[str, HardwareProfile]:
    cluster1 = HardwareProfile(
        flops_per_us=1.5e7,
        bw_bytes_per_us=6000.0,
        alpha_a2a_us=40.0,
        alpha_ar_us=120.0,
    )
    cluster2 = HardwareProfile(
        flops_per_us=1.0e7,
        bw_bytes_per_us=1000.0,
        alpha_a2a_us=60.0,
        alpha_ar_us=200.0,
    )
    # Hand-fit full-batch task times (us) for the ablation layer, where
    # measured attention and expert compute are of similar size.
    balanced = HardwareProfile(
        flops_per_us=2.0e7,
        bw_bytes_per_us=12500.0,
        alpha_a2a_us=0.0,
        alpha_ar_us=1.0,
        overrides={
            (TaskKind.AT, Phase.FORWARD): 40.0,
            (TaskKind.AT, Phase.BACKWARD): 80.0,
            (TaskKind.EXP, Phase.FORWARD): 60.0,
            (TaskKind.EXP, Phase.BACKWARD): 120.0,
            (TaskKind.DISPATCH, Phase.FORWARD): 50.0,
            (TaskKind.DISPATCH, Phase.BACKWARD): 50.0,
            (TaskKind.COMBINE, Phase.FORWARD): 50.0,
            (TaskKind.COMBINE, Phase.BACKWARD): 50.0,
            (TaskKind.AR_CHUNK, Phase.BACKWARD): 100.0,
        },
    )
    # Only the MoE layer computes, and barely: A2A time hides all compute.
    comm_dominated = HardwareProfile(
        flops_per_us=2.0e7,
        bw_bytes_per_us=12500.0,
        overrides={
            (TaskKind.AT, Phase.FORWARD): 0.0,
            (TaskKind.AT, Phase.BACKWARD): 0.0,
            (TaskKind.EXP, Phase.FORWARD): 1.0,
            (TaskKind.EXP, Phase.BACKWARD): 2.0,
        },
    )
    compute_dominated = HardwareProfile(
        flops_per_us=2.0e4,
        bw_bytes_per_us=12500.0,
        alpha_a2a_us=20.0,
        alpha_ar_us=50.0,
    )
    return {
        "cluster1": cluster1,
        "cluster2": cluster2,
        "balanced": balanced,
        "comm-dominated": comm_dominated,
        "compute-dominated": compute_dominated,
    }


PROFILES = _profiles()
PROFILE_NAMES = tuple(PROFILES)


def profile_preset(name: str, P: int = DEFAULT_P) -> HardwareProfile:
    key = name.lower()
    if key not in PROFILES:
        raise KeyError(f"unknown profile preset {name!r}; have {sorted(PROFILES)}")
    return PROFILES[key]
