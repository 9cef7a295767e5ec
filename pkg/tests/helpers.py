"""Shared builders for the test modules."""

from flowsim.cost import HardwareProfile
from flowsim.model import ModelConfig, Phase, TaskKind

F, B = Phase.FORWARD, Phase.BACKWARD


def small_config(**kw):
    base = dict(P=4, L=2, B=2, N=64, M=128, H=256, E=4, k=2, f=1.0, R=2)
    base.update(kw)
    return ModelConfig(**base)


def fixed_profile(at=0.0, exp=0.0, a2a=0.0, ar=0.0, alpha_ar=0.0, backward_factor=2.0):
    """Full-batch durations in us; backward compute is ``backward_factor`` times forward."""
    return HardwareProfile(
        flops_per_us=1.0,
        bw_bytes_per_us=1.0,
        alpha_a2a_us=0.0,
        alpha_ar_us=alpha_ar,
        overrides={
            (TaskKind.AT, F): at,
            (TaskKind.AT, B): at * backward_factor,
            (TaskKind.EXP, F): exp,
            (TaskKind.EXP, B): exp * backward_factor,
            (TaskKind.DISPATCH, F): a2a,
            (TaskKind.DISPATCH, B): a2a,
            (TaskKind.COMBINE, F): a2a,
            (TaskKind.COMBINE, B): a2a,
            (TaskKind.AR_CHUNK, B): ar,
        },
    )
