"""Forward-pass reference implementations of every block in the network."""
from .attention import (
    ECAParams,
    PHAMParams,
    SEParams,
    SimAMParams,
    eca_forward,
    eca_gates,
    pham_channel_gate,
    pham_coordinate_gate,
    pham_forward,
    pham_spatial_gate,
    se_forward,
    se_gates,
    simam_closed_form,
    simam_energy,
    simam_forward,
    simam_inverse_energy,
)
from .conv import (
    BottleneckParams,
    C3kParams,
    C3k2Params,
    ConcatParams,
    ConvBlockParams,
    DetectHeadParams,
    NearestUpsampleParams,
    SEConvBlockParams,
    SPPFParams,
    c3k2_forward,
    concat,
    convblock_forward,
    nearest_upsample,
    seconvblock_forward,
    sppf_forward,
)
from .resample import CarafeParams, SCDownParams, carafe_forward, carafe_kernels, scdown_forward

__all__ = [
    "ECAParams",
    "PHAMParams",
    "SEParams",
    "SimAMParams",
    "eca_forward",
    "eca_gates",
    "pham_channel_gate",
    "pham_coordinate_gate",
    "pham_forward",
    "pham_spatial_gate",
    "se_forward",
    "se_gates",
    "simam_closed_form",
    "simam_energy",
    "simam_forward",
    "simam_inverse_energy",
    "BottleneckParams",
    "C3kParams",
    "C3k2Params",
    "ConcatParams",
    "ConvBlockParams",
    "DetectHeadParams",
    "NearestUpsampleParams",
    "SEConvBlockParams",
    "SPPFParams",
    "c3k2_forward",
    "concat",
    "convblock_forward",
    "nearest_upsample",
    "seconvblock_forward",
    "sppf_forward",
    "CarafeParams",
    "SCDownParams",
    "carafe_forward",
    "carafe_kernels",
    "scdown_forward",
]
