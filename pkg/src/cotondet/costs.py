"""Geometry records that blocks emit for complexity accounting.

Blocks describe *what* they compute (convolution geometry, normalised
channels, elementwise passes); ``cotondet.metrics`` owns the formulas that
turn these records into parameter and FLOP counts.
"""
from dataclasses import dataclass


@dataclass(frozen=True)
class ConvGeom:
    """One convolution (or fully connected layer, as a 1x1 conv on a 1x1 map).

    ``shared`` marks a second application of weights already counted
    elsewhere in the same block: FLOPs count again, parameters do not.
    """

    c_in: int
    c_out: int
    k_h: int
    k_w: int
    h_out: int
    w_out: int
    groups: int = 1
    bias: bool = False
    shared: bool = False
    tag: str = ""


@dataclass(frozen=True)
class NormGeom:
    channels: int
    elements: int
    tag: str = ""


@dataclass(frozen=True)
class ElementwiseGeom:
    """A non-convolutional pass over ``elements`` values at ``flops_per_element``."""

    name: str
    elements: int
    flops_per_element: int = 1
    tag: str = ""


def retag(costs, tag):
    out = []
    for c in costs:
        out.append(type(c)(**{**c.__dict__, "tag": tag}))
    return out
