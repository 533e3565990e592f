"""Seeded parameter initialization shared by both model families."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, parameter
from .errors import ContractError
from .rng import mix, random_floats

_TAG_INIT = 0x1417


@dataclass(frozen=True)
class ParamSpec:
    """Name, shape, and init rule for one parameter tensor."""

    name: str
    shape: tuple[int, ...]
    init: str = "he"  # "he" or "zero"
    fan_in: int = 0


def init_params(specs: list[ParamSpec], seed: int) -> dict[str, Tensor]:
    """He-style scaled uniform weights, zeros for biases and log-scales.

    Weights draw from U(-sqrt(6/fan_in), +sqrt(6/fan_in)) using a stream
    keyed on (seed, spec index), so the same seed always reproduces the
    same parameters bit for bit.
    """
    out: dict[str, Tensor] = {}
    for i, spec in enumerate(specs):
        if spec.name in out:
            raise ContractError(f"duplicate parameter name {spec.name!r}")
        n = int(np.prod(spec.shape, dtype=np.int64)) if spec.shape else 1
        if spec.init == "zero":
            data = np.zeros(spec.shape, dtype=np.float64)
        elif spec.init == "he":
            if spec.fan_in <= 0:
                raise ContractError(f"{spec.name}: he init needs a positive fan_in")
            bound = math.sqrt(6.0 / spec.fan_in)
            u = random_floats(mix(seed, _TAG_INIT, i), n)
            data = ((u * 2.0 - 1.0) * bound).reshape(spec.shape)
        else:
            raise ContractError(f"unknown init rule {spec.init!r}")
        out[spec.name] = parameter(data)
    return out
