"""Initializers and the conv/norm/activation blocks shared by every network."""
from typing import Mapping, Optional, Tuple
import numpy as np
from src.tensor import ops
from src.tensor.tape import Tensor

INIT_STD = 0.02


def conv_weight(rng: np.random.Generator, out_ch: int, in_ch: int) -> np.ndarray:
    return rng.normal(0.0, INIT_STD, size=(out_ch, in_ch, 3, 3)).astype(np.float32)


def dense_weight(rng: np.random.Generator, in_dim: int, out_dim: int) -> np.ndarray:
    return rng.normal(0.0, INIT_STD, size=(in_dim, out_dim)).astype(np.float32)


def zeros(*shape: int) -> np.ndarray:
    return np.zeros(shape, dtype=np.float32)


def normalize(x: Tensor, site: Optional[Tuple[Tensor, Tensor]]) -> Tensor:
    """Instance norm, or AdaIN when a (gamma, beta) pair is supplied for this site."""
    if site is None:
        return ops.instance_norm(x)
    gamma, beta = site
    return ops.adain(x, gamma, beta)


def conv_norm_act(
    params: Mapping[str, Tensor],
    prefix: str,
    x: Tensor,
    stride: int,
    site: Optional[Tuple[Tensor, Tensor]],
) -> Tensor:
    """conv (no bias) -> norm -> leaky relu"""
    h = ops.conv2d(x, params[f"{prefix}.w"], stride=stride)
    return ops.leaky_relu(normalize(h, site))
