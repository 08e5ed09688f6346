"""
Generator, discriminator and AdaIN code-generator networks.

Networks are plain parameter groups plus forward functions. The forward
functions take the parameters as Tensors (tracked or constant), so the same
code runs the 32-bit training path and the 64-bit gradient oracle.

Topology at depth D and width w (channel count ch(k) = w * 2**k):
- generator: enc0 (stride 1) -> enc1..encD (stride 2) -> decD..dec1
  (upsample, concat with the matching encoder output, conv) -> head conv,
  with optional tanh and optional input->output residual skip
- discriminator: D stride-2 stages -> 1-channel head conv (raw patch scores)

Convolutions that feed a normalization have no bias; only head convs do.
"""
from dataclasses import dataclass
from typing import List, Literal, Mapping, Optional, Tuple, Union
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from src.nn.layers import conv_norm_act, conv_weight, dense_weight, zeros
from src.nn.params import ParamGroup
from src.tensor import ops
from src.tensor.tape import Tensor
from src.utils.errors import ModelConfigError, ShapeError
from src.utils.logger import LOGGER

SeedLike = Union[int, np.random.SeedSequence]


class ModelConfig(BaseModel):
    """Configuration of one generator or discriminator backbone."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    in_channels: int = Field(default=1, ge=1)
    width: int = Field(default=8, ge=1)
    depth: int = Field(default=2, ge=1)
    residual_skip: bool = False
    norm_mode: Literal["instance", "adain"] = "instance"
    final_tanh: bool = False

    def channels(self, stage: int) -> int:
        return self.width * 2 ** stage


@dataclass
class AdaInCode:
    """One (gamma, beta) pair per AdaIN site, in site order."""
    pairs: List[Tuple[Tensor, Tensor]]

    def validate(self, sites: List[int]) -> None:
        if len(self.pairs) != len(sites):
            raise ModelConfigError(f"Code has {len(self.pairs)} pairs, network has {len(sites)} AdaIN sites")
        for index, ((gamma, beta), channels) in enumerate(zip(self.pairs, sites)):
            if gamma.shape != (channels,) or beta.shape != (channels,):
                raise ModelConfigError(
                    f"Site {index}: code shapes {gamma.shape}/{beta.shape} do not match {channels} channels"
                )


# ============================================================================
# Norm sites
# ============================================================================

def generator_sites(cfg: ModelConfig) -> List[int]:
    """Channel count at every normalization site of the generator, in forward order."""
    encoder = [cfg.channels(k) for k in range(cfg.depth + 1)]
    decoder = [cfg.channels(k - 1) for k in range(cfg.depth, 0, -1)]
    return encoder + decoder


def discriminator_sites(cfg: ModelConfig) -> List[int]:
    return [cfg.channels(k) for k in range(cfg.depth)]


# ============================================================================
# Builders
# ============================================================================

def build_generator(cfg: ModelConfig, seed: SeedLike, role: str = "G") -> ParamGroup:
    """
    U-net generator parameters, normal(0, 0.02) weights.

    A residual generator gets a zero head so that it starts as the identity map.
    """
    rng = np.random.default_rng(seed)
    group = ParamGroup(role)
    group.add("enc0.w", conv_weight(rng, cfg.channels(0), cfg.in_channels))
    for k in range(1, cfg.depth + 1):
        group.add(f"enc{k}.w", conv_weight(rng, cfg.channels(k), cfg.channels(k - 1)))
    for k in range(cfg.depth, 0, -1):
        group.add(f"dec{k}.w", conv_weight(rng, cfg.channels(k - 1), cfg.channels(k) + cfg.channels(k - 1)))
    if cfg.residual_skip:
        group.add("head.w", zeros(cfg.in_channels, cfg.channels(0), 3, 3))
    else:
        group.add("head.w", conv_weight(rng, cfg.in_channels, cfg.channels(0)))
    group.add("head.b", zeros(cfg.in_channels))
    LOGGER.debug(f"Built generator {role}: {group.count()} parameters, sites {generator_sites(cfg)}")
    return group


def build_discriminator(cfg: ModelConfig, seed: SeedLike, role: str = "DX") -> ParamGroup:
    rng = np.random.default_rng(seed)
    group = ParamGroup(role)
    in_ch = cfg.in_channels
    for k in range(cfg.depth):
        group.add(f"stage{k + 1}.w", conv_weight(rng, cfg.channels(k), in_ch))
        in_ch = cfg.channels(k)
    group.add("head.w", conv_weight(rng, 1, in_ch))
    group.add("head.b", zeros(1))
    LOGGER.debug(f"Built discriminator {role}: {group.count()} parameters, sites {discriminator_sites(cfg)}")
    return group


def build_code_generator(sites: List[int], hidden: int, seed: SeedLike, role: str = "code_gen_g") -> ParamGroup:
    """
    Two dense layers mapping a one-hot domain index to every site's (gamma, beta).

    Output layout is [gamma of all sites][beta of all sites]. The gamma half of
    the last bias starts at 1 so the codes start close to plain instance norm.
    """
    if not sites:
        raise ModelConfigError("Code generator needs at least one AdaIN site")
    if hidden < 1:
        raise ModelConfigError(f"Code generator hidden width must be >= 1, got {hidden}")
    rng = np.random.default_rng(seed)
    total = sum(sites)
    group = ParamGroup(role)
    group.add("fc1.w", dense_weight(rng, 2, hidden))
    group.add("fc1.b", zeros(hidden))
    group.add("fc2.w", dense_weight(rng, hidden, 2 * total))
    bias = zeros(2 * total)
    bias[:total] = 1.0
    group.add("fc2.b", bias)
    return group


# ============================================================================
# Forward passes
# ============================================================================

def _check_code(cfg: ModelConfig, code: Optional[AdaInCode], sites: List[int]) -> None:
    if cfg.norm_mode == "adain":
        if code is None:
            raise ModelConfigError("AdaIN network needs a code")
        code.validate(sites)
    elif code is not None:
        raise ModelConfigError("Instance-norm network does not take a code")


def _site(code: Optional[AdaInCode], index: int):
    return None if code is None else code.pairs[index]


def forward_generator(
    cfg: ModelConfig,
    params: Mapping[str, Tensor],
    x: Tensor,
    code: Optional[AdaInCode] = None,
) -> Tensor:
    """Translate a NCHW batch; the output has the input's shape."""
    _check_code(cfg, code, generator_sites(cfg))
    if len(x.shape) != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError("generator", [x.shape], f"expected [N, {cfg.in_channels}, H, W]")
    factor = 2 ** cfg.depth
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError("generator", [x.shape], f"spatial extents must be divisible by {factor}")

    site = 0
    skips = []
    h = conv_norm_act(params, "enc0", x, 1, _site(code, site))
    site += 1
    for k in range(1, cfg.depth + 1):
        skips.append(h)
        h = conv_norm_act(params, f"enc{k}", h, 2, _site(code, site))
        site += 1
    for k in range(cfg.depth, 0, -1):
        h = ops.concat(ops.upsample_nearest(h), skips[k - 1])
        h = conv_norm_act(params, f"dec{k}", h, 1, _site(code, site))
        site += 1

    out = ops.conv2d(h, params["head.w"], params["head.b"])
    if cfg.final_tanh:
        out = ops.tanh(out)
    if cfg.residual_skip:
        out = ops.add(out, x)
    return out


def forward_discriminator(
    cfg: ModelConfig,
    params: Mapping[str, Tensor],
    x: Tensor,
    code: Optional[AdaInCode] = None,
) -> Tensor:
    """Patch score map [N, 1, H / 2**depth, W / 2**depth] of raw (pre-sigmoid) scores."""
    _check_code(cfg, code, discriminator_sites(cfg))
    if len(x.shape) != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError("discriminator", [x.shape], f"expected [N, {cfg.in_channels}, H, W]")
    h = x
    for k in range(cfg.depth):
        h = conv_norm_act(params, f"stage{k + 1}", h, 2, _site(code, k))
    return ops.conv2d(h, params["head.w"], params["head.b"])


def forward_code_generator(params: Mapping[str, Tensor], sites: List[int], domain: int) -> AdaInCode:
    """AdaIN code for domain index 0 or 1."""
    if domain not in (0, 1):
        raise ModelConfigError(f"Domain index must be 0 or 1, got {domain}")
    one_hot = np.zeros((1, 2), dtype=params["fc1.w"].data.dtype)
    one_hot[0, domain] = 1.0
    h = ops.leaky_relu(ops.dense(Tensor(one_hot), params["fc1.w"], params["fc1.b"]))
    out = ops.dense(h, params["fc2.w"], params["fc2.b"])

    total = sum(sites)
    pairs = []
    offset = 0
    for channels in sites:
        gamma = ops.segment(out, offset, offset + channels)
        beta = ops.segment(out, total + offset, total + offset + channels)
        pairs.append((gamma, beta))
        offset += channels
    return AdaInCode(pairs)
