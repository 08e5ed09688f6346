"""Loss terms: adversarial (least-squares or log), cycle-consistency and identity."""
from typing import Literal
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from src.tensor import ops
from src.tensor.tape import Tensor

GanMode = Literal["least-squares", "vanilla-log"]
Target = Literal["real", "fake"]


class LossWeights(BaseModel):
    """Cycle and identity weights plus the adversarial loss form."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_cycle: float = Field(default=10.0, ge=0)
    lambda_identity: float = Field(default=5.0, ge=0)
    gan_mode: GanMode = "least-squares"


def adversarial_term(scores: Tensor, target: Target, mode: GanMode = "least-squares") -> Tensor:
    """
    Patch-averaged adversarial term.

    least-squares: mean (s - 1)^2 for real, mean s^2 for fake
    vanilla-log:   -mean log sigmoid(s) for real, -mean log sigmoid(-s) for fake
    """
    if target not in ("real", "fake"):
        raise ValueError(f"Unknown target '{target}'")
    if mode == "least-squares":
        if target == "real":
            return ops.square_mean(ops.sub(scores, Tensor(np.ones(scores.shape, dtype=scores.data.dtype))))
        return ops.square_mean(scores)
    if mode == "vanilla-log":
        logits = scores if target == "real" else ops.scalar_mul(scores, -1.0)
        return ops.scalar_mul(ops.mean(ops.log_sigmoid(logits)), -1.0)
    raise ValueError(f"Unknown gan mode '{mode}'")


def cycle_term(recon: Tensor, original: Tensor) -> Tensor:
    """L1 between a round-trip translation and its source."""
    return ops.abs_mean(ops.sub(recon, original))


def identity_term(output: Tensor, source: Tensor) -> Tensor:
    """L1 between a generator's output on an in-domain input and that input."""
    return ops.abs_mean(ops.sub(output, source))
