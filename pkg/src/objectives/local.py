"""
Domain-local objectives and the centralized loss they decompose.

For a batch x from domain X the local objective is

    l_X = adv(DX(x), real) + adv(DY(F(x)), fake) + lambda * |G(F(x)) - x| + lambda_id * |G(x) - x|

and l_Y is its mirror. The centralized CycleGAN loss on (x, y) is l_X + l_Y.

Two gradient conventions are available:
- "step": discriminator roles get the gradient of the D-step loss
  1/2 [adv(D(real), real) + adv(D(fake), fake)] with generator outputs held
  constant; generator roles get the gradient of the G-step loss
  adv(D(fake), real) + cycle + identity with discriminators held constant
- "composite": every role gets the gradient of l_X (or l_Y) itself

The loss report always holds the four composite terms.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Literal, Mapping, Optional, Tuple
import numpy as np
from src.nn.models import BoundModels, CycleModels, Network
from src.nn.params import DISCRIMINATOR_ROLES, GENERATOR_ROLES, GradientMap
from src.objectives.terms import LossWeights, adversarial_term, cycle_term, identity_term
from src.tensor import ops
from src.tensor.tape import Tape, Tensor, backward, detach
from src.utils.errors import ObjectiveError

Domain = Literal["X", "Y"]
Convention = Literal["step", "composite"]

DOMAINS: Tuple[str, ...] = ("X", "Y")
TERM_NAMES: Tuple[str, ...] = ("adv_real", "adv_fake", "cycle", "identity")


@dataclass(frozen=True)
class LocalLossReport:
    """Value of one domain's local objective and its breakdown."""
    domain: str
    terms: Dict[str, float]
    d_step: Optional[float] = None
    g_step: Optional[float] = None

    @property
    def total(self) -> float:
        return sum(self.terms[name] for name in TERM_NAMES)


@dataclass
class LocalObjective:
    report: LocalLossReport
    gradients: GradientMap


@dataclass
class CentralizedObjective:
    value: float
    reports: Dict[str, LocalLossReport]
    gradients: GradientMap


@dataclass
class StepLosses:
    """
    Alternating losses for one domain's batch.

    Each gradient map covers every role; the roles the step holds constant
    are exactly zero.
    """
    d_step: float
    g_step: float
    d_gradients: GradientMap = field(default_factory=dict)
    g_gradients: GradientMap = field(default_factory=dict)


@dataclass
class _DomainNetworks:
    score_own: Network
    score_other: Network
    translate: Network
    back: Network


def _networks(bound: BoundModels, domain: str) -> _DomainNetworks:
    if domain == "X":
        return _DomainNetworks(bound.score_x, bound.score_y, bound.to_y, bound.to_x)
    if domain == "Y":
        return _DomainNetworks(bound.score_y, bound.score_x, bound.to_x, bound.to_y)
    raise ObjectiveError(f"Unknown domain '{domain}'")


def _batch_tensor(batch, tape: Optional[Tape]) -> Tensor:
    if isinstance(batch, Tensor):
        data = batch.data
    else:
        data = np.asarray(batch)
    if data.ndim != 4 or data.shape[0] == 0:
        raise ObjectiveError(f"Batch must be a non-empty [N, C, H, W] array, got shape {data.shape}")
    return tape.constant(data) if tape is not None else Tensor(data)


# ============================================================================
# Term builders (on bound networks)
# ============================================================================

def composite_terms(bound: BoundModels, batch: Tensor, domain: str, weights: LossWeights) -> Dict[str, Tensor]:
    """The four weighted terms of the domain's local objective."""
    nets = _networks(bound, domain)
    fake = nets.translate(batch)
    return {
        "adv_real": adversarial_term(nets.score_own(batch), "real", weights.gan_mode),
        "adv_fake": adversarial_term(nets.score_other(fake), "fake", weights.gan_mode),
        "cycle": ops.scalar_mul(cycle_term(nets.back(fake), batch), weights.lambda_cycle),
        "identity": ops.scalar_mul(identity_term(nets.back(batch), batch), weights.lambda_identity),
    }


def d_step_loss(bound: BoundModels, batch: Tensor, domain: str, weights: LossWeights) -> Tuple[Tensor, Dict[str, Tensor]]:
    """1/2 [adv(D(real), real) + adv(D(fake), fake)] with the fake held constant."""
    nets = _networks(bound, domain)
    fake = detach(nets.translate(batch))
    terms = {
        "adv_real": adversarial_term(nets.score_own(batch), "real", weights.gan_mode),
        "adv_fake": adversarial_term(nets.score_other(fake), "fake", weights.gan_mode),
    }
    return ops.scalar_mul(ops.add(terms["adv_real"], terms["adv_fake"]), 0.5), terms


def g_step_loss(bound: BoundModels, batch: Tensor, domain: str, weights: LossWeights) -> Tuple[Tensor, Dict[str, Tensor]]:
    """adv(D(fake), real) + weighted cycle + weighted identity."""
    nets = _networks(bound, domain)
    fake = nets.translate(batch)
    terms = {
        "cycle": ops.scalar_mul(cycle_term(nets.back(fake), batch), weights.lambda_cycle),
        "identity": ops.scalar_mul(identity_term(nets.back(batch), batch), weights.lambda_identity),
    }
    fooling = adversarial_term(nets.score_other(fake), "real", weights.gan_mode)
    return ops.sum_all([fooling, terms["cycle"], terms["identity"]]), terms


# ============================================================================
# Passes
# ============================================================================

def _side_roles(models: CycleModels, side: str) -> Tuple[str, ...]:
    if side == "D":
        return tuple(role for role in models.roles if role in DISCRIMINATOR_ROLES)
    if side == "G":
        return tuple(role for role in models.roles if role in GENERATOR_ROLES)
    raise ObjectiveError(f"Unknown step side '{side}'")


def _step_pass(
    models: CycleModels,
    batches: Mapping[str, object],
    weights: LossWeights,
    side: str,
    dtype=np.float32,
) -> Tuple[GradientMap, Dict[str, Dict[str, float]]]:
    """
    One tape over every given domain batch for one side of the minimax.

    Returns:
        (gradients of the summed step losses for the side's roles,
         {domain: {term name: value, "step": step loss value}})
    """
    roles = _side_roles(models, side)
    tape = Tape(dtype)
    bound = models.bind(tape, trainable=roles)
    loss_fn = d_step_loss if side == "D" else g_step_loss

    losses = []
    values: Dict[str, Dict[str, float]] = {}
    for domain in DOMAINS:
        if domain not in batches:
            continue
        loss, terms = loss_fn(bound, _batch_tensor(batches[domain], tape), domain, weights)
        losses.append(loss)
        values[domain] = {name: term.item() for name, term in terms.items()}
        values[domain]["step"] = loss.item()
    if not losses:
        raise ObjectiveError("No batch given")

    flat = backward(tape, ops.sum_all(losses))
    return models.nest_gradients(flat, roles), values


def _composite_pass(
    models: CycleModels,
    batches: Mapping[str, object],
    weights: LossWeights,
    track: bool,
    dtype=np.float32,
) -> Tuple[float, Optional[GradientMap], Dict[str, Dict[str, float]]]:
    """Sum of the local objectives of every given domain on one tape."""
    tape = Tape(dtype)
    bound = models.bind(tape, trainable=None if track else ())

    totals = []
    values: Dict[str, Dict[str, float]] = {}
    for domain in DOMAINS:
        if domain not in batches:
            continue
        terms = composite_terms(bound, _batch_tensor(batches[domain], tape), domain, weights)
        totals.extend(terms[name] for name in TERM_NAMES)
        values[domain] = {name: terms[name].item() for name in TERM_NAMES}
    if not totals:
        raise ObjectiveError("No batch given")

    total = ops.sum_all(totals)
    gradients = models.nest_gradients(backward(tape, total)) if track else None
    return total.item(), gradients, values


def _order(models: CycleModels, gradients: GradientMap) -> GradientMap:
    return {role: gradients[role] for role in models.roles if role in gradients}


def reports_from_steps(d_values, g_values) -> Dict[str, LocalLossReport]:
    reports = {}
    for domain in d_values:
        terms = {
            "adv_real": d_values[domain]["adv_real"],
            "adv_fake": d_values[domain]["adv_fake"],
            "cycle": g_values[domain]["cycle"],
            "identity": g_values[domain]["identity"],
        }
        reports[domain] = LocalLossReport(domain, terms, d_values[domain]["step"], g_values[domain]["step"])
    return reports


# ============================================================================
# Public objectives
# ============================================================================

def local_objective(
    models: CycleModels,
    batch,
    domain: str,
    weights: LossWeights,
    convention: Convention = "step",
    dtype=np.float32,
) -> LocalObjective:
    """
    Loss report and gradients of one domain's local objective.

    Only this domain's batch is ever touched.
    """
    if domain not in DOMAINS:
        raise ObjectiveError(f"Unknown domain '{domain}'")
    batches = {domain: batch}
    if convention == "composite":
        _, gradients, values = _composite_pass(models, batches, weights, track=True, dtype=dtype)
        report = LocalLossReport(domain, values[domain])
        return LocalObjective(report, gradients)
    if convention == "step":
        d_grads, d_values = _step_pass(models, batches, weights, "D", dtype)
        g_grads, g_values = _step_pass(models, batches, weights, "G", dtype)
        report = reports_from_steps(d_values, g_values)[domain]
        return LocalObjective(report, _order(models, {**g_grads, **d_grads}))
    raise ObjectiveError(f"Unknown gradient convention '{convention}'")


def local_objective_x(models: CycleModels, batch_x, weights: LossWeights,
                      convention: Convention = "step", dtype=np.float32) -> LocalObjective:
    return local_objective(models, batch_x, "X", weights, convention, dtype)


def local_objective_y(models: CycleModels, batch_y, weights: LossWeights,
                      convention: Convention = "step", dtype=np.float32) -> LocalObjective:
    return local_objective(models, batch_y, "Y", weights, convention, dtype)


def centralized_loss(
    models: CycleModels,
    batch_x,
    batch_y,
    weights: LossWeights,
    convention: Convention = "step",
    dtype=np.float32,
) -> CentralizedObjective:
    """
    The full CycleGAN loss on both batches, evaluated on a single tape.

    Gradients follow `convention`; the step convention runs one tape per side
    over both batches.
    """
    batches = {"X": batch_x, "Y": batch_y}
    if convention == "composite":
        value, gradients, values = _composite_pass(models, batches, weights, track=True, dtype=dtype)
        reports = {domain: LocalLossReport(domain, values[domain]) for domain in DOMAINS}
        return CentralizedObjective(value, reports, gradients)
    if convention == "step":
        value, _, _ = _composite_pass(models, batches, weights, track=False, dtype=dtype)
        d_grads, d_values = _step_pass(models, batches, weights, "D", dtype)
        g_grads, g_values = _step_pass(models, batches, weights, "G", dtype)
        reports = reports_from_steps(d_values, g_values)
        return CentralizedObjective(value, reports, _order(models, {**g_grads, **d_grads}))
    raise ObjectiveError(f"Unknown gradient convention '{convention}'")


def gan_step_losses(
    models: CycleModels,
    batch,
    domain: str,
    weights: LossWeights,
    dtype=np.float32,
) -> StepLosses:
    """
    The D-step and G-step losses for one domain's batch, with gradients.

    Generator roles are constants in the D-step and discriminator roles are
    constants in the G-step, so their entries are zero.
    """
    batches = {domain: batch}
    d_grads, d_values = _step_pass(models, batches, weights, "D", dtype)
    g_grads, g_values = _step_pass(models, batches, weights, "G", dtype)

    def full(partial: GradientMap) -> GradientMap:
        return {
            role: partial.get(role, {name: np.zeros_like(value) for name, value in group.entries.items()})
            for role, group in models.groups.items()
        }

    return StepLosses(
        d_step=d_values[domain]["step"],
        g_step=g_values[domain]["step"],
        d_gradients=full(d_grads),
        g_gradients=full(g_grads),
    )


def objective_fn(
    models: CycleModels,
    batch,
    domain: str,
    weights: LossWeights,
    kind: Literal["composite", "D", "G"] = "composite",
) -> Tuple[Callable[[Tape, Dict[str, Tensor]], Tensor], Dict[str, np.ndarray]]:
    """
    A scalar loss over named "role/name" leaves, in the form finite_diff_check takes.

    composite differentiates l_X (or l_Y) in every role; D and G differentiate
    the step loss in that side's roles with the other side held constant.

    Returns:
        (f(tape, leaves) -> scalar loss, {"role/name": value} for the differentiated roles)
    """
    if domain not in DOMAINS:
        raise ObjectiveError(f"Unknown domain '{domain}'")
    roles = models.roles if kind == "composite" else _side_roles(models, kind)
    params = {f"{role}/{name}": value for role in roles for name, value in models.groups[role].entries.items()}

    def f(tape: Tape, leaves: Dict[str, Tensor]) -> Tensor:
        tensors = {
            role: {
                name: leaves[f"{role}/{name}"] if f"{role}/{name}" in leaves else tape.constant(value)
                for name, value in group.entries.items()
            }
            for role, group in models.groups.items()
        }
        bound = models.bind_tensors(tensors)
        x = _batch_tensor(batch, tape)
        if kind == "composite":
            terms = composite_terms(bound, x, domain, weights)
            return ops.sum_all([terms[name] for name in TERM_NAMES])
        loss, _ = (d_step_loss if kind == "D" else g_step_loss)(bound, x, domain, weights)
        return loss

    return f, params
