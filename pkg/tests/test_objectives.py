import math
import numpy as np
import pytest
from src.nn.models import BoundModels, CycleModels
from src.nn.networks import ModelConfig
from src.nn.params import DISCRIMINATOR_ROLES, GENERATOR_ROLES
from src.objectives.local import (
    TERM_NAMES,
    centralized_loss,
    composite_terms,
    d_step_loss,
    gan_step_losses,
    local_objective,
    local_objective_x,
    local_objective_y,
    objective_fn,
)
from src.objectives.terms import LossWeights, adversarial_term, cycle_term, identity_term
from src.tensor import ops
from src.tensor.gradcheck import finite_diff_check
from src.tensor.tape import Tensor
from src.utils.errors import ObjectiveError
from src.utils.utilities import nested_max_relative_error


def full(value, shape=(2, 1, 2, 2)):
    return Tensor(np.full(shape, value, dtype=np.float32))


def fixed_scores(value):
    return lambda t: full(value)


def identity(t):
    return t


# ============================================================================
# Terms
# ============================================================================

def test_least_squares_at_optimum():
    assert adversarial_term(full(1.0), "real").item() == 0.0
    assert adversarial_term(full(0.0), "fake").item() == 0.0


@pytest.mark.parametrize("target", ["real", "fake"])
def test_least_squares_at_half(target):
    assert adversarial_term(full(0.5), target).item() == pytest.approx(0.25)


def test_vanilla_log_at_zero_logit():
    assert adversarial_term(full(0.0), "real", "vanilla-log").item() == pytest.approx(math.log(2), rel=1e-6)
    assert adversarial_term(full(0.0), "fake", "vanilla-log").item() == pytest.approx(math.log(2), rel=1e-6)


def test_unknown_target_rejected():
    with pytest.raises(ValueError):
        adversarial_term(full(0.0), "neither")


def test_cycle_term_values(rng):
    x = rng.uniform(0, 1, size=(2, 1, 4, 4))
    assert cycle_term(Tensor(x), Tensor(x)).item() == 0.0
    assert cycle_term(Tensor(x + 0.5), Tensor(x)).item() == pytest.approx(0.5)
    y = rng.uniform(0, 1, size=(2, 1, 4, 4))
    assert cycle_term(Tensor(y), Tensor(x)).item() == pytest.approx(np.abs(y - x).sum() / x.size, abs=1e-6)
    assert identity_term(Tensor(y), Tensor(x)).item() == pytest.approx(np.abs(y - x).mean(), abs=1e-6)


# ============================================================================
# Objectives on stand-in networks
# ============================================================================

def test_perfect_discriminators_give_zero_loss():
    batch = full(0.3)

    def score(t):
        return full(1.0) if t is batch else full(0.0)

    bound = BoundModels(to_x=lambda t: ops.scalar_mul(t, 2.0), to_y=lambda t: ops.scalar_mul(t, 2.0),
                        score_x=score, score_y=score)
    terms = composite_terms(bound, batch, "X", LossWeights(lambda_cycle=0, lambda_identity=0))
    assert sum(terms[name].item() for name in TERM_NAMES) == 0.0


def test_identity_generators_have_zero_cycle_and_identity_terms():
    bound = BoundModels(identity, identity, fixed_scores(0.5), fixed_scores(0.5))
    terms = composite_terms(bound, full(0.7), "Y", LossWeights())
    assert terms["cycle"].item() == 0.0
    assert terms["identity"].item() == 0.0


def test_d_step_at_half_scores_is_a_quarter():
    bound = BoundModels(identity, identity, fixed_scores(0.5), fixed_scores(0.5))
    loss, terms = d_step_loss(bound, full(0.2), "X", LossWeights())
    assert loss.item() == pytest.approx(0.25)
    assert terms["adv_real"].item() == pytest.approx(0.25)


def test_d_step_at_optimum_is_zero():
    batch = full(0.2)

    def score(t):
        return full(1.0) if t is batch else full(0.0)

    loss, _ = d_step_loss(BoundModels(identity, identity, score, score), batch, "X", LossWeights())
    assert loss.item() == 0.0


# ============================================================================
# Decomposition
# ============================================================================

@pytest.mark.parametrize("variant", ["standard", "switchable"])
@pytest.mark.parametrize("convention", ["composite", "step"])
def test_centralized_value_is_sum_of_local_objectives(request, variant, convention, batches, weights):
    models = request.getfixturevalue(f"{variant}_models")
    central = centralized_loss(models, batches["X"], batches["Y"], weights, convention)
    local_x = local_objective_x(models, batches["X"], weights, convention)
    local_y = local_objective_y(models, batches["Y"], weights, convention)
    local_sum = local_x.report.total + local_y.report.total
    assert abs(central.value - local_sum) / max(abs(central.value), 1.0) <= 1e-6


@pytest.mark.parametrize("variant", ["standard", "switchable"])
@pytest.mark.parametrize("convention", ["composite", "step"])
def test_centralized_gradient_is_sum_of_local_gradients(request, variant, convention, batches, weights):
    models = request.getfixturevalue(f"{variant}_models")
    central = centralized_loss(models, batches["X"], batches["Y"], weights, convention, np.float64)
    local_x = local_objective_x(models, batches["X"], weights, convention, np.float64)
    local_y = local_objective_y(models, batches["Y"], weights, convention, np.float64)
    summed = {
        role: {name: grad + local_y.gradients[role][name] for name, grad in entries.items()}
        for role, entries in local_x.gradients.items()
    }
    assert nested_max_relative_error(central.gradients, summed, floor=1e-8) <= 1e-5


def test_vanilla_log_decomposes_too(standard_models, batches):
    weights = LossWeights(gan_mode="vanilla-log", lambda_cycle=3.0, lambda_identity=0.5)
    central = centralized_loss(standard_models, batches["X"], batches["Y"], weights, "composite")
    local_sum = sum(local_objective(standard_models, batches[d], d, weights, "composite").report.total
                    for d in ("X", "Y"))
    assert central.value == pytest.approx(local_sum, rel=1e-6, abs=1e-6)


def test_report_breaks_down_the_total(standard_models, batches, weights):
    report = local_objective_x(standard_models, batches["X"], weights).report
    assert set(report.terms) == set(TERM_NAMES)
    assert report.d_step is not None and report.g_step is not None
    assert report.total == pytest.approx(sum(report.terms.values()))


# ============================================================================
# Step losses
# ============================================================================

@pytest.mark.parametrize("variant", ["standard", "switchable"])
def test_step_gradients_never_cross_sides(request, variant, batches, weights):
    models = request.getfixturevalue(f"{variant}_models")
    steps = gan_step_losses(models, batches["Y"], "Y", weights)
    assert list(steps.d_gradients) == models.roles
    assert list(steps.g_gradients) == models.roles
    for role in models.roles:
        if role in GENERATOR_ROLES:
            assert all(not g.any() for g in steps.d_gradients[role].values())
            assert any(g.any() for g in steps.g_gradients[role].values())
        if role in DISCRIMINATOR_ROLES:
            assert all(not g.any() for g in steps.g_gradients[role].values())
            assert any(g.any() for g in steps.d_gradients[role].values())


def test_step_convention_gradients_match_step_losses(standard_models, batches, weights):
    steps = gan_step_losses(standard_models, batches["X"], "X", weights)
    local = local_objective_x(standard_models, batches["X"], weights, "step")
    for role in standard_models.roles:
        source = steps.d_gradients if role in DISCRIMINATOR_ROLES else steps.g_gradients
        for name, grad in local.gradients[role].items():
            np.testing.assert_array_equal(grad, source[role][name])


def test_local_composite_gradient_matches_finite_differences():
    cfg = ModelConfig(width=2, depth=1)
    models = CycleModels.create("standard", cfg, cfg, seed=4)
    batch = np.random.default_rng(4).uniform(0, 1, size=(1, 1, 4, 4))
    f, params = objective_fn(models, batch, "Y", LossWeights(), kind="composite")
    assert finite_diff_check(f, params, step=1e-5) <= 1e-4


# ============================================================================
# Errors
# ============================================================================

def test_empty_batch_rejected(standard_models, weights):
    with pytest.raises(ObjectiveError):
        local_objective_x(standard_models, np.zeros((0, 1, 8, 8), dtype=np.float32), weights)


def test_unknown_domain_rejected(standard_models, batches, weights):
    with pytest.raises(ObjectiveError):
        local_objective(standard_models, batches["X"], "Z", weights)


def test_unknown_convention_rejected(standard_models, batches, weights):
    with pytest.raises(ObjectiveError):
        local_objective(standard_models, batches["X"], "X", weights, convention="other")
