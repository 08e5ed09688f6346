import itertools
import numpy as np
import pytest
from src.cli.suites import GRADCHECK_TOL, objective_check, objective_cases
from src.nn.models import CycleModels
from src.nn.networks import ModelConfig
from src.objectives.local import objective_fn
from src.objectives.terms import LossWeights
from src.tensor import ops
from src.tensor.gradcheck import analytic_gradients, finite_diff_check
from src.tensor.tape import Op, Tape, get_op, record, register_op, unregister_op
from src.utils.errors import NonDeterministicError


def sum_of_squares(tape, t):
    return ops.scalar_mul(ops.square_mean(t["p"]), 3.0)


def test_quadratic_is_exact():
    error = finite_diff_check(sum_of_squares, {"p": np.array([1.0, 2.0, 3.0])}, step=1e-3)
    assert error <= 1e-6


def test_analytic_gradients_of_quadratic():
    grads = analytic_gradients(sum_of_squares, {"p": np.array([1.0, 2.0, 3.0])})
    np.testing.assert_allclose(grads["p"], [2.0, 4.0, 6.0])


def test_non_positive_step_rejected():
    with pytest.raises(ValueError):
        finite_diff_check(sum_of_squares, {"p": np.array([1.0])}, step=0.0)


def test_nondeterministic_function_detected():
    counter = itertools.count()

    def drifting(tape, t):
        return ops.scalar_mul(ops.square_mean(t["p"]), 1.0 + next(counter))

    with pytest.raises(NonDeterministicError):
        finite_diff_check(drifting, {"p": np.array([1.0, 2.0])})


def test_wrong_backward_rule_is_caught():
    @register_op
    class WrongSquare(Op):
        kind = "wrong_square_for_test"

        @staticmethod
        def forward(arrays, attrs):
            (x,) = arrays
            return np.array([(x * x).sum()]), x

        @staticmethod
        def backward(grad, ctx, attrs):
            return (3 * grad[0] * ctx,)

    try:
        error = finite_diff_check(
            lambda tape, t: record("wrong_square_for_test", [t["p"]]),
            {"p": np.array([1.0, -2.0, 0.5])},
        )
    finally:
        unregister_op("wrong_square_for_test")
    assert error > 1e-2


def test_max_checks_limits_perturbations():
    calls = []

    def counted(tape, t):
        calls.append(1)
        return ops.square_mean(t["p"])

    finite_diff_check(counted, {"p": np.arange(1.0, 51.0)}, max_checks=5)
    # two determinism evaluations, one analytic pass, two evaluations per checked element
    assert len(calls) == 2 + 1 + 2 * 5


@pytest.mark.parametrize("variant", ["standard", "switchable"])
def test_discriminator_step_loss_matches_finite_differences(variant):
    cfg = ModelConfig(width=2, depth=1)
    models = CycleModels.create(variant, cfg, cfg, seed=3, code_hidden=4)
    batch = np.random.default_rng(3).uniform(0, 1, size=(1, 1, 4, 4))
    f, params = objective_fn(models, batch, "X", LossWeights(), kind="D")
    assert finite_diff_check(f, params, step=1e-5) <= 1e-4


def leaky_sum(tape, t):
    return ops.mean(ops.leaky_relu(t["p"]))


def test_kink_inside_the_step_distorts_the_difference_quotient():
    params = {"p": np.array([1e-6, 0.5])}
    assert finite_diff_check(leaky_sum, params, step=1e-5) > 0.1


def test_skip_kinks_leaves_out_straddling_elements():
    params = {"p": np.array([1e-6, 0.5, -0.7])}
    assert finite_diff_check(leaky_sum, params, step=1e-5, skip_kinks=True) <= 1e-8


def test_skip_kinks_draws_replacement_elements():
    calls = []

    def counted(tape, t):
        calls.append(1)
        return ops.abs_mean(t["p"])

    values = np.full(20, 0.5)
    values[:10] = 1e-7
    error = finite_diff_check(counted, {"p": values}, step=1e-5, max_checks=5,
                              rng=np.random.default_rng(0), skip_kinks=True)
    assert error <= 1e-8
    # every skipped element costs two evaluations and is replaced by another draw
    assert len(calls) >= 2 + 1 + 2 * 5


def test_branch_hooks_of_piecewise_ops():
    tape = Tape()
    x = tape.watch("x", np.array([-1.0, 2.0]))
    ops.abs_mean(ops.leaky_relu(x))
    kinds = {node.op.kind: node.op.branches(node.ctx) for node in tape.nodes if node.op is not None}
    np.testing.assert_array_equal(kinds["leaky_relu"], [False, True])
    np.testing.assert_array_equal(kinds["abs_mean"], [-1.0, 1.0])
    assert get_op("sigmoid").branches(None) is None


def test_switchable_y_composite_case_passes():
    cases = {label: (seed, f, params) for label, seed, f, params in objective_cases(1)}
    seed, f, params = cases["objective switchable Y composite seed 0"]
    assert objective_check(f, params, seed) <= GRADCHECK_TOL
