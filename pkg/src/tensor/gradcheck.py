"""
Finite-difference gradient oracle.

The function under test is re-evaluated on fresh tapes of the requested
precision (64-bit by default) so that roundoff of the 32-bit training path
does not hide logic errors in backward rules.
"""
from typing import Callable, Dict, Mapping, Optional, Tuple
import numpy as np
from src.tensor import ops
from src.tensor.tape import Tape, Tensor, backward
from src.utils.errors import NonDeterministicError, TapeError
from src.utils.logger import LOGGER

ScalarFn = Callable[[Tape, Dict[str, Tensor]], Tensor]
Branches = Tuple[bytes, ...]


def _branch_pattern(tape: Tape) -> Branches:
    """The piece every piecewise op on the tape took, in recording order."""
    pattern = []
    for node in tape.nodes:
        if node.op is None:
            continue
        taken = node.op.branches(node.ctx)
        if taken is not None:
            pattern.append(np.asarray(taken).tobytes())
    return tuple(pattern)


def _evaluate(f: ScalarFn, values: Mapping[str, np.ndarray], dtype) -> Tuple[float, Branches]:
    tape = Tape(dtype)
    tensors = {name: tape.watch(name, value) for name, value in values.items()}
    out = f(tape, tensors)
    if out.size != 1:
        raise TapeError(f"Checked function must return a scalar, got shape {out.shape}")
    return out.item(), _branch_pattern(tape)


def analytic_gradients(f: ScalarFn, params: Mapping[str, np.ndarray], dtype=np.float64) -> Dict[str, np.ndarray]:
    """Gradients of f at params from one backward pass in the given precision."""
    tape = Tape(dtype)
    tensors = {name: tape.watch(name, value) for name, value in params.items()}
    return backward(tape, f(tape, tensors))


def finite_diff_check(
    f: ScalarFn,
    params: Mapping[str, np.ndarray],
    step: float = 1e-3,
    dtype=np.float64,
    max_checks: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    skip_kinks: bool = False,
) -> float:
    """
    Compare backward() against central differences.

    Args:
        f: Builds a scalar loss on the given tape from the named leaf tensors
        params: Name -> value of every leaf
        step: Central-difference step (> 0)
        dtype: Precision of every evaluation
        max_checks: Per-parameter cap on the number of perturbed elements
                    (all elements when None)
        rng: Chooses the perturbed elements when max_checks is set
        skip_kinks: Leave out elements whose +-step perturbation moves any
                    leaky_relu or abs input across zero, drawing the next
                    candidate instead. The difference quotient there measures
                    an average of two slopes, not the derivative.

    Returns:
        Max over checked elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    values = {name: np.array(value, dtype=dtype) for name, value in params.items()}

    first, branches = _evaluate(f, values, dtype)
    second, _ = _evaluate(f, values, dtype)
    if first != second:
        raise NonDeterministicError(f"Function returned {first!r} then {second!r} for identical inputs")

    analytic = analytic_gradients(f, values, dtype)
    rng = rng if rng is not None else np.random.default_rng(0)

    worst = 0.0
    skipped = 0
    for name, value in values.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        budget = flat.size
        candidates = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            budget = max_checks
            candidates = rng.permutation(flat.size)
        checked = 0
        for index in candidates:
            if checked == budget:
                break
            original = flat[index]
            flat[index] = original + step
            plus, plus_branches = _evaluate(f, values, dtype)
            flat[index] = original - step
            minus, minus_branches = _evaluate(f, values, dtype)
            flat[index] = original
            if skip_kinks and (plus_branches != branches or minus_branches != branches):
                skipped += 1
                continue
            checked += 1
            numeric = (plus - minus) / (2 * step)
            error = abs(grad[index] - numeric) / max(abs(grad[index]), abs(numeric), 1e-8)
            worst = max(worst, float(error))
        if checked == 0:
            LOGGER.warning(f"finite_diff_check: every element of '{name}' sits on a kink, none checked")

    LOGGER.debug(f"finite_diff_check over {list(values)}: max relative error {worst:.3e}, {skipped} kink elements skipped")
    return worst


# ============================================================================
# Randomized cases for every registered op
# ============================================================================

Case = Tuple[ScalarFn, Dict[str, np.ndarray]]


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.1, high: float = 1.0) -> np.ndarray:
    """Values kept off the kinks of leaky_relu and abs."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, high, size=shape)


def _against_target(out: Tensor, target: np.ndarray) -> Tensor:
    """Squared distance to a random target, so every output element carries gradient."""
    return ops.square_mean(ops.sub(out, Tensor(target)))


def _unary_case(op: Callable[[Tensor], Tensor], x: np.ndarray, rng: np.random.Generator) -> Case:
    target = rng.normal(size=op(Tensor(x)).shape)
    return (lambda tape, t: _against_target(op(t["x"]), target)), {"x": x}


def _dense_case(rng: np.random.Generator) -> Case:
    n, i, o = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
    params = {"x": rng.normal(size=(n, i)), "w": rng.normal(size=(i, o)), "b": rng.normal(size=o)}
    target = rng.normal(size=(n, o))
    return (lambda tape, t: _against_target(ops.dense(t["x"], t["w"], t["b"]), target)), params


def _conv_case(rng: np.random.Generator) -> Case:
    stride = int(rng.integers(1, 3))
    n, c, o = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    size = int(rng.integers(3, 6)) * stride
    params = {
        "x": rng.normal(size=(n, c, size, size)),
        "w": rng.normal(size=(o, c, 3, 3)),
        "b": rng.normal(size=o),
    }
    target = rng.normal(size=(n, o, size // stride, size // stride))
    return (lambda tape, t: _against_target(ops.conv2d(t["x"], t["w"], t["b"], stride), target)), params


def _adain_case(rng: np.random.Generator) -> Case:
    c = int(rng.integers(1, 4))
    params = {
        "x": rng.normal(size=(2, c, 3, 3)),
        "gamma": rng.normal(size=c),
        "beta": rng.normal(size=c),
    }
    target = rng.normal(size=(2, c, 3, 3))
    return (lambda tape, t: _against_target(ops.adain(t["x"], t["gamma"], t["beta"]), target)), params


def _concat_case(rng: np.random.Generator) -> Case:
    params = {"a": rng.normal(size=(2, 2, 3, 3)), "b": rng.normal(size=(2, int(rng.integers(1, 4)), 3, 3))}
    target = rng.normal(size=(2, 2 + params["b"].shape[1], 3, 3))
    return (lambda tape, t: _against_target(ops.concat(t["a"], t["b"]), target)), params


def _segment_case(rng: np.random.Generator) -> Case:
    width = int(rng.integers(2, 8))
    start = int(rng.integers(0, width - 1))
    stop = int(rng.integers(start + 1, width + 1))
    return _unary_case(lambda x: ops.segment(x, start, stop), rng.normal(size=(1, width)), rng)


def _binary_case(op: Callable[[Tensor, Tensor], Tensor], rng: np.random.Generator) -> Case:
    shape = (2, 3)
    params = {"a": rng.normal(size=shape), "b": rng.normal(size=shape)}
    target = rng.normal(size=shape)
    return (lambda tape, t: _against_target(op(t["a"], t["b"]), target)), params


def _scalar_mul_case(rng: np.random.Generator) -> Case:
    scalar = float(rng.uniform(-3, 3))
    return _unary_case(lambda x: ops.scalar_mul(x, scalar), rng.normal(size=(2, 3)), rng)


OP_CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "dense": _dense_case,
    "conv2d": _conv_case,
    "leaky_relu": lambda rng: _unary_case(ops.leaky_relu, _away_from_zero(rng, (2, 5)), rng),
    "sigmoid": lambda rng: _unary_case(ops.sigmoid, rng.uniform(-3, 3, size=(2, 5)), rng),
    "log_sigmoid": lambda rng: _unary_case(ops.log_sigmoid, rng.uniform(-3, 3, size=(2, 5)), rng),
    "tanh": lambda rng: _unary_case(ops.tanh, rng.uniform(-2, 2, size=(2, 5)), rng),
    "instance_norm": lambda rng: _unary_case(ops.instance_norm, rng.normal(size=(2, 2, 3, 3)), rng),
    "adain": _adain_case,
    "upsample_nearest": lambda rng: _unary_case(ops.upsample_nearest, rng.normal(size=(1, 2, 3, 3)), rng),
    "concat": _concat_case,
    "segment": _segment_case,
    "add": lambda rng: _binary_case(ops.add, rng),
    "sub": lambda rng: _binary_case(ops.sub, rng),
    "scalar_mul": _scalar_mul_case,
    "mean": lambda rng: _unary_case(ops.mean, rng.normal(size=(2, 3, 2)), rng),
    "abs_mean": lambda rng: _unary_case(ops.abs_mean, _away_from_zero(rng, (2, 3, 2)), rng),
    "square_mean": lambda rng: _unary_case(ops.square_mean, rng.normal(size=(2, 3, 2)), rng),
}


def op_case(kind: str, seed: int) -> Case:
    """A random (function, leaves) case exercising the op named `kind`."""
    if kind not in OP_CASES:
        raise KeyError(f"No gradient case for op '{kind}'")
    return OP_CASES[kind](np.random.default_rng([seed, sorted(OP_CASES).index(kind)]))
