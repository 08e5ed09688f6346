"""
Verification suites run by `main.py verify`.

Each suite uses fixed seeds, so a passing report is reproducible bit for
bit. Results are returned as SuiteResult and can be written as JSON.
"""
from dataclasses import asdict, dataclass, field
import json
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union
import numpy as np
from src.data.tasks import TaskSpec, build_task
from src.fed.state import FederatedConfig, OptimizerConfig, TrainSetup, make_clients
from src.fed.trainer import train_centralized, train_federated
from src.nn.models import CycleModels
from src.nn.networks import ModelConfig
from src.objectives.local import centralized_loss, local_objective_x, local_objective_y, objective_fn
from src.objectives.terms import LossWeights
from src.tensor.gradcheck import OP_CASES, finite_diff_check, op_case
from src.transport.codec import decode, encode
from src.transport.message import GradientMessage, StepKind
from src.utils.errors import CodecError
from src.utils.logger import LOGGER
from src.utils.utilities import max_relative_error, nested_max_relative_error

DECOMPOSITION_VALUE_TOL = 1e-6
DECOMPOSITION_GRAD_TOL = 1e-5
GRADCHECK_TOL = 1e-4
EQUIVALENCE_TOL = 1e-6

# Fine enough that curvature stays below the tolerance; objective checks skip
# elements whose perturbation crosses a kink
GRADCHECK_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


@dataclass
class SuiteResult:
    suite: str
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, name: str, value: float, tolerance: float, detail: str = "") -> CheckResult:
        check = CheckResult(name, bool(value <= tolerance), float(value), tolerance, detail)
        self.checks.append(check)
        if not check.passed:
            LOGGER.warning(f"[{self.suite}] {name} failed: {value:.3e} > {tolerance:.1e} {detail}")
        return check

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}


def write_report(results: List[SuiteResult], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"passed": all(r.passed for r in results), "suites": [r.to_dict() for r in results]}
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def _small_models(variant: str, seed: int, width: int = 2, depth: int = 1) -> CycleModels:
    cfg = ModelConfig(width=width, depth=depth)
    return CycleModels.create(variant, cfg, cfg, seed, code_hidden=8)


# ============================================================================
# Decomposition: centralized loss == l_X + l_Y
# ============================================================================

def decomposition_suite(seeds: int = 100, size: int = 4) -> SuiteResult:
    """
    Value and gradient of the centralized loss against the sum of the two
    local objectives, over random models, batches and loss weights.

    Runs in 64-bit so the comparison measures the identity, not roundoff.
    """
    result = SuiteResult("decomposition")
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        variant = ("standard", "switchable")[seed % 2]
        weights = LossWeights(
            lambda_cycle=float(rng.uniform(0, 10)),
            lambda_identity=float(rng.uniform(0, 5)),
            gan_mode=("least-squares", "vanilla-log")[(seed // 2) % 2],
        )
        models = _small_models(variant, seed)
        batch_x = rng.uniform(0, 1, size=(2, 1, size, size))
        batch_y = rng.uniform(0, 1, size=(2, 1, size, size))

        for convention in ("composite", "step"):
            central = centralized_loss(models, batch_x, batch_y, weights, convention, np.float64)
            local_x = local_objective_x(models, batch_x, weights, convention, np.float64)
            local_y = local_objective_y(models, batch_y, weights, convention, np.float64)
            local_sum = local_x.report.total + local_y.report.total
            value_error = abs(central.value - local_sum) / max(abs(central.value), 1.0)
            combined = {
                role: {name: grad + local_y.gradients[role][name] for name, grad in entries.items()}
                for role, entries in local_x.gradients.items()
            }
            grad_error = nested_max_relative_error(central.gradients, combined, floor=1e-8)
            label = f"seed {seed} {variant} {weights.gan_mode} {convention}"
            result.add(f"value {label}", value_error, DECOMPOSITION_VALUE_TOL)
            result.add(f"gradient {label}", grad_error, DECOMPOSITION_GRAD_TOL)
    LOGGER.info(f"Decomposition suite: {'passed' if result.passed else 'FAILED'} over {seeds} seeds")
    return result


# ============================================================================
# Finite differences
# ============================================================================

def objective_cases(model_seeds: int = 2):
    """
    (label, seed, f, params) for the local objectives of a tiny model: both variants,
    both domains and the composite, D-step and G-step losses.
    """
    weights = LossWeights()
    for seed in range(model_seeds):
        rng = np.random.default_rng(1000 + seed)
        for variant in ("standard", "switchable"):
            models = _small_models(variant, seed)
            for domain in ("X", "Y"):
                batch = rng.uniform(0, 1, size=(1, 1, 4, 4))
                for kind in ("composite", "D", "G"):
                    f, params = objective_fn(models, batch, domain, weights, kind)
                    yield f"objective {variant} {domain} {kind} seed {seed}", seed, f, params


def objective_check(f, params, seed: int) -> float:
    """Finite-difference error of one objective case, leaving out elements that straddle a kink."""
    return finite_diff_check(f, params, step=GRADCHECK_STEP, max_checks=6,
                             rng=np.random.default_rng(seed), skip_kinks=True)


def gradcheck_suite(seeds: int = 100, model_seeds: int = 2) -> SuiteResult:
    """Every registered op over random cases, then the local objectives of a tiny model."""
    result = SuiteResult("gradcheck")
    for kind in sorted(OP_CASES):
        worst = 0.0
        for seed in range(seeds):
            f, params = op_case(kind, seed)
            worst = max(worst, finite_diff_check(f, params, step=GRADCHECK_STEP))
        result.add(f"op {kind}", worst, GRADCHECK_TOL, f"{seeds} cases")

    for label, seed, f, params in objective_cases(model_seeds):
        result.add(label, objective_check(f, params, seed), GRADCHECK_TOL)
    LOGGER.info(f"Gradcheck suite: {'passed' if result.passed else 'FAILED'}")
    return result


# ============================================================================
# Federated vs centralized trajectories
# ============================================================================

def _trajectory(setup: TrainSetup, trainer: Callable) -> List[List[np.ndarray]]:
    snapshots: List[List[np.ndarray]] = []
    setup.observer = lambda k, models: snapshots.append([p.copy() for p in models.flat_params()])
    trainer(setup)
    return snapshots


def equivalence_suite(rounds: int = 50, seed: int = 0) -> SuiteResult:
    """
    Federated (one client per domain, sum aggregation, full participation)
    against the centralized trainer, per parameter after every round, for
    both optimizers and both transports.
    """
    result = SuiteResult("equivalence")
    task = build_task(TaskSpec(name="denoise", n_train=8, n_eval=2, seed=seed, image_size=8))
    models = _small_models("standard", seed, width=4, depth=2)
    clients = make_clients(task, 1, 4, seed)
    weights = LossWeights()

    for name, lr in (("sgd", 0.01), ("adam", 2e-4)):
        optimizer = OptimizerConfig(name=name, lr=lr, rounds=rounds, batch_size=4)
        central = _trajectory(TrainSetup(models, clients, weights, FederatedConfig(), optimizer), train_centralized)
        runs: Dict[str, List[List[np.ndarray]]] = {}
        for transport in ("inprocess", "tcp"):
            fed = FederatedConfig(aggregation="sum", transport=transport)
            runs[transport] = _trajectory(TrainSetup(models, clients, weights, fed, optimizer), train_federated)
            worst = max(
                max_relative_error(a, b, floor=1.0)
                for fed_params, central_params in zip(runs[transport], central)
                for a, b in zip(fed_params, central_params)
            )
            result.add(f"{name} {transport} vs centralized", worst, EQUIVALENCE_TOL, f"{rounds} rounds")
        identical = all(
            np.array_equal(a, b)
            for left, right in zip(runs["inprocess"], runs["tcp"])
            for a, b in zip(left, right)
        )
        result.add(f"{name} tcp bitwise equals inprocess", 0.0 if identical else 1.0, 0.0)
    LOGGER.info(f"Equivalence suite: {'passed' if result.passed else 'FAILED'}")
    return result


# ============================================================================
# Codec
# ============================================================================

def random_message(rng: np.random.Generator) -> GradientMessage:
    """A message with random header fields, 0-3 groups and 0-3 entries of rank 0-3 each."""
    groups = {}
    for g in range(int(rng.integers(0, 4))):
        entries = {}
        for e in range(int(rng.integers(0, 4))):
            shape = tuple(int(s) for s in rng.integers(1, 5, size=int(rng.integers(0, 4))))
            entries[f"layer{e}.w"] = np.asarray(rng.normal(size=shape), dtype=np.float32)
        groups[("G", "F", "DX", "DY")[g]] = entries
    return GradientMessage.from_gradients(
        round=int(rng.integers(0, 2 ** 32)),
        client_id=int(rng.integers(0, 2 ** 32)),
        domain=("X", "Y")[int(rng.integers(0, 2))],
        step=StepKind(int(rng.integers(0, 3))),
        gradients=groups,
    )


def codec_suite(messages: int = 1000, seed: int = 0) -> SuiteResult:
    """Round trips of random messages, then every single-bit flip of a small fixture."""
    result = SuiteResult("codec")
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(messages):
        message = random_message(rng)
        if decode(encode(message)) != message:
            mismatches += 1
    result.add("round trip mismatches", float(mismatches), 0.0, f"{messages} messages")

    fixture = GradientMessage.from_gradients(3, 7, "X", StepKind.D_STEP,
                                             {"DX": {"head.b": np.array([1.0, -1.0], dtype=np.float32)}})
    frame = encode(fixture)
    undetected = 0
    for bit in range(len(frame) * 8):
        corrupted = bytearray(frame)
        corrupted[bit // 8] ^= 1 << (bit % 8)
        try:
            decode(bytes(corrupted))
            undetected += 1
        except CodecError:
            pass
    result.add("undetected single-bit flips", float(undetected), 0.0, f"{len(frame) * 8} flips")
    LOGGER.info(f"Codec suite: {'passed' if result.passed else 'FAILED'}")
    return result


SUITES: Dict[str, Callable[[], SuiteResult]] = {
    "decomposition": decomposition_suite,
    "gradcheck": gradcheck_suite,
    "equivalence": equivalence_suite,
    "codec": codec_suite,
}


def run_suites(names: Optional[List[str]] = None) -> List[SuiteResult]:
    names = names or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"Unknown suites {unknown}, expected some of {list(SUITES)}")
    return [SUITES[name]() for name in names]
