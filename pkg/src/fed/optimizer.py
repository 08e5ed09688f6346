"""Server-side optimizers: plain SGD and Adam with per-parameter state."""
from typing import Dict, Mapping, Tuple
import numpy as np
from src.nn.params import GradientMap, ParamGroup
from src.utils.errors import NumericAbortError, ShapeError
from src.utils.logger import LOGGER


class Optimizer:
    """Applies aggregated gradients to parameter groups in place."""

    def __init__(self):
        self.step_count = 0

    def check(self, groups: Mapping[str, ParamGroup], gradients: GradientMap) -> None:
        """Every gradient must be finite and congruent with its parameter; checked before any update."""
        for role, entries in gradients.items():
            if role not in groups:
                raise ShapeError("optimizer_step", [], f"no parameter group '{role}'")
            for name, grad in entries.items():
                param = groups[role].entries.get(name)
                if param is None or param.shape != grad.shape:
                    raise ShapeError("optimizer_step", [None if param is None else param.shape, grad.shape],
                                     f"gradient {role}/{name} does not match its parameter")
                if not np.isfinite(grad).all():
                    LOGGER.error(f"Non-finite gradient for {role}/{name}, aborting")
                    raise NumericAbortError(f"Non-finite gradient for parameter {role}/{name}", parameter=f"{role}/{name}")

    def step(self, groups: Mapping[str, ParamGroup], gradients: GradientMap, lr: float) -> None:
        self.check(groups, gradients)
        for role, entries in gradients.items():
            for name, grad in entries.items():
                self._update(role, name, groups[role].entries[name], np.asarray(grad, dtype=np.float32), lr)
        self.step_count += 1

    def _update(self, role: str, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """p <- p - lr * g"""

    def _update(self, role, name, param, grad, lr):
        param -= np.float32(lr) * grad


class Adam(Optimizer):
    """
    Adam with bias correction, moments kept per (role, name) in float32.

    Defaults beta1 = 0.5, beta2 = 0.999, eps = 1e-8.
    """

    def __init__(self, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__()
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.first: Dict[Tuple[str, str], np.ndarray] = {}
        self.second: Dict[Tuple[str, str], np.ndarray] = {}
        self.steps: Dict[Tuple[str, str], int] = {}

    def _update(self, role, name, param, grad, lr):
        key = (role, name)
        if key not in self.first:
            self.first[key] = np.zeros_like(param)
            self.second[key] = np.zeros_like(param)
            self.steps[key] = 0
        self.steps[key] += 1
        t = self.steps[key]
        m = self.first[key]
        v = self.second[key]
        m *= np.float32(self.beta1)
        m += np.float32(1 - self.beta1) * grad
        v *= np.float32(self.beta2)
        v += np.float32(1 - self.beta2) * grad * grad
        m_hat = m / np.float32(1 - self.beta1 ** t)
        v_hat = v / np.float32(1 - self.beta2 ** t)
        param -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(self.eps))


def make_optimizer(name: str, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> Optimizer:
    if name == "sgd":
        return SGD()
    if name == "adam":
        return Adam(beta1, beta2, eps)
    raise ValueError(f"Unknown optimizer '{name}'")
