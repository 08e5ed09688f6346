"""Configuration, client descriptions, server state and training history."""
from dataclasses import dataclass, field
import hashlib
from typing import TYPE_CHECKING, Callable, List, Literal, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from src.data.tasks import TaskData
from src.nn.models import CycleModels
from src.objectives.local import LocalLossReport
from src.objectives.terms import LossWeights
from src.utils.errors import DatasetError, SelectionError
from src.utils.utilities import sha256_of_arrays

if TYPE_CHECKING:
    from src.fed.optimizer import Optimizer

Aggregation = Literal["sum", "mean"]
StepMode = Literal["split", "combined"]


class FederatedConfig(BaseModel):
    """How clients are formed, selected, connected and aggregated."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    clients_per_domain: int = Field(default=1, ge=1)
    clients_per_round: Optional[int] = Field(default=None, ge=1)
    aggregation: Aggregation = "mean"
    transport: Literal["inprocess", "tcp"] = "inprocess"
    host: Optional[str] = None
    port: int = Field(default=0, ge=0, le=65535)
    step_mode: StepMode = "split"
    convention: Literal["step", "composite"] = "step"
    workers: Optional[int] = Field(default=None, ge=1)
    flip: bool = False


class OptimizerConfig(BaseModel):
    """Optimizer, schedule and batch size shared by both trainers."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: Literal["adam", "sgd"] = "adam"
    lr: float = Field(default=2e-4, ge=0)
    beta1: float = Field(default=0.5, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    rounds: int = Field(default=400, ge=0)
    batch_size: int = Field(default=4, ge=1)


@dataclass(frozen=True)
class ClientSpec:
    """One data holder: a fixed domain and its own samples."""
    client_id: int
    domain: str
    data: np.ndarray
    batch_size: int
    seed: int
    flip: bool = False

    def __post_init__(self):
        if self.domain not in ("X", "Y"):
            raise DatasetError(f"Client {self.client_id}: unknown domain '{self.domain}'")
        if self.data.ndim != 4 or self.data.shape[0] == 0:
            raise DatasetError(f"Client {self.client_id}: empty or malformed dataset {self.data.shape}")
        if self.batch_size < 1:
            raise DatasetError(f"Client {self.client_id}: batch size must be >= 1")


def make_clients(task: TaskData, clients_per_domain: int, batch_size: int, seed: int, flip: bool = False) -> List[ClientSpec]:
    """
    Shard each domain into contiguous, near-equal partitions.

    Domain X clients get ids 0..c-1, domain Y clients c..2c-1.
    """
    clients = []
    for offset, domain in enumerate(("X", "Y")):
        samples = task.domain(domain).samples
        if clients_per_domain > samples.shape[0]:
            raise SelectionError(
                f"{clients_per_domain} clients per domain but domain {domain} has {samples.shape[0]} samples"
            )
        for index, shard in enumerate(np.array_split(samples, clients_per_domain)):
            clients.append(ClientSpec(
                client_id=offset * clients_per_domain + index,
                domain=domain,
                data=shard,
                batch_size=batch_size,
                seed=seed,
                flip=flip,
            ))
    return clients


def check_clients(clients: List[ClientSpec]) -> None:
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise SelectionError(f"Duplicate client ids: {ids}")
    for domain in ("X", "Y"):
        if not any(c.domain == domain for c in clients):
            raise SelectionError(f"No client holds domain {domain}")


@dataclass
class RoundRecord:
    round: int
    lr: float
    client_ids: List[int]
    losses: List[Tuple[int, LocalLossReport]]
    checksum: str

    def mean_d_step(self) -> float:
        values = [report.d_step for _, report in self.losses if report.d_step is not None]
        return float(np.mean(values)) if values else float("nan")


@dataclass
class TrainHistory:
    """One record per completed round."""
    records: List[RoundRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: RoundRecord) -> None:
        self.records.append(record)

    def checksum(self) -> str:
        """Digest of every round's parameter checksum and learning rate."""
        digest = hashlib.sha256()
        for record in self.records:
            digest.update(f"{record.round}:{record.lr!r}:{record.checksum};".encode("ascii"))
        return digest.hexdigest()

    def d_step_series(self) -> List[float]:
        return [record.mean_d_step() for record in self.records]


@dataclass
class ServerState:
    """Everything the server owns; it never holds a data batch."""
    models: CycleModels
    optimizer: "Optimizer"
    total_rounds: int
    base_lr: float
    aggregation: Aggregation = "mean"
    selection_seed: int = 0
    round: int = 0

    def params_checksum(self) -> str:
        return sha256_of_arrays(self.models.flat_params())


@dataclass
class TrainSetup:
    """Inputs shared by the federated and centralized trainers."""
    models: CycleModels
    clients: List[ClientSpec]
    weights: LossWeights
    federated: FederatedConfig
    optimizer: OptimizerConfig
    selection_seed: int = 0
    observer: Optional[Callable[[int, CycleModels], None]] = None

