"""
Experiment configuration: TOML files validated by pydantic section models.

    [task] [model] [loss] [federated] [optimizer] [seeds] [output]

Unknown sections or keys are errors. FEDCYCLE_OUTPUT_DIR overrides
[output].directory.
"""
import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Union
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from src.data.tasks import TaskSpec
from src.fed.state import FederatedConfig, OptimizerConfig
from src.nn.networks import ModelConfig
from src.objectives.terms import LossWeights
from src.utils.errors import ConfigError
from src.utils.logger import LOGGER
from src.utils.settings import get_settings

Mode = Literal["centralized", "federated", "switchable-federated"]
MODES = ("centralized", "federated", "switchable-federated")

# Fields that only mean something when clients talk to a server
FEDERATED_ONLY = ("clients_per_round", "aggregation", "transport", "host", "port", "workers")


class ModelSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["standard", "switchable"] = "standard"
    in_channels: int = Field(default=1, ge=1)
    gen_width: int = Field(default=8, ge=1)
    gen_depth: int = Field(default=2, ge=1)
    disc_width: int = Field(default=8, ge=1)
    disc_depth: int = Field(default=2, ge=1)
    residual_skip: bool = False
    final_tanh: bool = False
    code_hidden: int = Field(default=32, ge=1)

    def generator_config(self) -> ModelConfig:
        return ModelConfig(in_channels=self.in_channels, width=self.gen_width, depth=self.gen_depth,
                           residual_skip=self.residual_skip, final_tanh=self.final_tanh)

    def discriminator_config(self) -> ModelConfig:
        return ModelConfig(in_channels=self.in_channels, width=self.disc_width, depth=self.disc_depth)


class SeedSection(BaseModel):
    """Model initialization, client batch draws and client selection (data seed lives in [task])."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: int = 0
    batch: int = 0
    selection: int = 0


class OutputSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    directory: str = "runs/default"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    task: TaskSpec = TaskSpec()
    model: ModelSection = ModelSection()
    loss: LossWeights = LossWeights()
    federated: FederatedConfig = FederatedConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    seeds: SeedSection = SeedSection()
    output: OutputSection = OutputSection()

    def output_dir(self) -> Path:
        override = get_settings().output_dir
        return Path(override) if override else Path(self.output.directory)

    def for_mode(self, mode: str) -> "ExperimentConfig":
        """The config as the given mode runs it: the switchable mode forces the switchable variant."""
        if mode not in MODES:
            raise ConfigError(f"Unknown mode '{mode}', expected one of {MODES}")
        variant = self.model.variant
        if mode == "switchable-federated":
            variant = "switchable"
        elif mode == "federated":
            variant = "standard"
        if variant != self.model.variant:
            LOGGER.warning(f"Mode {mode} runs the {variant} variant (config says {self.model.variant})")
        return self.model_copy(update={"model": self.model.model_copy(update={"variant": variant})})

    def ignored_fields(self, mode: str) -> list:
        """Federated-only fields set explicitly in a config run centrally."""
        if mode != "centralized":
            return []
        return sorted(set(self.federated.model_fields_set) & set(FEDERATED_ONLY))


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate a TOML experiment config.

    Raises:
        ConfigError: unreadable file, TOML syntax error or failed validation
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Config {path} is not valid TOML: {e}") from e
    config = parse_config(data)
    LOGGER.info(f"Loaded config {path} (hash {config_hash(config)[:12]})")
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
