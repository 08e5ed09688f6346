"""
Command implementations behind main.py.

Every command returns a process exit code:
    0 success, 1 other library error, 2 config or artifact error, 3 numeric abort, 4 verification failure
"""
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import numpy as np
from rich.console import Console
from rich.table import Table
from src.cli.artifacts import (
    DATASET_FILE,
    HISTORY_FILE,
    PARAMS_FILE,
    SERIES_FILE,
    read_config,
    read_history,
    round_series,
    verify_manifest,
    write_config,
    write_history,
    write_manifest,
    write_metrics,
    write_series,
)
from src.cli.config import ExperimentConfig, load_config
from src.cli.suites import run_suites, write_report
from src.data.metrics import mmd, psnr, ssim
from src.data.storage import load_dataset, save_dataset
from src.data.tasks import PairedEvalSet, TaskData, build_task
from src.fed.state import TrainSetup, make_clients
from src.fed.trainer import train_centralized, train_federated
from src.nn.models import CycleModels
from src.nn.params import DISCRIMINATOR_ROLES, GENERATOR_ROLES
from src.nn.storage import load_params, save_params
from src.tensor.tape import Tensor
from src.transport.codec import message_size
from src.utils.errors import ArtifactError, ConfigError, FedCycleError, NumericAbortError
from src.utils.logger import LOG_FILE, LOGGER

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

# Full-size 256x256 networks as published: four-network CycleGAN vs the switchable one
REFERENCE_PARAMS = {"standard": 69_522_952, "switchable": 35_576_708}

console = Console()


def exit_code_for(error: Exception) -> int:
    if isinstance(error, NumericAbortError):
        return EXIT_NUMERIC
    if isinstance(error, (ConfigError, ArtifactError)):
        return EXIT_CONFIG
    return EXIT_ERROR


# ============================================================================
# train
# ============================================================================

def build_setup(config: ExperimentConfig) -> Tuple[TrainSetup, TaskData]:
    """Task data, freshly initialized models and the client partition for a config."""
    task = build_task(config.task)
    models = CycleModels.create(
        config.model.variant,
        config.model.generator_config(),
        config.model.discriminator_config(),
        config.seeds.model,
        config.model.code_hidden,
    )
    fed = config.federated
    clients = make_clients(task, fed.clients_per_domain, config.optimizer.batch_size, config.seeds.batch, fed.flip)
    setup = TrainSetup(models, clients, config.loss, fed, config.optimizer, selection_seed=config.seeds.selection)
    return setup, task


def cmd_train(config_path: Union[str, Path], mode: str, output_dir: Optional[str] = None) -> int:
    config = load_config(config_path).for_mode(mode)
    for name in config.ignored_fields(mode):
        LOGGER.warning(f"federated.{name} is ignored in centralized mode")
        console.print(f"[yellow]Warning: federated.{name} is ignored in centralized mode[/yellow]")

    run_dir = Path(output_dir) if output_dir else config.output_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    setup, task = build_setup(config)
    trainer = train_centralized if mode == "centralized" else train_federated

    console.print(f"[bold bright_blue]Mode: {mode}[/bold bright_blue] "
                  f"({config.model.variant} models, {config.optimizer.rounds} rounds, task {config.task.name})")
    with console.status("[dim]Training...[/dim]"):
        result = trainer(setup)

    files = [
        write_config(run_dir, config, mode).name,
        write_history(run_dir, result.history).name,
        save_params(result.models, run_dir / PARAMS_FILE).name,
        save_dataset(task, run_dir / DATASET_FILE).name,
    ]
    write_manifest(run_dir, config, mode, result.history, files)

    table = Table(title="Training run")
    table.add_column("Field", style="cyan")
    table.add_column("Value")
    table.add_row("Rounds", str(len(result.history)))
    table.add_row("Parameters", f"{result.models.counts()['total']:,}")
    if result.history.records:
        table.add_row("Final mean D-step loss", f"{result.history.records[-1].mean_d_step():.4f}")
    table.add_row("History checksum", result.history.checksum())
    table.add_row("Run directory", str(run_dir))
    console.print(table)
    console.print(f"[dim]Log file: {LOG_FILE}[/dim]")
    return EXIT_OK


# ============================================================================
# verify
# ============================================================================

def cmd_verify(suites: Optional[List[str]] = None, report_path: Optional[str] = None) -> int:
    try:
        results = run_suites(suites)
    except KeyError as e:
        raise ConfigError(str(e)) from e

    table = Table(title="Verification")
    table.add_column("Suite", style="cyan")
    table.add_column("Checks", justify="right")
    table.add_column("Worst", justify="right")
    table.add_column("Result")
    for result in results:
        worst = max(result.checks, key=lambda c: c.value / c.tolerance if c.tolerance else c.value)
        table.add_row(
            result.suite,
            str(len(result.checks)),
            f"{worst.value:.2e} ({worst.name})",
            "[green]pass[/green]" if result.passed else "[bold red]FAIL[/bold red]",
        )
    console.print(table)
    if report_path:
        console.print(f"[dim]Report: {write_report(results, report_path)}[/dim]")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# ============================================================================
# bench
# ============================================================================

def bench_models(config: ExperimentConfig) -> Dict[str, CycleModels]:
    model = config.model
    return {
        variant: CycleModels.create(variant, model.generator_config(), model.discriminator_config(),
                                    config.seeds.model, model.code_hidden)
        for variant in ("standard", "switchable")
    }


def upload_bytes(models: CycleModels, step_mode: str) -> int:
    """Bytes one client uploads per round."""
    groups = models.as_map()
    if step_mode == "combined":
        return message_size(groups)
    d_part = {role: e for role, e in groups.items() if role in DISCRIMINATOR_ROLES}
    g_part = {role: e for role, e in groups.items() if role in GENERATOR_ROLES}
    return message_size(d_part) + message_size(g_part)


def cmd_bench(config_path: Optional[Union[str, Path]] = None, what: str = "params") -> int:
    config = load_config(config_path) if config_path else ExperimentConfig()
    models = bench_models(config)
    standard, switchable = models["standard"], models["switchable"]

    if what == "params":
        table = Table(title="Parameter counts")
        table.add_column("Variant", style="cyan")
        table.add_column("Groups")
        table.add_column("Total", justify="right")
        for variant, m in models.items():
            counts = m.counts()
            groups = ", ".join(f"{role} {counts[role]:,}" for role in m.roles)
            table.add_row(variant, groups, f"{counts['total']:,}")
        ratio = switchable.counts()["total"] / standard.counts()["total"]
        table.add_row("ratio", "switchable / standard", f"{ratio:.3f}")
        reference = REFERENCE_PARAMS["switchable"] / REFERENCE_PARAMS["standard"]
        table.add_row(
            "[dim]reference 256x256[/dim]",
            f"[dim]standard {REFERENCE_PARAMS['standard']:,}, switchable {REFERENCE_PARAMS['switchable']:,}[/dim]",
            f"[dim]{reference:.3f}[/dim]",
        )
    elif what == "bytes":
        table = Table(title="Upload bytes per client per round")
        table.add_column("Variant", style="cyan")
        table.add_column("split", justify="right")
        table.add_column("combined", justify="right")
        for variant, m in models.items():
            table.add_row(variant, f"{upload_bytes(m, 'split'):,}", f"{upload_bytes(m, 'combined'):,}")
    else:
        raise ConfigError(f"Unknown benchmark '{what}', expected params or bytes")
    console.print(table)
    return EXIT_OK


# ============================================================================
# report / series
# ============================================================================

def _translate(network, samples: np.ndarray) -> np.ndarray:
    return network(Tensor(samples)).numpy()


def denoise_scores(models: CycleModels, paired: PairedEvalSet) -> Dict[str, Tuple[float, float]]:
    """(input, output) PSNR and SSIM of the Y->X generator against the clean held-out images."""
    clean, degraded = paired.clean, paired.degraded
    restored = _translate(models.bind().to_x, degraded)
    return {
        "psnr": (psnr(clean, degraded), psnr(clean, restored)),
        "ssim": (ssim(clean, degraded), ssim(clean, restored)),
    }


def evaluate_run(run_dir: Union[str, Path]) -> List[Dict[str, Union[str, float]]]:
    """Held-out metrics of a finished run: PSNR/SSIM for denoise, MMD for style."""
    run_dir = Path(run_dir)
    config, _ = read_config(run_dir)
    models = load_params(run_dir / PARAMS_FILE)
    dataset_path = run_dir / DATASET_FILE
    data = load_dataset(dataset_path) if dataset_path.is_file() else build_task(config.task)

    if data.paired is not None:
        return [
            {"metric": metric, "direction": "Y->X", "input": before, "output": after}
            for metric, (before, after) in denoise_scores(models, data.paired).items()
        ]
    if data.eval_x is None or data.eval_y is None:
        raise ArtifactError(str(dataset_path), "evaluation set")
    bound = models.bind()
    eval_x, eval_y = data.eval_x.samples, data.eval_y.samples
    return [
        {"metric": "mmd", "direction": "X->Y", "input": mmd(eval_x, eval_y),
         "output": mmd(_translate(bound.to_y, eval_x), eval_y)},
        {"metric": "mmd", "direction": "Y->X", "input": mmd(eval_y, eval_x),
         "output": mmd(_translate(bound.to_x, eval_y), eval_x)},
    ]


def cmd_report(run_dir: Union[str, Path]) -> int:
    run_dir = Path(run_dir)
    tampered = [name for name, ok in verify_manifest(run_dir).items() if not ok]
    if tampered:
        raise ArtifactError(str(run_dir / tampered[0]), "run artifact matching its manifest hash")
    rows = evaluate_run(run_dir)
    path = write_metrics(run_dir, rows)

    _, mode = read_config(run_dir)
    table = Table(title=f"Held-out metrics ({mode})")
    table.add_column("Metric", style="cyan")
    table.add_column("Direction")
    table.add_column("Input", justify="right")
    table.add_column("Output", justify="right")
    for row in rows:
        table.add_row(row["metric"], row["direction"], f"{row['input']:.4f}", f"{row['output']:.4f}")
    console.print(table)
    console.print(f"[dim]Metrics: {path}[/dim]")
    return EXIT_OK


def cmd_series(run_dir: Union[str, Path], out: Optional[str] = None) -> int:
    run_dir = Path(run_dir)
    series = round_series(read_history(run_dir))
    path = write_series(Path(out) if out else run_dir / SERIES_FILE, series)
    console.print(f"Wrote {len(series)} rounds from {run_dir / HISTORY_FILE} to {path}", style="green")
    return EXIT_OK


def run_command(name: str, **kwargs) -> int:
    """Dispatch a command and map library errors to exit codes."""
    commands = {
        "train": cmd_train,
        "verify": cmd_verify,
        "bench": cmd_bench,
        "report": cmd_report,
        "series": cmd_series,
    }
    try:
        return commands[name](**kwargs)
    except FedCycleError as e:
        LOGGER.error(f"{name} failed: {e}")
        console.print(f"[bold red]Error: {e}[/bold red]")
        return exit_code_for(e)
