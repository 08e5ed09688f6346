"""
Run directory layout.

    config.json     resolved experiment config plus the mode it ran in
    history.csv     one row per (round, client) with the loss breakdown
    params.bin      final parameters (src.nn.storage format)
    dataset.bin     the task data the run trained on (src.data.storage format)
    manifest.json   config hash, history checksum and a content hash per file
    metrics.csv     written by `report`
    series.dat      written by `series` (whitespace columns for gnuplot)
"""
import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import numpy as np
from src.cli.config import ExperimentConfig, config_hash, parse_config
from src.fed.state import TrainHistory
from src.objectives.local import TERM_NAMES
from src.utils.errors import ArtifactError
from src.utils.logger import LOGGER
from src.utils.utilities import git_blob_sha1

CONFIG_FILE = "config.json"
HISTORY_FILE = "history.csv"
PARAMS_FILE = "params.bin"
DATASET_FILE = "dataset.bin"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.csv"
SERIES_FILE = "series.dat"

HISTORY_COLUMNS = ("round", "lr", "client_id", "domain", *TERM_NAMES, "total", "d_step", "g_step", "checksum")
SERIES_COLUMNS = ("round", "lr", "d_step", "g_step", *TERM_NAMES)


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ArtifactError(str(path), what)
    return path


def write_config(run_dir: Path, config: ExperimentConfig, mode: str) -> Path:
    path = run_dir / CONFIG_FILE
    payload = {"mode": mode, "config": config.model_dump(mode="json")}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_config(run_dir: Path) -> tuple:
    """(ExperimentConfig, mode) of a finished run."""
    path = _require(run_dir / CONFIG_FILE, "run config")
    payload = json.loads(path.read_text(encoding="utf-8"))
    return parse_config(payload["config"]), payload["mode"]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_history(run_dir: Path, history: TrainHistory) -> Path:
    path = run_dir / HISTORY_FILE
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for record in history.records:
            for client_id, report in record.losses:
                writer.writerow([
                    record.round, repr(record.lr), client_id, report.domain,
                    *(_fmt(report.terms[name]) for name in TERM_NAMES),
                    _fmt(report.total), _fmt(report.d_step), _fmt(report.g_step), record.checksum,
                ])
    return path


def read_history(run_dir: Path) -> List[Dict[str, str]]:
    path = _require(run_dir / HISTORY_FILE, "training history")
    with path.open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_manifest(run_dir: Path, config: ExperimentConfig, mode: str, history: TrainHistory,
                   files: Sequence[str]) -> Path:
    manifest = {
        "mode": mode,
        "config_hash": config_hash(config),
        "rounds": len(history),
        "history_checksum": history.checksum(),
        "final_params_checksum": history.records[-1].checksum if history.records else None,
        "files": {name: git_blob_sha1((run_dir / name).read_bytes()) for name in files},
    }
    path = run_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    LOGGER.info(f"Wrote manifest for {len(files)} artifacts to {path}")
    return path


def verify_manifest(run_dir: Path) -> Dict[str, bool]:
    """Recompute each listed file's hash; {file: matches}."""
    manifest = json.loads(_require(run_dir / MANIFEST_FILE, "manifest").read_text(encoding="utf-8"))
    status = {}
    for name, expected in manifest["files"].items():
        path = run_dir / name
        status[name] = path.is_file() and git_blob_sha1(path.read_bytes()) == expected
    return status


def write_metrics(run_dir: Path, rows: List[Dict[str, Union[str, float]]]) -> Path:
    path = run_dir / METRICS_FILE
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["metric", "direction", "input", "output"])
        writer.writeheader()
        writer.writerows(rows)
    return path


def round_series(rows: List[Dict[str, str]]) -> List[Dict[str, float]]:
    """Per-round means over clients of the history columns in SERIES_COLUMNS."""
    by_round: Dict[int, List[Dict[str, str]]] = {}
    for row in rows:
        by_round.setdefault(int(row["round"]), []).append(row)

    def column_mean(group: List[Dict[str, str]], name: str) -> float:
        values = [float(row[name]) for row in group if row[name] != ""]
        return float(np.mean(values)) if values else float("nan")

    series = []
    for k in sorted(by_round):
        group = by_round[k]
        point = {"round": float(k), "lr": float(group[0]["lr"])}
        for name in SERIES_COLUMNS[2:]:
            point[name] = column_mean(group, name)
        series.append(point)
    return series


def write_series(path: Path, series: List[Dict[str, float]]) -> Path:
    """Whitespace-separated columns with a '#' header line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# " + " ".join(SERIES_COLUMNS)]
    for point in series:
        lines.append(" ".join(f"{point[name]:.8g}" for name in SERIES_COLUMNS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
