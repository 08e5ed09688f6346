"""
Dataset files for cross-run reproducibility.

    b"FCDS" | u16 version | u32 header length | JSON task spec | entries | CRC32

Entries use the gradient-message tensor layout and are named "X", "Y" and,
when present, "eval/clean", "eval/degraded", "eval/X", "eval/Y".
"""
import json
import struct
from pathlib import Path
from typing import Union
from src.data.tasks import DomainDataset, PairedEvalSet, TaskData, TaskSpec
from src.transport.codec import ByteReader, encode_entries, read_entries, seal, verify_crc
from src.utils.errors import DatasetError
from src.utils.logger import LOGGER

MAGIC = b"FCDS"
FILE_VERSION = 1
PREAMBLE = struct.Struct("<4sHI")


def save_dataset(data: TaskData, path: Union[str, Path]) -> Path:
    path = Path(path)
    entries = {"X": data.x.samples, "Y": data.y.samples}
    if data.paired is not None:
        entries["eval/clean"] = data.paired.clean
        entries["eval/degraded"] = data.paired.degraded
    if data.eval_x is not None:
        entries["eval/X"] = data.eval_x.samples
    if data.eval_y is not None:
        entries["eval/Y"] = data.eval_y.samples

    header = json.dumps(data.x.spec.model_dump(), sort_keys=True).encode("utf-8")
    body = PREAMBLE.pack(MAGIC, FILE_VERSION, len(header)) + header + encode_entries(entries)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(seal(body))
    LOGGER.info(f"Saved {data.x.spec.name} dataset to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> TaskData:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Dataset file not found: {path}")
    buffer = path.read_bytes()
    if len(buffer) < PREAMBLE.size + 4:
        raise DatasetError(f"{path} is too short to be a dataset file")
    verify_crc(buffer, len(buffer) - 4)

    reader = ByteReader(buffer)
    magic, version, header_length = reader.unpack(PREAMBLE)
    if magic != MAGIC or version != FILE_VERSION:
        raise DatasetError(f"{path} is not a version-{FILE_VERSION} dataset file")
    spec = TaskSpec(**json.loads(reader.take(header_length).decode("utf-8")))
    entries = read_entries(buffer, reader)

    def domain(tag: str, key: str):
        return DomainDataset(tag, entries[key], spec) if key in entries else None

    paired = None
    if "eval/clean" in entries:
        paired = PairedEvalSet(entries["eval/clean"], entries["eval/degraded"])
    return TaskData(x=domain("X", "X"), y=domain("Y", "Y"), paired=paired,
                    eval_x=domain("X", "eval/X"), eval_y=domain("Y", "eval/Y"))
