"""
Parameter files.

    b"FCPM" | u16 version | u32 header length | JSON header | groups | CRC32

The JSON header holds the variant and both network configs; groups use the
gradient-message group layout.
"""
import json
import struct
from pathlib import Path
from typing import Union
from src.nn.models import CycleModels
from src.nn.networks import ModelConfig
from src.nn.params import ParamGroup
from src.transport.codec import ByteReader, encode_groups, read_groups, seal, verify_crc
from src.utils.errors import ArtifactError, CodecError
from src.utils.logger import LOGGER

MAGIC = b"FCPM"
FILE_VERSION = 1
PREAMBLE = struct.Struct("<4sHI")


def save_params(models: CycleModels, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = json.dumps({
        "variant": models.variant,
        "generator": models.generator.model_dump(),
        "discriminator": models.discriminator.model_dump(),
        "code_hidden": models.code_hidden,
    }, sort_keys=True).encode("utf-8")
    body = PREAMBLE.pack(MAGIC, FILE_VERSION, len(header)) + header + encode_groups(models.as_map())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(seal(body))
    LOGGER.info(f"Saved {models.counts()['total']} parameters to {path}")
    return path


def load_params(path: Union[str, Path]) -> CycleModels:
    """
    Read a parameter file written by save_params.

    Raises:
        ArtifactError: the file does not exist
        CodecError: wrong magic, version or corrupted content
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(str(path), "parameter file")
    buffer = path.read_bytes()
    if len(buffer) < PREAMBLE.size + 4:
        raise CodecError(f"{path} is too short to be a parameter file", offset=0)
    verify_crc(buffer, len(buffer) - 4)
    reader = ByteReader(buffer)
    magic, version, header_length = reader.unpack(PREAMBLE)
    if magic != MAGIC:
        raise CodecError(f"{path} is not a parameter file (magic {magic!r})", offset=0)
    if version != FILE_VERSION:
        raise CodecError(f"{path}: unsupported parameter file version {version}", offset=4)
    header = json.loads(reader.take(header_length).decode("utf-8"))
    groups = read_groups(buffer, reader)

    models = CycleModels(
        variant=header["variant"],
        generator=ModelConfig(**header["generator"]),
        discriminator=ModelConfig(**header["discriminator"]),
        groups={role: ParamGroup(role, entries) for role, entries in groups.items()},
        code_hidden=header["code_hidden"],
    )
    LOGGER.info(f"Loaded {models.variant} parameters from {path}")
    return models
