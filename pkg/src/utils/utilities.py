import hashlib
from typing import Iterable, Mapping
import numpy as np


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1.0) -> float:
    """
    Largest elementwise |a - b| / max(|a|, |b|, floor).

    Returns 0.0 for empty inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def nested_max_relative_error(
    left: Mapping[str, Mapping[str, np.ndarray]],
    right: Mapping[str, Mapping[str, np.ndarray]],
    floor: float = 1.0,
) -> float:
    """Max relative error across two {role: {name: array}} maps with identical keys."""
    if left.keys() != right.keys():
        raise KeyError(f"Role sets differ: {sorted(left)} vs {sorted(right)}")
    worst = 0.0
    for role in left:
        if left[role].keys() != right[role].keys():
            raise KeyError(f"Entry names differ in role {role}")
        for name in left[role]:
            worst = max(worst, max_relative_error(left[role][name], right[role][name], floor))
    return worst


def sha256_of_arrays(arrays: Iterable[np.ndarray]) -> str:
    """Hex SHA-256 over the little-endian float32 bytes of the arrays, in order."""
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return digest.hexdigest()


def git_blob_sha1(content: bytes) -> str:
    """Content checksum computed the way git names blobs."""
    header = f"blob {len(content)}\0".encode("ascii")
    return hashlib.sha1(header + content).hexdigest()
