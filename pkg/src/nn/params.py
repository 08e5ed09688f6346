"""Parameter groups, role registry and transmission-size accounting."""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Tuple
import numpy as np

# Role names and their one-byte wire codes
ROLES: Tuple[str, ...] = ("G", "F", "DX", "DY", "G_shared", "D_shared", "code_gen_g", "code_gen_d")
ROLE_CODES: Dict[str, int] = {role: code for code, role in enumerate(ROLES)}

# Which side of the minimax each role is trained by
GENERATOR_ROLES: Tuple[str, ...] = ("G", "F", "G_shared", "code_gen_g")
DISCRIMINATOR_ROLES: Tuple[str, ...] = ("DX", "DY", "D_shared", "code_gen_d")

# {role: {entry name: array}}, used for gradients and optimizer moments alike
GradientMap = Dict[str, Dict[str, np.ndarray]]


@dataclass
class ParamGroup:
    """
    Named, ordered parameters of one network role.

    Entry order is insertion order and is what serialization relies on.
    Values are float32 arrays owned by the group (the server mutates them in place).
    """
    role: str
    entries: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLE_CODES:
            raise ValueError(f"Unknown role '{self.role}'")

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.entries:
            raise ValueError(f"Duplicate entry '{name}' in group {self.role}")
        self.entries[name] = np.ascontiguousarray(value, dtype=np.float32)

    def names(self) -> List[str]:
        return list(self.entries)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self.entries.items()}

    def count(self) -> int:
        return int(sum(value.size for value in self.entries.values()))

    def copy(self) -> "ParamGroup":
        return ParamGroup(self.role, {name: value.copy() for name, value in self.entries.items()})


def param_count(groups: Iterable[ParamGroup]) -> Tuple[Dict[str, int], int]:
    """
    Exact element counts.

    Returns:
        (per-role counts, total); an empty list gives ({}, 0)
    """
    per_group = {group.role: group.count() for group in groups}
    return per_group, sum(per_group.values())


def zeros_like_groups(groups: Mapping[str, ParamGroup]) -> GradientMap:
    return {role: {name: np.zeros_like(value) for name, value in group.entries.items()}
            for role, group in groups.items()}
