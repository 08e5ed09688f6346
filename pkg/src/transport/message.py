"""The gradient message exchanged between clients and the server."""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Mapping
import numpy as np
from src.nn.params import GradientMap

PROTOCOL_VERSION = 1

DOMAIN_CODES: Dict[str, int] = {"X": 0, "Y": 1}
DOMAIN_TAGS: Dict[int, str] = {code: tag for tag, code in DOMAIN_CODES.items()}


class StepKind(IntEnum):
    COMBINED = 0
    D_STEP = 1
    G_STEP = 2


@dataclass(eq=False)
class GradientMessage:
    """
    One client's gradients for one round.

    Equality is field-for-field with bitwise-equal payloads (group and entry
    order included), which is what the codec round-trip guarantees.
    """
    round: int
    client_id: int
    domain: str
    step: StepKind
    groups: GradientMap = field(default_factory=dict)
    version: int = PROTOCOL_VERSION

    @classmethod
    def from_gradients(
        cls,
        round: int,
        client_id: int,
        domain: str,
        step: StepKind,
        gradients: Mapping[str, Mapping[str, np.ndarray]],
    ) -> "GradientMessage":
        groups = {
            role: {name: np.ascontiguousarray(grad, dtype=np.float32) for name, grad in entries.items()}
            for role, entries in gradients.items()
        }
        return cls(round=round, client_id=client_id, domain=domain, step=StepKind(step), groups=groups)

    def to_gradients(self) -> GradientMap:
        return {role: dict(entries) for role, entries in self.groups.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GradientMessage):
            return NotImplemented
        header = (self.version, self.round, self.client_id, self.domain, int(self.step))
        other_header = (other.version, other.round, other.client_id, other.domain, int(other.step))
        if header != other_header or list(self.groups) != list(other.groups):
            return False
        for role, entries in self.groups.items():
            other_entries = other.groups[role]
            if list(entries) != list(other_entries):
                return False
            for name, value in entries.items():
                a = np.ascontiguousarray(value, dtype="<f4")
                b = np.ascontiguousarray(other_entries[name], dtype="<f4")
                if a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True

    def entry_count(self) -> int:
        return sum(len(entries) for entries in self.groups.values())
