"""
Server side of a round: client selection, aggregation and the optimizer step.

Nothing here accepts a data batch; the server only sees gradient messages.
"""
from typing import List, Optional, Sequence
import numpy as np
from src.fed.schedule import lr_schedule
from src.fed.state import Aggregation, ClientSpec, ServerState
from src.nn.params import GradientMap
from src.transport.message import GradientMessage
from src.utils.errors import AggregationError, SelectionError
from src.utils.logger import LOGGER


def select_clients(clients: Sequence[ClientSpec], n: int, seed: int, round_index: int) -> List[ClientSpec]:
    """
    Uniform sample of n clients without replacement, sorted by id.

    Deterministic given (seed, round_index).
    """
    if not 1 <= n <= len(clients):
        raise SelectionError(f"Cannot select {n} of {len(clients)} clients")
    rng = np.random.default_rng([seed, round_index])
    chosen = rng.choice(len(clients), size=n, replace=False)
    return sorted((clients[i] for i in chosen), key=lambda c: c.client_id)


def sum_gradients(maps: Sequence[GradientMap]) -> GradientMap:
    """
    Elementwise float32 sum of congruent gradient maps, accumulated in list order.

    Starts from a copy of the first map and adds the others one at a time, so
    callers that sum the same maps in the same order get bitwise equal results.
    """
    if not maps:
        raise AggregationError("No gradients to sum")
    total: GradientMap = {role: {name: value.astype(np.float32, copy=True) for name, value in entries.items()}
                          for role, entries in maps[0].items()}
    for gradients in maps[1:]:
        for role, entries in gradients.items():
            for name, value in entries.items():
                total[role][name] += value
    return total


def aggregate(messages: Sequence[GradientMessage], mode: Aggregation = "mean") -> GradientMap:
    """
    Elementwise sum (or mean) of congruent messages, summed in ascending client-id order.

    Raises:
        AggregationError: empty list, mixed rounds or step kinds, mismatched names or shapes
    """
    if not messages:
        raise AggregationError("No messages to aggregate")
    if mode not in ("sum", "mean"):
        raise AggregationError(f"Unknown aggregation mode '{mode}'")
    ordered = sorted(messages, key=lambda m: m.client_id)
    first = ordered[0]
    layout = {role: {name: value.shape for name, value in entries.items()} for role, entries in first.groups.items()}

    for message in ordered[1:]:
        if message.round != first.round:
            raise AggregationError(f"Round mismatch: {message.round} vs {first.round} (client {message.client_id})")
        if message.step != first.step:
            raise AggregationError(f"Step kind mismatch from client {message.client_id}")
        other = {role: {name: value.shape for name, value in entries.items()} for role, entries in message.groups.items()}
        if other != layout:
            raise AggregationError(f"Gradient names or shapes from client {message.client_id} do not match")

    total = sum_gradients([message.groups for message in ordered])
    if mode == "mean" and len(ordered) > 1:
        count = np.float32(len(ordered))
        for entries in total.values():
            for name in entries:
                entries[name] = entries[name] / count
    return total


def optimizer_step(state: ServerState, gradients: GradientMap, lr: Optional[float] = None) -> float:
    """
    Apply aggregated gradients at the scheduled learning rate.

    Returns:
        The learning rate used
    """
    if lr is None:
        lr = lr_schedule(state.round, state.total_rounds, state.base_lr)
    state.optimizer.step(state.models.groups, gradients, lr)
    LOGGER.debug(f"Round {state.round}: stepped {sorted(gradients)} at lr {lr:.3e}")
    return lr
