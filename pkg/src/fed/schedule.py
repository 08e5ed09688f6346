"""Learning-rate schedule and per-round batch sampling."""
import numpy as np
from src.fed.state import ClientSpec


def lr_schedule(k: int, total: int, base: float) -> float:
    """
    Constant base rate for the first half of the rounds, then linear decay
    reaching exactly 0 at k == total.
    """
    if total <= 0:
        return 0.0
    if not 0 <= k <= total:
        raise ValueError(f"Round {k} outside [0, {total}]")
    half = total / 2
    if k < half:
        return float(base)
    return float(base * (1 - (k - half) / half))


def batch_indices(client: ClientSpec, round_index: int) -> np.ndarray:
    """Indices of the client's batch: the head of a fresh permutation every round."""
    n = client.data.shape[0]
    rng = np.random.default_rng([client.seed, client.client_id, round_index])
    return rng.permutation(n)[:min(client.batch_size, n)]


def sample_batch(client: ClientSpec, round_index: int) -> np.ndarray:
    """
    The client's batch for a round; a pure function of (client, round).

    With flips enabled each sample is mirrored left-right with probability 1/2.
    """
    batch = client.data[batch_indices(client, round_index)]
    if client.flip:
        rng = np.random.default_rng([client.seed, client.client_id, round_index, 1])
        mirror = rng.random(batch.shape[0]) < 0.5
        batch = batch.copy()
        batch[mirror] = batch[mirror][..., ::-1]
    return batch
