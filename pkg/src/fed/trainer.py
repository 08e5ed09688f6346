"""
Federated and centralized training loops.

Federated round k:
    broadcast -> selected clients compute local gradients (thread pool) ->
    messages travel over the configured transport -> aggregate -> D update
    then G update (split mode) or one update (combined mode)

The centralized baseline draws the same client batches, concatenates them per
domain, differentiates each domain's objective on its whole batch and sums the
two gradient maps exactly as the server sums client messages. The optimizer and
schedule are shared.
"""
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List
import numpy as np
from src.fed.client import client_round
from src.fed.optimizer import make_optimizer
from src.fed.schedule import lr_schedule, sample_batch
from src.fed.server import aggregate, optimizer_step, select_clients, sum_gradients
from src.fed.state import RoundRecord, ServerState, TrainHistory, TrainSetup, check_clients
from src.nn.models import CycleModels
from src.nn.params import DISCRIMINATOR_ROLES, GENERATOR_ROLES, GradientMap
from src.objectives.local import LocalLossReport, local_objective
from src.transport.channels import MessageChannel, open_links, transport_send
from src.transport.codec import decode
from src.transport.message import GradientMessage, StepKind
from src.utils.errors import TransportError
from src.utils.logger import LOGGER
from src.utils.settings import get_settings

CENTRAL_ID = -1


@dataclass
class TrainResult:
    history: TrainHistory
    models: CycleModels


def _new_state(setup: TrainSetup) -> ServerState:
    opt = setup.optimizer
    return ServerState(
        models=setup.models.copy(),
        optimizer=make_optimizer(opt.name, opt.beta1, opt.beta2, opt.eps),
        total_rounds=opt.rounds,
        base_lr=opt.lr,
        aggregation=setup.federated.aggregation,
        selection_seed=setup.selection_seed,
    )


def _split(gradients: GradientMap, roles) -> GradientMap:
    return {role: entries for role, entries in gradients.items() if role in roles}


def _finish_round(state: ServerState, history: TrainHistory, setup: TrainSetup, lr: float,
                  client_ids: List[int], losses) -> None:
    record = RoundRecord(round=state.round, lr=lr, client_ids=client_ids, losses=losses,
                         checksum=state.params_checksum())
    history.append(record)
    LOGGER.info(f"Round {state.round}: lr {lr:.3e}, clients {client_ids}, mean D-step loss {record.mean_d_step():.4f}")
    if setup.observer is not None:
        setup.observer(state.round, state.models)
    state.round += 1


# ============================================================================
# Federated
# ============================================================================

def _client_worker(client, snapshot, setup: TrainSetup, round_index: int, channel: MessageChannel) -> LocalLossReport:
    upload = client_round(client, snapshot, setup.weights, round_index,
                          setup.federated.step_mode, setup.federated.convention)
    for message in upload.messages:
        transport_send(channel, message)
    return upload.report


def _await_message(channel: MessageChannel, future: Future, client_id: int, round_index: int,
                   interval: float) -> GradientMessage:
    """Next message from a client; re-raises the client's failure instead of waiting forever."""
    while True:
        frame = channel.poll(interval)
        if frame is not None:
            break
        if future.done():
            if future.exception() is not None:
                raise future.exception()
            frame = channel.poll(0)
            if frame is None:
                raise TransportError(f"Client {client_id} finished round {round_index} without sending")
            break
    message = decode(frame)
    if message.client_id != client_id or message.round != round_index:
        raise TransportError(
            f"Expected round {round_index} from client {client_id}, "
            f"got round {message.round} from client {message.client_id}"
        )
    return message


def train_federated(setup: TrainSetup) -> TrainResult:
    """
    Run K federated rounds.

    Returns:
        TrainResult with one history record per round and the final models
    """
    check_clients(setup.clients)
    fed = setup.federated
    settings = get_settings()
    state = _new_state(setup)
    history = TrainHistory()
    per_round = fed.clients_per_round or len(setup.clients)
    expected = 1 if fed.step_mode == "combined" else 2
    ids = [c.client_id for c in setup.clients]

    LOGGER.info(
        f"Federated training: {state.total_rounds} rounds, {len(ids)} clients, {per_round} per round, "
        f"{fed.aggregation} aggregation, {fed.step_mode} steps over {fed.transport}"
    )
    # Links close before the pool joins, so a worker blocked in send fails instead of hanging
    with ThreadPoolExecutor(max_workers=fed.workers or len(ids), thread_name_prefix="client") as pool, \
            open_links(fed.transport, ids, fed.host, fed.port, settings.frame_cap) as links:
        for k in range(state.total_rounds):
            lr = lr_schedule(k, state.total_rounds, state.base_lr)
            selected = select_clients(setup.clients, per_round, state.selection_seed, k)
            snapshot = state.models.copy()
            futures: Dict[int, Future] = {
                c.client_id: pool.submit(_client_worker, c, snapshot, setup, k, links[c.client_id].client)
                for c in selected
            }

            received: Dict[StepKind, List[GradientMessage]] = {}
            for client in selected:
                for _ in range(expected):
                    message = _await_message(links[client.client_id].server, futures[client.client_id],
                                             client.client_id, k, settings.poll_interval)
                    received.setdefault(message.step, []).append(message)
            losses = [(c.client_id, futures[c.client_id].result()) for c in selected]

            if fed.step_mode == "combined":
                optimizer_step(state, aggregate(received[StepKind.COMBINED], state.aggregation), lr)
            else:
                optimizer_step(state, aggregate(received[StepKind.D_STEP], state.aggregation), lr)
                optimizer_step(state, aggregate(received[StepKind.G_STEP], state.aggregation), lr)
            _finish_round(state, history, setup, lr, [c.client_id for c in selected], losses)

    return TrainResult(history=history, models=state.models)


# ============================================================================
# Centralized
# ============================================================================

def central_batches(setup: TrainSetup, round_index: int) -> Dict[str, np.ndarray]:
    """Every client's batch for the round, concatenated per domain in client-id order."""
    batches = {}
    for domain in ("X", "Y"):
        owners = sorted((c for c in setup.clients if c.domain == domain), key=lambda c: c.client_id)
        batches[domain] = np.concatenate([sample_batch(c, round_index) for c in owners])
    return batches


def train_centralized(setup: TrainSetup) -> TrainResult:
    """
    Non-federated baseline with the identical optimizer, schedule and batch draws.

    Each round differentiates the X objective on the concatenated X batches,
    then the Y objective on the concatenated Y batches, and adds the two
    gradient maps with the server's summation.
    """
    check_clients(setup.clients)
    fed = setup.federated
    state = _new_state(setup)
    history = TrainHistory()
    LOGGER.info(f"Centralized training: {state.total_rounds} rounds, {fed.step_mode} steps")

    for k in range(state.total_rounds):
        lr = lr_schedule(k, state.total_rounds, state.base_lr)
        batches = central_batches(setup, k)
        models = state.models

        objectives = [local_objective(models, batches[domain], domain, setup.weights, fed.convention)
                      for domain in ("X", "Y")]
        gradients = sum_gradients([objective.gradients for objective in objectives])

        if fed.step_mode == "combined":
            optimizer_step(state, gradients, lr)
        else:
            optimizer_step(state, _split(gradients, DISCRIMINATOR_ROLES), lr)
            optimizer_step(state, _split(gradients, GENERATOR_ROLES), lr)
        losses = [(CENTRAL_ID, objective.report) for objective in objectives]
        _finish_round(state, history, setup, lr, [c.client_id for c in setup.clients], losses)

    return TrainResult(history=history, models=state.models)
