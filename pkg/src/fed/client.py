"""Client side of a round: sample a local batch and compute local gradients."""
from dataclasses import dataclass
from typing import List
from src.fed.schedule import sample_batch
from src.fed.state import ClientSpec, StepMode
from src.nn.models import CycleModels
from src.nn.params import DISCRIMINATOR_ROLES, GENERATOR_ROLES
from src.objectives.local import Convention, LocalLossReport, local_objective
from src.objectives.terms import LossWeights
from src.transport.message import GradientMessage, StepKind
from src.utils.logger import LOGGER


@dataclass
class ClientUpload:
    """Messages for the server plus the local loss report (kept client-side as telemetry)."""
    messages: List[GradientMessage]
    report: LocalLossReport


def client_round(
    client: ClientSpec,
    snapshot: CycleModels,
    weights: LossWeights,
    round_index: int,
    step_mode: StepMode = "split",
    convention: Convention = "step",
) -> ClientUpload:
    """
    Gradients of the client's domain-local objective at the broadcast parameters.

    Args:
        client: The client; only its own samples are read
        snapshot: Round broadcast, never modified
        weights: Loss weights
        round_index: Round id stamped on the messages and used to draw the batch
        step_mode: "split" sends a D-step and a G-step message, "combined" one message
        convention: Gradient convention of the local objective

    Returns:
        ClientUpload with the messages in the order the server applies them
    """
    batch = sample_batch(client, round_index)
    objective = local_objective(snapshot, batch, client.domain, weights, convention)
    gradients = objective.gradients

    if step_mode == "combined":
        messages = [GradientMessage.from_gradients(round_index, client.client_id, client.domain,
                                                   StepKind.COMBINED, gradients)]
    else:
        d_part = {role: entries for role, entries in gradients.items() if role in DISCRIMINATOR_ROLES}
        g_part = {role: entries for role, entries in gradients.items() if role in GENERATOR_ROLES}
        messages = [
            GradientMessage.from_gradients(round_index, client.client_id, client.domain, StepKind.D_STEP, d_part),
            GradientMessage.from_gradients(round_index, client.client_id, client.domain, StepKind.G_STEP, g_part),
        ]

    LOGGER.debug(
        f"Client {client.client_id} ({client.domain}) round {round_index}: "
        f"batch {batch.shape[0]}, local loss {objective.report.total:.5f}"
    )
    return ClientUpload(messages=messages, report=objective.report)
