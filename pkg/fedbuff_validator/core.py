"""
Client and server state machines of buffered asynchronous aggregation.

Clients download the server model, take Q local SGD steps and upload the
displacement delta = w_0 - w_Q. The server sums incoming deltas in arrival
order and, once K of them are buffered, applies w <- w - beta * sum in a
single atomic flush. Neither side knows about time; the simulator and the
baselines drive both.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Tuple

import numpy as np

from fedbuff_validator.config import HyperParams, Schedule
from fedbuff_validator.exceptions import ContractError, NonFiniteError
from fedbuff_validator.objectives import GradientOracle, ParamVector, check_param_vector

logger = logging.getLogger(__name__)


def _frozen_copy(values: np.ndarray) -> ParamVector:
    copy = np.array(values, dtype=np.float64, copy=True)
    copy.setflags(write=False)
    return copy


@dataclass(frozen=True)
class ClientState:
    """A client's round in progress: the downloaded snapshot and the current local iterate."""
    client_id: int
    snapshot: ParamVector
    local_iterate: ParamVector
    local_step_q: int
    download_step: int


@dataclass(frozen=True)
class ClientUpdate:
    """The displacement a client uploads, tagged with the server step of its snapshot."""
    client_id: int
    delta: ParamVector
    download_step: int


@dataclass(frozen=True)
class ServerState:
    """Server model plus the buffer of deltas received since the last flush."""
    model: ParamVector
    accumulator: ParamVector
    buffer_fill_k: int = 0
    server_step_t: int = 0
    contributors: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)


def client_begin_round(client_id: int, server_model: ParamVector, server_step: int) -> ClientState:
    """Start a round from the server model read at server_step."""
    if not np.all(np.isfinite(server_model)):
        raise NonFiniteError(
            "Non-finite server model",
            f"client {client_id} downloaded a model with NaN or Inf at server step {server_step}",
        )
    snapshot = _frozen_copy(server_model)
    return ClientState(
        client_id=client_id,
        snapshot=snapshot,
        local_iterate=snapshot,
        local_step_q=0,
        download_step=server_step,
    )


def client_local_step(
    state: ClientState,
    hp: HyperParams,
    grad_oracle: GradientOracle,
    rng_stream: np.random.Generator,
) -> ClientState:
    """One local SGD step: w_{q+1} = w_q - eta * g(w_q) with a fresh batch.

    Args:
        state: Current client state
        hp: Hyperparameters with a concrete eta
        grad_oracle: Batch gradient oracle of this client
        rng_stream: The client's random stream for this round

    Returns:
        The advanced client state
    """
    if state.local_step_q >= hp.Q:
        raise ContractError(
            "Local steps exhausted",
            f"client {state.client_id} already took Q={hp.Q} local steps this round",
        )
    if hp.eta is None:
        raise ContractError("Unresolved stepsize", "client_local_step needs a concrete eta")

    gradient = grad_oracle(state.local_iterate, rng_stream)
    iterate = state.local_iterate - hp.eta * gradient
    if not np.all(np.isfinite(iterate)):
        raise NonFiniteError(
            "Non-finite local iterate",
            f"client {state.client_id} diverged at local step {state.local_step_q + 1} "
            f"of the round downloaded at server step {state.download_step}",
        )
    return replace(state, local_iterate=_frozen_copy(iterate), local_step_q=state.local_step_q + 1)


def client_finish_round(state: ClientState, Q: int) -> ClientUpdate:
    """Close the round and produce delta = snapshot - local_iterate."""
    if state.local_step_q < Q:
        raise ContractError(
            "Premature upload",
            f"client {state.client_id} finished after {state.local_step_q} of Q={Q} local steps",
        )
    return ClientUpdate(
        client_id=state.client_id,
        delta=_frozen_copy(state.snapshot - state.local_iterate),
        download_step=state.download_step,
    )


def run_client_round(
    client_id: int,
    server_model: ParamVector,
    server_step: int,
    hp: HyperParams,
    grad_oracle: GradientOracle,
    rng_stream: np.random.Generator,
) -> ClientUpdate:
    """Download, take Q local steps, upload."""
    state = client_begin_round(client_id, server_model, server_step)
    for _ in range(hp.Q):
        state = client_local_step(state, hp, grad_oracle, rng_stream)
    return client_finish_round(state, hp.Q)


def initial_server_state(model: ParamVector) -> ServerState:
    """Server state at t = 0 with an empty buffer."""
    start = _frozen_copy(model)
    check_param_vector(start, start.shape[0], "initial model")
    return ServerState(model=start, accumulator=_frozen_copy(np.zeros_like(start)))


def _check_update(state: ServerState, update: ClientUpdate) -> None:
    if update.delta.shape != state.model.shape:
        raise ContractError(
            "Dimension mismatch",
            f"update from client {update.client_id} has shape {update.delta.shape}, "
            f"server model has {state.model.shape}",
        )
    if not np.all(np.isfinite(update.delta)):
        raise NonFiniteError(
            "Non-finite update",
            f"update from client {update.client_id} (downloaded at step {update.download_step}) "
            f"contains NaN or Inf at server step {state.server_step_t}",
        )


def _apply(state: ServerState, step: ParamVector, beta: float) -> ParamVector:
    model = state.model - beta * step
    if not np.all(np.isfinite(model)):
        raise NonFiniteError(
            "Non-finite server model",
            f"server model diverged while flushing step {state.server_step_t}",
        )
    return _frozen_copy(model)


def server_receive(state: ServerState, update: ClientUpdate, hp: HyperParams) -> Tuple[ServerState, bool]:
    """Add an update to the buffer; flush when it holds K updates.

    Args:
        state: Current server state
        update: Incoming client update
        hp: Hyperparameters with a concrete beta

    Returns:
        Tuple of (new server state, whether this receive flushed)
    """
    _check_update(state, update)
    if hp.beta is None:
        raise ContractError("Unresolved stepsize", "server_receive needs a concrete beta")

    accumulator = state.accumulator + update.delta
    fill = state.buffer_fill_k + 1
    contributors = state.contributors + ((update.client_id, update.download_step),)

    if fill < hp.K:
        return replace(state, accumulator=_frozen_copy(accumulator), buffer_fill_k=fill, contributors=contributors), False

    model = _apply(state, accumulator, hp.beta)
    logger.debug(f"Flush at server step {state.server_step_t} with contributors {list(contributors)}")
    return (
        ServerState(
            model=model,
            accumulator=_frozen_copy(np.zeros_like(model)),
            buffer_fill_k=0,
            server_step_t=state.server_step_t + 1,
            contributors=(),
        ),
        True,
    )


def server_apply_immediately(state: ServerState, update: ClientUpdate, hp: HyperParams) -> Tuple[ServerState, bool]:
    """Unbuffered server: w <- w - beta * delta on every upload."""
    _check_update(state, update)
    if hp.beta is None:
        raise ContractError("Unresolved stepsize", "server_apply_immediately needs a concrete beta")
    model = _apply(state, update.delta, hp.beta)
    return replace(state, model=model, server_step_t=state.server_step_t + 1), True


ServerAggregator = Callable[[ServerState, ClientUpdate, HyperParams], Tuple[ServerState, bool]]


def warn_on_server_scaling(hp: HyperParams) -> None:
    """Log a warning when beta * K exceeds 1 under a manual schedule."""
    if hp.schedule == Schedule.MANUAL and hp.beta is not None and hp.beta * hp.K > 1.0:
        logger.warning(
            f"Server stepsize beta={hp.beta} with K={hp.K} gives beta*K={hp.beta * hp.K} > 1; "
            "the convergence guarantee assumes beta*K of order 1"
        )
