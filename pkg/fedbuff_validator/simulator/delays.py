"""
Per-leg delay sampling.
"""

from typing import Tuple

from fedbuff_validator.config import DelayKind, DelayModel
from fedbuff_validator.utils.helpers import delay_stream


def sample_round_delays(model: DelayModel, seed: int, client_id: int, round_index: int) -> Tuple[float, float]:
    """Draw the (download, upload) delays of one client round.

    Both legs come from the round's own stream, download first, so a
    client's delays do not depend on how other clients were scheduled.

    Args:
        model: Delay distribution
        seed: Run seed
        client_id: Client index
        round_index: The client's round counter

    Returns:
        Tuple of (download delay, upload delay)
    """
    if model.kind == DelayKind.DETERMINISTIC:
        return model.constants_for(client_id)

    rng = delay_stream(seed, client_id, round_index)
    if model.kind == DelayKind.UNIFORM_INT:
        down, up = rng.integers(model.lo, model.hi + 1, size=2)
        return float(down), float(up)

    # numpy's geometric counts trials, so shift to failures before the cap
    down, up = rng.geometric(model.p, size=2) - 1
    return float(min(down, model.cap)), float(min(up, model.cap))
