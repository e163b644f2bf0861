"""
Staleness bookkeeping and the bounded-staleness check.
"""

import logging
import math
from typing import Optional

from fedbuff_validator.config import DelayModel, StalenessPolicy
from fedbuff_validator.exceptions import StalenessViolation
from fedbuff_validator.result_model import StalenessAudit, StalenessRecord

logger = logging.getLogger(__name__)


def enforce_staleness(
    audit: StalenessAudit,
    record: StalenessRecord,
    tau_max: int,
    policy: StalenessPolicy = StalenessPolicy.ENFORCE,
) -> bool:
    """Record an applied upload and check it against tau_max.

    Args:
        audit: The run's audit, updated in place
        record: The upload being applied
        tau_max: Configured staleness bound
        policy: Enforce aborts on a violation, Observe logs and continues

    Returns:
        True if the record is within the bound

    Raises:
        StalenessViolation: on a violation under the Enforce policy
    """
    audit.add(record)
    if record.staleness <= tau_max:
        return True

    if policy == StalenessPolicy.ENFORCE:
        raise StalenessViolation(record.client_id, record.download_step, record.apply_step, tau_max)
    logger.warning(
        f"Client {record.client_id}: staleness {record.staleness} exceeds tau_max={tau_max} "
        f"(downloaded at step {record.download_step}, applied at step {record.apply_step})"
    )
    return False


def derive_staleness_bound(delay_model: DelayModel, n: int, K: int) -> Optional[int]:
    """Worst-case staleness implied by the delay caps of the event-driven scheduler.

    A snapshot taken at download completion is applied at most Ucap later.
    Every other client needs at least Cmin = Dmin + Umin between uploads, so
    at most (n - 1) * (floor(Ucap / Cmin) + 1) foreign uploads land in that
    window, on top of at most K - 1 already buffered.

    Returns:
        The bound, or None when Cmin is 0 and other clients can upload without limit
    """
    if n == 1:
        return 0
    dmin, _, umin, ucap = delay_model.leg_bounds()
    cycle = dmin + umin
    if cycle <= 0:
        return None
    foreign = (n - 1) * (math.floor(ucap / cycle) + 1)
    return (K - 1 + foreign) // K


def check_staleness_config(delay_model: DelayModel, n: int, K: int, tau_max: int, policy: StalenessPolicy) -> None:
    """Warn when the delay caps do not guarantee staleness <= tau_max under Enforce."""
    if policy != StalenessPolicy.ENFORCE:
        return
    bound = derive_staleness_bound(delay_model, n, K)
    if bound is None:
        logger.warning(
            f"Delay model {delay_model.kind.value} allows zero-length client cycles; staleness is not "
            f"bounded a priori and runs may abort against tau_max={tau_max}"
        )
    elif bound > tau_max:
        logger.warning(
            f"Delay caps allow staleness up to {bound} > tau_max={tau_max}; "
            "the run aborts on the first violation"
        )
