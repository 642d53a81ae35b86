import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from ..types import AttemptRecord, FailureSignal, PlanNode
from .adapters import Adapter
from .config import RunConfig
from .tasks import copy_artifact, reset_dir

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Data:
    """A healthy source: the producer's artifact, or None for a control dependency."""

    path: Optional[str]


SourceState = Union[Data, FailureSignal]


@dataclass
class Delivery:
    status: str
    attempts: List[AttemptRecord] = field(default_factory=list)
    outputs: Dict[str, str] = field(default_factory=dict)
    signal: Optional[FailureSignal] = None
    source: Optional[str] = None


def transfer(
    node: PlanNode,
    sources: List[Tuple[str, SourceState]],
    adapter: Adapter,
    config: RunConfig,
    node_dir: str,
) -> Delivery:
    """Deliver one source to every destination role.

    `sources` is a list of (role, state) in role declaration then attachment
    order; a state is Data or the FailureSignal of a failed producer.
    """
    signals = [state for _, state in sources if isinstance(state, FailureSignal)]
    healthy = [(role, state) for role, state in sources if isinstance(state, Data)]

    if signals and not node.config.propagation:
        first = signals[0]
        logger.warning("%s received an unconsumed failure signal from %s", node.id, first.origin)
        return Delivery(status="Failed", signal=first)
    if not healthy:
        signal = FailureSignal(origin=node.id, attempt_count=1, reason="transfer_failure")
        logger.warning("%s: every source failed, nothing to deliver", node.id)
        return Delivery(status="Ignored" if node.config.ignorar else "Failed", signal=signal)
    for dropped in signals:
        logger.info("%s discarded data from %s", node.id, dropped.origin)

    role, chosen = healthy[0]
    out_dir = os.path.join(node_dir, "out")
    budget = config.attempt_budget(node.config.retries)
    attempts = []
    for attempt in range(1, budget + 1):
        reason = adapter.transfer_fault(node, attempt)
        if reason is None:
            try:
                reset_dir(out_dir)
                outputs = {}
                for destination in node.outputs:
                    outputs[destination] = os.path.join(out_dir, destination)
                    if chosen.path is None:
                        # control dependencies travel as zero-byte artifacts
                        open(outputs[destination], "wb").close()
                    else:
                        copy_artifact(chosen.path, outputs[destination])
            except OSError as e:
                logger.warning("%s transfer attempt %d: %s", node.id, attempt, e)
                reason = "transfer_failure"
        attempts.append(AttemptRecord(attempt_index=attempt, reason=reason))
        if reason is None:
            logger.info("%s delivered %s (attempt %d/%d)", node.id, role, attempt, budget)
            return Delivery(status="Success", attempts=attempts, outputs=outputs, source=role)
        logger.warning("%s transfer attempt %d/%d failed: %s", node.id, attempt, budget, reason)

    reset_dir(out_dir)
    signal = FailureSignal(origin=node.id, attempt_count=len(attempts), reason="transfer_failure")
    return Delivery(status="Ignored" if node.config.ignorar else "Failed", attempts=attempts, signal=signal)
