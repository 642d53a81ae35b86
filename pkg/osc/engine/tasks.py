import hashlib
import logging
import os
import re
import shutil
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..types import AttemptRecord, FailureSignal, PlanNode
from .adapters import Adapter, AttemptContext, AttemptResult
from .config import RunConfig

logger = logging.getLogger(__name__)

LOG_EXCERPT_CHARS = 400


@dataclass
class TaskContext:
    adapter: Adapter
    config: RunConfig
    inputs: Dict[str, Optional[str]]
    node_dir: str


@dataclass
class TaskOutcome:
    status: str
    attempts: List[AttemptRecord] = field(default_factory=list)
    outputs: Dict[str, str] = field(default_factory=dict)
    signal: Optional[FailureSignal] = None


def reset_dir(path: str):
    if os.path.isdir(path):
        shutil.rmtree(path)
    elif os.path.exists(path):
        os.remove(path)
    os.makedirs(path)


def copy_artifact(src: str, dst: str):
    if os.path.isdir(dst):
        shutil.rmtree(dst)
    if os.path.isdir(src):
        shutil.copytree(src, dst)
    else:
        shutil.copyfile(src, dst)


def detect(node: PlanNode, result: AttemptResult, out_dir: str) -> Optional[str]:
    """First detected fault of an attempt: timeout, log_match, nonzero_exit."""
    if result.timed_out:
        return "timeout"
    for pattern in node.config.log_patterns or ():
        if re.search(pattern, result.log_text):
            return "log_match"
    if result.exit_code != 0:
        return "nonzero_exit"
    # a clean exit that leaves a data output missing counts as nonzero_exit
    if any(not os.path.exists(os.path.join(out_dir, port)) for port in node.outputs):
        return "nonzero_exit"
    return None


def run_attempts(
    node: PlanNode, ctx: TaskContext, out_dir: str, replica: Optional[int] = None
) -> Tuple[Optional[str], List[AttemptRecord]]:
    """Attempt until success or the budget runs out; returns (last fault, records)."""
    budget = ctx.config.attempt_budget(node.config.retries)
    base = ctx.node_dir if replica is None else os.path.join(ctx.node_dir, f"replica-{replica}")
    records = []
    reason = None
    for attempt in range(1, budget + 1):
        reset_dir(out_dir)
        attempt_dir = os.path.join(base, f"attempt-{attempt}")
        reset_dir(attempt_dir)
        actx = AttemptContext(
            node=node,
            attempt=attempt,
            inputs=ctx.inputs,
            out_dir=out_dir,
            attempt_dir=attempt_dir,
            workdir=ctx.config.workdir,
            replica=replica,
        )
        result = ctx.adapter.run(actx)
        reason = detect(node, result, out_dir)
        records.append(
            AttemptRecord(
                attempt_index=attempt,
                replica=replica,
                reason=reason,
                exit_code=result.exit_code,
                duration=result.duration,
                log_excerpt=result.log_text[-LOG_EXCERPT_CHARS:],
            )
        )
        if reason is None:
            logger.info("%s attempt %d/%d succeeded", node.id, attempt, budget)
            return None, records
        logger.warning("%s attempt %d/%d failed: %s", node.id, attempt, budget, reason)
    # partial outputs of a failed attempt never survive
    reset_dir(out_dir)
    return reason, records


def failed_outcome(node: PlanNode, reason: str, attempts: List[AttemptRecord], attempt_count: int) -> TaskOutcome:
    status = "Ignored" if node.config.ignorar else "Failed"
    signal = FailureSignal(origin=node.id, attempt_count=max(attempt_count, 1), reason=reason)
    logger.warning("%s %s after %d attempts (%s)", node.id, status, signal.attempt_count, reason)
    return TaskOutcome(status=status, attempts=attempts, signal=signal)


def execute_task(node: PlanNode, ctx: TaskContext) -> TaskOutcome:
    if node.config.copies:
        return execute_masked(node, ctx)
    out_dir = os.path.join(ctx.node_dir, "out")
    reason, records = run_attempts(node, ctx, out_dir)
    if reason is not None:
        return failed_outcome(node, reason, records, len(records))
    return TaskOutcome(
        status="Success",
        attempts=records,
        outputs={port: os.path.join(out_dir, port) for port in node.outputs},
    )


def artifact_digest(path: str) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort(key=os.fsencode)
            for name in sorted(files, key=os.fsencode):
                full = os.path.join(root, name)
                h.update(os.fsencode(os.path.relpath(full, path)) + b"\0")
                with open(full, "rb") as f:
                    h.update(f.read())
                h.update(b"\0")
        return "dir:" + h.hexdigest()
    with open(path, "rb") as f:
        h.update(f.read())
    return "file:" + h.hexdigest()


def majority(values: Sequence[Optional[str]], copies: int) -> Optional[str]:
    """The value held by more than half of `copies` replicas; None votes for nothing."""
    counts = Counter(v for v in values if v is not None)
    for value, count in counts.items():
        if count * 2 > copies:
            return value
    return None


def vote(ports: Sequence[str], replicas: Dict[int, Optional[Dict[str, str]]], copies: int) -> Optional[Dict[str, int]]:
    """Per port, the lowest replica index holding the majority artifact; None without a majority.

    `replicas` maps replica index to port digests, or None for a failed replica.
    """
    succeeded = [r for r, digests in replicas.items() if digests is not None]
    if len(succeeded) * 2 <= copies:
        return None
    winners = {}
    for port in ports:
        digests = [replicas[r][port] if replicas[r] is not None else None for r in sorted(replicas)]
        value = majority(digests, copies)
        if value is None:
            return None
        winners[port] = min(r for r in succeeded if replicas[r][port] == value)
    return winners


def execute_masked(node: PlanNode, ctx: TaskContext) -> TaskOutcome:
    copies = node.config.copies
    results: Dict[int, Tuple[Optional[str], List[AttemptRecord]]] = {}
    with ThreadPoolExecutor(max_workers=min(copies, ctx.config.jobs)) as pool:
        futures = {
            pool.submit(run_attempts, node, ctx, replica_out(ctx, r), r): r
            for r in range(copies)
        }
        for future in as_completed(futures):
            results[futures[future]] = future.result()

    attempts = [rec for r in sorted(results) for rec in results[r][1]]
    attempt_count = max(len(results[r][1]) for r in results)
    digests = {
        r: None
        if reason is not None
        else {port: artifact_digest(os.path.join(replica_out(ctx, r), port)) for port in node.outputs}
        for r, (reason, _) in results.items()
    }
    winners = vote(node.outputs, digests, copies)
    if winners is None:
        return failed_outcome(node, "no_majority", attempts, attempt_count)

    out_dir = os.path.join(ctx.node_dir, "out")
    reset_dir(out_dir)
    outputs = {}
    for port, r in winners.items():
        outputs[port] = os.path.join(out_dir, port)
        copy_artifact(os.path.join(replica_out(ctx, r), port), outputs[port])
    logger.info("%s masked: %d replicas, majority reached", node.id, copies)
    return TaskOutcome(status="Success", attempts=attempts, outputs=outputs)


def replica_out(ctx: TaskContext, replica: int) -> str:
    return os.path.join(ctx.node_dir, f"replica-{replica}", "out")
