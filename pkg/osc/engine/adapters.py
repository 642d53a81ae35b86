import logging
import os
import signal
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional

from ..types import FaultEntry, FaultScript, PlanNode

logger = logging.getLogger(__name__)

LAUNCH_FAILURE = 127


def artifact_bytes(path: Optional[str]) -> bytes:
    """File contents, or the files of a directory concatenated in name order."""
    if path is None or not os.path.exists(path):
        return b""
    if os.path.isfile(path):
        with open(path, "rb") as f:
            return f.read()
    chunks = []
    for root, dirs, files in os.walk(path):
        dirs.sort(key=os.fsencode)
        for name in sorted(files, key=os.fsencode):
            with open(os.path.join(root, name), "rb") as f:
                chunks.append(f.read())
    return b"".join(chunks)


@dataclass
class AttemptContext:
    node: PlanNode
    attempt: int
    inputs: Dict[str, Optional[str]]
    out_dir: str
    attempt_dir: str
    workdir: str
    replica: Optional[int] = None

    def output_path(self, port: str) -> str:
        return os.path.join(self.out_dir, port)

    @property
    def log_path(self) -> str:
        return os.path.join(self.attempt_dir, "log.txt")


@dataclass
class AttemptResult:
    exit_code: Optional[int]
    log_text: str = ""
    duration: float = 0.0
    timed_out: bool = False


class Adapter(ABC):
    kind = "adapter"

    @abstractmethod
    def run(self, ctx: AttemptContext) -> AttemptResult:
        ...

    def transfer_fault(self, node: PlanNode, attempt: int) -> Optional[str]:
        """Reason a connector transfer attempt fails, if it is scripted to."""
        return None


class SimulatedAdapter(Adapter):
    """Runs nothing: outcomes come from a fault script, outputs are synthesized."""

    kind = "simulated"

    def __init__(self, faults: Optional[FaultScript] = None, clock: str = "logical"):
        self.faults = faults or FaultScript()
        self.clock = clock

    def keys(self, node: PlanNode, attempt: int, replica: Optional[int]) -> List[str]:
        bases = [f"{node.path}#{node.instance_index}", node.path]
        keys = []
        for base in bases:
            if replica is not None:
                keys += [f"{base}~{replica}@{attempt}", f"{base}~{replica}"]
            keys += [f"{base}@{attempt}", base]
        return keys

    def lookup(self, node: PlanNode, attempt: int, replica: Optional[int] = None) -> FaultEntry:
        for key in self.keys(node, attempt, replica):
            entry = self.faults.entries.get(key)
            if entry is None:
                continue
            if isinstance(entry, list):
                if not entry:
                    continue
                # the last entry repeats for later attempts
                return entry[min(attempt, len(entry)) - 1]
            return entry
        return FaultEntry()

    def run(self, ctx: AttemptContext) -> AttemptResult:
        entry = self.lookup(ctx.node, ctx.attempt, ctx.replica)
        timeout = ctx.node.config.timeout
        # without MonitoramentoDeTempo nothing interrupts the attempt
        timed_out = timeout is not None and (entry.outcome == "timeout" or entry.delay > timeout)
        # a timed-out attempt is killed at the limit
        duration = timeout if timed_out else entry.delay
        if self.clock == "wall":
            time.sleep(duration)

        with open(ctx.log_path, "w", encoding="utf-8") as f:
            f.write(entry.log_text)
        if timed_out:
            return AttemptResult(exit_code=None, log_text=entry.log_text, duration=duration, timed_out=True)

        exit_code = entry.exit_code if entry.exit_code is not None else (0 if entry.outcome == "ok" else 1)
        payload = b"".join(artifact_bytes(ctx.inputs[name]) for name in ctx.inputs)
        for port in ctx.node.outputs:
            if port in entry.outputs:
                data = entry.outputs[port].encode("utf-8")
            else:
                data = f"{ctx.node.id}:{port}\n".encode("utf-8") + payload
            with open(ctx.output_path(port), "wb") as f:
                f.write(data)
        return AttemptResult(exit_code=exit_code, log_text=entry.log_text, duration=duration)

    def transfer_fault(self, node: PlanNode, attempt: int) -> Optional[str]:
        entry = self.lookup(node, attempt)
        if entry.outcome == "ok":
            return None
        return "timeout" if entry.outcome == "timeout" else "transfer_failure"


def render_command(ctx: AttemptContext) -> str:
    node = ctx.node
    return node.config.command.format(
        **node.config.params,
        input={port: path or "" for port, path in ctx.inputs.items()},
        output={port: ctx.output_path(port) for port in node.outputs},
        instance=node.id,
        workdir=ctx.workdir,
    )


class ShellAdapter(Adapter):
    """Runs `comando` through the shell; stdout and stderr go to the attempt's log.txt."""

    kind = "shell"

    def run(self, ctx: AttemptContext) -> AttemptResult:
        if not ctx.node.config.command:
            message = f"{ctx.node.path} has no comando\n"
            with open(ctx.log_path, "w", encoding="utf-8") as f:
                f.write(message)
            return AttemptResult(exit_code=LAUNCH_FAILURE, log_text=message)

        command = render_command(ctx)
        logger.debug("%s attempt %d: %s", ctx.node.id, ctx.attempt, command)
        timeout = ctx.node.config.timeout
        start = time.monotonic()
        timed_out = False
        with open(ctx.log_path, "wb") as log:
            try:
                proc = subprocess.Popen(
                    command,
                    shell=True,
                    cwd=ctx.attempt_dir,
                    stdin=subprocess.DEVNULL,
                    stdout=log,
                    stderr=subprocess.STDOUT,
                    start_new_session=True,
                )
            except OSError as e:
                log.write(f"launch failed: {e}\n".encode("utf-8"))
                exit_code = LAUNCH_FAILURE
            else:
                try:
                    exit_code = proc.wait(timeout=timeout)
                except subprocess.TimeoutExpired:
                    # the whole process group, so shell children die too
                    try:
                        os.killpg(proc.pid, signal.SIGKILL)
                    except ProcessLookupError:
                        pass
                    proc.wait()
                    exit_code = None
                    timed_out = True
        with open(ctx.log_path, "r", encoding="utf-8", errors="replace") as f:
            log_text = f.read()
        return AttemptResult(
            exit_code=exit_code,
            log_text=log_text,
            duration=time.monotonic() - start,
            timed_out=timed_out,
        )


def make_adapter(config) -> Adapter:
    if config.adapter == "shell":
        return ShellAdapter()
    return SimulatedAdapter(config.faults, config.clock)
