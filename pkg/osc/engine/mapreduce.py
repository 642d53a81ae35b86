"""Local map / shuffle / reduce over line-oriented data.

A step is either a callable taking the input bytes and returning the output
bytes, or a shell command reading stdin and writing stdout. Map output lines
are `key<TAB>value`; the shuffle sorts by key bytes (stable, so the values of
one key keep their emission order) and the reducer sees each key's lines once.
"""

import itertools
import logging
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from operator import itemgetter
from typing import Callable, List, Optional, Tuple, Union

from .adapters import LAUNCH_FAILURE, Adapter, AttemptContext, AttemptResult, artifact_bytes
from .tasks import TaskContext, TaskOutcome, execute_task

logger = logging.getLogger(__name__)

Step = Union[str, Callable[[bytes], bytes]]


class MapReduceError(RuntimeError):
    def __init__(self, message: str, timed_out: bool = False):
        super().__init__(message)
        self.timed_out = timed_out


def split_lines(data: bytes, lines_per_split: int) -> List[bytes]:
    lines = data.splitlines(keepends=True)
    return [b"".join(lines[i : i + lines_per_split]) for i in range(0, len(lines), lines_per_split)]


def run_step(step: Step, data: bytes, deadline: Optional[float] = None, log: Optional[List[bytes]] = None) -> bytes:
    if callable(step):
        try:
            return step(data)
        except Exception as e:
            raise MapReduceError(f"step {getattr(step, '__name__', step)!r} raised {e!r}") from e
    timeout = None
    if deadline is not None:
        timeout = max(deadline - time.monotonic(), 0.0)
    try:
        proc = subprocess.run(step, shell=True, input=data, capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise MapReduceError(f"step {step!r} timed out", timed_out=True)
    if log is not None and proc.stderr:
        log.append(proc.stderr)
    if proc.returncode != 0:
        raise MapReduceError(f"step {step!r} exited with {proc.returncode}")
    return proc.stdout


def parse_pairs(output: bytes) -> List[Tuple[bytes, bytes]]:
    pairs = []
    for line in output.splitlines():
        if not line:
            continue
        key, tab, value = line.partition(b"\t")
        if not tab:
            raise MapReduceError(f"malformed map output line {line[:80]!r}")
        pairs.append((key, value))
    return pairs


def shuffle(pairs: List[Tuple[bytes, bytes]]) -> List[Tuple[bytes, List[bytes]]]:
    ordered = sorted(pairs, key=itemgetter(0))
    return [(key, [v for _, v in group]) for key, group in itertools.groupby(ordered, key=itemgetter(0))]


def map_reduce(
    data: bytes,
    mapper: Step,
    reducer: Step,
    lines_per_split: int = 64,
    workers: int = 1,
    deadline: Optional[float] = None,
    log: Optional[List[bytes]] = None,
) -> bytes:
    splits = split_lines(data, lines_per_split)
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        mapped = list(pool.map(lambda s: run_step(mapper, s, deadline, log), splits))
    pairs = [pair for output in mapped for pair in parse_pairs(output)]
    groups = shuffle(pairs)
    logger.debug("map produced %d pairs over %d keys from %d splits", len(pairs), len(groups), len(splits))
    chunks = []
    for key, values in groups:
        stdin = b"".join(key + b"\t" + value + b"\n" for value in values)
        chunks.append(run_step(reducer, stdin, deadline, log))
    return b"".join(chunks)


class MapReduceAdapter(Adapter):
    """Runs a MapReduce node's steps in-process; one attempt is one full job."""

    kind = "mapreduce"

    def __init__(self, mapper: Optional[Step], reducer: Optional[Step], lines_per_split: int, workers: int = 1):
        self.mapper = mapper
        self.reducer = reducer
        self.lines_per_split = lines_per_split
        self.workers = workers

    def run(self, ctx: AttemptContext) -> AttemptResult:
        node = ctx.node
        if self.mapper is None or self.reducer is None:
            message = f"{node.path}: map and reduce steps need a comando\n"
            with open(ctx.log_path, "w", encoding="utf-8") as f:
                f.write(message)
            return AttemptResult(exit_code=LAUNCH_FAILURE, log_text=message)
        start = time.monotonic()
        deadline = start + node.config.timeout if node.config.timeout is not None else None
        data = b"".join(artifact_bytes(path) for path in ctx.inputs.values())
        log: List[bytes] = []
        exit_code, timed_out = 0, False
        try:
            result = map_reduce(data, self.mapper, self.reducer, self.lines_per_split, self.workers, deadline, log)
        except MapReduceError as e:
            log.append(f"{e}\n".encode("utf-8"))
            exit_code, timed_out = (None, True) if e.timed_out else (1, False)
        else:
            if node.outputs:
                with open(ctx.output_path(node.outputs[0]), "wb") as f:
                    f.write(result)
        log_text = b"".join(log).decode("utf-8", errors="replace")
        with open(ctx.log_path, "w", encoding="utf-8") as f:
            f.write(log_text)
        return AttemptResult(
            exit_code=exit_code, log_text=log_text, duration=time.monotonic() - start, timed_out=timed_out
        )


def run_mapreduce(node, ctx: TaskContext, mapper: Optional[Step] = None, reducer: Optional[Step] = None) -> TaskOutcome:
    """Execute a MapReduce node with the retry and detection rules of any task.

    Steps default to the `comando` of the body's `map` and `reduce` tasks.
    """
    mapper = mapper if mapper is not None else node.config.map_command
    reducer = reducer if reducer is not None else node.config.reduce_command
    adapter = MapReduceAdapter(mapper, reducer, ctx.config.mapreduce_split_lines, ctx.config.jobs)
    return execute_task(
        node,
        TaskContext(adapter=adapter, config=ctx.config, inputs=ctx.inputs, node_dir=ctx.node_dir),
    )
