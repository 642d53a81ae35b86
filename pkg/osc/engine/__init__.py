from .config import FaultScriptError, RunConfig
from .join import apply_join
from .mapreduce import map_reduce, run_mapreduce
from .runner import run
from .tasks import execute_masked, execute_task
from .transfer import transfer

__all__ = [
    "FaultScriptError",
    "RunConfig",
    "apply_join",
    "execute_masked",
    "execute_task",
    "map_reduce",
    "run",
    "run_mapreduce",
    "transfer",
]
