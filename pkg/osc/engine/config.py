import json
import os
from typing import Optional, Union

from pydantic import ValidationError

from ..types import FaultScript

ADAPTERS = ("simulated", "shell")
CLOCKS = ("logical", "wall")


class FaultScriptError(ValueError):
    pass


def load_fault_script(source: Union[None, str, dict, FaultScript]) -> FaultScript:
    if source is None:
        return FaultScript()
    if isinstance(source, FaultScript):
        return source
    if isinstance(source, dict):
        data = source
    else:
        try:
            with open(source, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise FaultScriptError(f"cannot read fault script {source!r}: {e}")
    if not isinstance(data, dict):
        raise FaultScriptError("fault script must be a JSON object")
    try:
        return FaultScript(entries=data)
    except ValidationError as e:
        raise FaultScriptError(f"malformed fault script: {e}")


class RunConfig:
    def __init__(
        self,
        adapter="simulated",
        jobs=1,
        workdir=None,
        fault_script=None,
        clock="logical",
        retries_are_additional=False,
        mapreduce_split_lines=64,
        progress=False,
        **kwargs,
    ):
        self.adapter = adapter
        self.jobs = jobs

        if workdir is None:
            workdir = os.getenv("OSC_WORKDIR", "osc-work")

        self.workdir = workdir
        self.fault_script = fault_script
        self.clock = clock
        self.retries_are_additional = retries_are_additional
        self.mapreduce_split_lines = mapreduce_split_lines
        self.progress = progress
        self._adapter_validation()
        self._jobs_validation()
        self._clock_validation()
        self._split_validation()

        # custom fields
        self.faults = load_fault_script(fault_script)

    def attempt_budget(self, retries: Optional[int]) -> int:
        """Attempts allowed for a node: one without RedundanciaTemporal."""
        if retries is None:
            return 1
        return retries + 1 if self.retries_are_additional else retries

    def _adapter_validation(self):
        if self.adapter not in ADAPTERS:
            raise ValueError(f"`adapter` must be one of {ADAPTERS}, got {self.adapter!r}")

    def _jobs_validation(self):
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ValueError(f"`jobs` must be an integer >= 1, got {self.jobs!r}")

    def _clock_validation(self):
        if self.clock not in CLOCKS:
            raise ValueError(f"`clock` must be one of {CLOCKS}, got {self.clock!r}")

    def _split_validation(self):
        if not isinstance(self.mapreduce_split_lines, int) or self.mapreduce_split_lines < 1:
            raise ValueError(
                f"`mapreduce_split_lines` must be an integer >= 1, got {self.mapreduce_split_lines!r}"
            )
