import json
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field
from typing_extensions import Literal, TypedDict

NodeKind = Literal["task", "connector", "join", "mapreduce"]
PayloadKind = Literal["data", "control"]
JoinFormat = Literal["include", "merge", "concat"]
Status = Literal["Success", "Failed", "Ignored", "NotRun"]
FailureReason = Literal["log_match", "timeout", "nonzero_exit", "no_majority", "transfer_failure"]


def dump_json(model: BaseModel) -> str:
    """Byte-stable JSON: sorted keys, two-space indent, trailing newline."""
    payload = model.model_dump(mode="json", by_alias=True)
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# planning


class SweepItem(BaseModel):
    kind: Literal["file", "value", "repetition"]
    value: Union[int, str] = Field(description="File path, literal value or repetition slot.")
    position: int = Field(ge=0, description="Position of the item in its dataset.")


class SweepBinding(BaseModel):
    port: str
    kind: Literal["directory", "values", "repetition"]
    source: Optional[str] = Field(default=None, description="Directory a file dataset was read from.")
    items: List[SweepItem] = Field(default=[])


class InstanceAssignment(BaseModel):
    instance_index: int = Field(ge=0)
    items: Dict[str, SweepItem] = Field(default={}, description="Bifurcacao port -> item of this instance.")


class SweepExpansion(BaseModel):
    flow: str = Field(description="Dotted path of the parameter-sweep flow.")
    modo: Literal["sequencial", "paralelo"] = "paralelo"
    bindings: List[SweepBinding] = Field(default=[])
    instances: List[InstanceAssignment] = Field(default=[])

    def size(self) -> int:
        return len(self.instances)


class NodeInput(BaseModel):
    port: str = Field(description="Input port (tasks) or source role (connectors).")
    kind: Literal["node", "item", "control"]
    node: Optional[str] = Field(default=None, description="Producer node, or the sweep flow for items.")
    node_port: Optional[str] = Field(default=None, description="Producer port, or the Bifurcacao port for items.")
    item: Optional[SweepItem] = None


class NodeConfig(BaseModel):
    retries: Optional[int] = Field(
        default=None, description="num_tentativas when RedundanciaTemporal is present."
    )
    ignorar: bool = False
    timeout: Optional[float] = Field(default=None, description="tempo_limite in seconds.")
    log_patterns: Optional[List[str]] = Field(default=None, description="Regexes scanned when Log is present.")
    copies: Optional[int] = Field(default=None, description="num_copias when Mascaramento is present.")
    propagation: bool = False
    command: Optional[str] = Field(default=None, description="comando template for the shell adapter.")
    params: Dict[str, Any] = Field(default={}, description="Effective properties available to the template.")
    map_command: Optional[str] = None
    reduce_command: Optional[str] = None
    formato: Optional[JoinFormat] = None
    destino: Optional[str] = None
    group: Optional[str] = Field(default=None, description="Sequential sweep scope; at most one node in flight.")


class ScopeRef(BaseModel):
    flow: str
    index: int = Field(ge=0)


class PlanNode(BaseModel):
    id: str
    path: str
    kind: NodeKind
    instance_index: int = Field(default=0, ge=0)
    scopes: List[ScopeRef] = Field(default=[], description="Enclosing sweep instances, outermost first.")
    flows: List[str] = Field(default=[], description="Enclosing flow instances (`path#index`), outermost first.")
    inputs: List[NodeInput] = Field(default=[])
    outputs: List[str] = Field(default=[], description="Data output ports or destination roles.")
    config: NodeConfig = Field(default_factory=NodeConfig)
    versions: List[str] = Field(default=[])
    port_versions: Dict[str, List[str]] = Field(default={})
    exports: Dict[str, List[str]] = Field(
        default={}, description="Port -> flow instances whose output port this artifact is."
    )


class PlanEdge(BaseModel):
    producer: str
    consumer: str
    kind: PayloadKind = "data"
    producer_port: Optional[str] = None
    consumer_port: Optional[str] = None


class FlowInfo(BaseModel):
    path: str
    sweep: bool = False
    versions: List[str] = Field(default=[], description="OPM versions of the flow itself.")
    alta: List[str] = Field(default=[], description="Versions where the flow keeps its internals.")
    baixa: List[str] = Field(default=[], description="Versions where the flow collapses to one process.")


class ExecutionPlan(BaseModel):
    workflow: str
    nodes: List[PlanNode] = Field(default=[])
    edges: List[PlanEdge] = Field(default=[])
    order: List[str] = Field(default=[], description="Topological order of node ids.")
    expansions: List[SweepExpansion] = Field(default=[])
    flows: List[FlowInfo] = Field(default=[])
    versions: List[str] = Field(default=[], description="Every OPM version declared in the model.")

    def node_map(self) -> Dict[str, PlanNode]:
        return {node.id: node for node in self.nodes}


class JoinPart(BaseModel):
    instance_index: int = Field(ge=0)
    path: str


class JoinManifest(BaseModel):
    port: str
    formato: JoinFormat = "concat"
    parts: List[JoinPart] = Field(default=[])
    destino: str


# execution


class FaultEntry(BaseModel):
    outcome: Literal["ok", "fail", "timeout"] = "ok"
    exit_code: Optional[int] = Field(default=None, description="Defaults to 0 for ok and 1 otherwise.")
    log_text: str = ""
    delay: float = Field(default=0.0, ge=0.0, description="Simulated duration in seconds.")
    outputs: Dict[str, str] = Field(default={}, description="Output port -> text written by the attempt.")


class FaultScript(BaseModel):
    entries: Dict[str, Union[FaultEntry, List[FaultEntry]]] = Field(
        default={},
        description="Key `path[#index][~replica][@attempt]` -> entry, or one entry per attempt.",
    )


class AttemptRecord(BaseModel):
    attempt_index: int = Field(ge=1)
    replica: Optional[int] = None
    reason: Optional[FailureReason] = Field(default=None, description="None when the attempt succeeded.")
    exit_code: Optional[int] = None
    duration: float = 0.0
    log_excerpt: str = ""


class FailureSignal(BaseModel):
    origin: str
    attempt_count: int = Field(ge=1)
    reason: FailureReason


class NodeRecord(BaseModel):
    node: str
    kind: NodeKind
    instance_index: int = 0
    status: Status
    attempts: List[AttemptRecord] = Field(default=[])
    outputs: Dict[str, str] = Field(default={}, description="Port -> artifact path, present iff Success.")
    signal: Optional[FailureSignal] = None
    delivered_from: Optional[str] = Field(default=None, description="Source role a connector delivered.")
    started: Optional[int] = None
    finished: Optional[int] = None


class JoinResult(BaseModel):
    node: str
    port: str
    formato: JoinFormat
    parts: List[int] = Field(default=[])
    artifact: str


class RunReport(BaseModel):
    workflow: str
    adapter: str
    status: Literal["Success", "Failed"]
    nodes: List[NodeRecord] = Field(default=[])
    joins: List[JoinResult] = Field(default=[])

    def record(self, node_id: str) -> NodeRecord:
        for rec in self.nodes:
            if rec.node == node_id:
                return rec
        raise KeyError(node_id)

    def without_timestamps(self) -> Dict[str, Any]:
        payload = self.model_dump(mode="json")
        for rec in payload["nodes"]:
            rec.pop("started", None)
            rec.pop("finished", None)
            for attempt in rec["attempts"]:
                attempt.pop("duration", None)
        return payload


# provenance


class ArtifactValue(TypedDict):
    path: str
    sha256: str
    size: int


class ProvenanceEvent(BaseModel):
    kind: Literal["process_start", "process_end", "artifact_created", "data_used", "triggered"]
    subject: str = Field(description="Process or artifact id the event is about.")
    time: int = Field(default=0, ge=0, description="Logical time, stamped by the recorder at ingestion.")
    versions: List[str] = Field(default=[])
    process: Optional[str] = None
    artifact: Optional[str] = None
    role: Optional[str] = None
    value: Optional[ArtifactValue] = None
    status: Optional[Status] = None
    attempts: Optional[int] = None
    derived_from: List[str] = Field(default=[])
    flows: List[str] = Field(default=[], description="Enclosing flow instances, outermost first.")
    exports: List[str] = Field(default=[], description="Flow instances that publish the artifact as an output.")


class ProvenanceLog(BaseModel):
    workflow: str
    agent: str = Field(description="Adapter kind that ran the workflow.")
    declared_versions: List[str] = Field(default=[])
    flows: List[FlowInfo] = Field(default=[])
    events: List[ProvenanceEvent] = Field(default=[])


class OPMArtifact(BaseModel):
    id: str
    value: Optional[ArtifactValue] = None


class OPMProcess(BaseModel):
    id: str
    label: str
    start: Optional[int] = None
    end: Optional[int] = None
    status: Optional[Status] = None
    attempts: Optional[int] = None


class OPMAgent(BaseModel):
    id: str
    label: str


class OPMEdge(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    kind: Literal["used", "wasGeneratedBy", "wasTriggeredBy", "wasControlledBy", "wasDerivedFrom"]
    source: str = Field(alias="from")
    target: str = Field(alias="to")
    role: Optional[str] = None


class OPMGraph(BaseModel):
    account: str
    artifacts: List[OPMArtifact] = Field(default=[])
    processes: List[OPMProcess] = Field(default=[])
    agents: List[OPMAgent] = Field(default=[])
    edges: List[OPMEdge] = Field(default=[])
