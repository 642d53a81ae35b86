from .model import WorkflowModel
from .parser import ParseError, parse_workflow, render_workflow
from .planner import PlanError, plan_workflow
from .typesystem import Diagnostic, ResolutionError, builtin_style, resolve_types, validate

__all__ = [
    "Diagnostic",
    "ParseError",
    "PlanError",
    "ResolutionError",
    "WorkflowModel",
    "builtin_style",
    "parse_workflow",
    "plan_workflow",
    "render_workflow",
    "resolve_types",
    "validate",
]
