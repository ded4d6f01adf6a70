"""Multi-task weak supervision label model fitted by matrix completion."""

from . import errors
from .errors import *  # noqa: F401,F403
from .graph import (
    CliqueSet,
    JunctionTree,
    OmegaMask,
    SourceGraph,
    build_junction_tree,
    build_omega,
    check_identifiability,
    chordal_complete,
)
from .labelmodel import FitConfig, LabelModel, LabelModelParams
from .solver import SignPolicy, SolverConfig
from .statistics import LabelMatrix, build_indicator_layout, estimate_moments
from .tasks import (
    ABSTAIN,
    NA,
    FeasibleSet,
    TaskGraph,
    complete_hierarchical_label,
    enumerate_feasible_set,
    flat_task,
)

__version__ = "0.1.0"

__all__ = [
    "CliqueSet",
    "JunctionTree",
    "OmegaMask",
    "SourceGraph",
    "build_junction_tree",
    "build_omega",
    "check_identifiability",
    "chordal_complete",
    "FitConfig",
    "LabelModel",
    "LabelModelParams",
    "SignPolicy",
    "SolverConfig",
    "LabelMatrix",
    "build_indicator_layout",
    "estimate_moments",
    "ABSTAIN",
    "NA",
    "FeasibleSet",
    "TaskGraph",
    "complete_hierarchical_label",
    "enumerate_feasible_set",
    "flat_task",
    *errors.__all__,
]
