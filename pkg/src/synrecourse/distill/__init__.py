from .program import (
    INTERVENE,
    AutomatonNode,
    ExplainableProgram,
    ProgramRun,
    Rule,
    build_automaton,
    extract_rule,
    run_program,
    sequence_similarity,
    train_program,
)
from .sampling import InsufficientTracesError, ProgramDistiller, sample_traces
from .tree import BitDecisionTree

__all__ = [
    "INTERVENE",
    "AutomatonNode",
    "BitDecisionTree",
    "ExplainableProgram",
    "InsufficientTracesError",
    "ProgramDistiller",
    "ProgramRun",
    "Rule",
    "build_automaton",
    "extract_rule",
    "run_program",
    "sample_traces",
    "sequence_similarity",
    "train_program",
]
