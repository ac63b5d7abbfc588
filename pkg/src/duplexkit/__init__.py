"""Full-duplex dialogue orchestration engine and evaluation harness.

A two-state turn-taking state machine driven by inline control tokens on a
serialized token tape, simulated streaming perception and voicing
backends, a deterministic discrete-event latency simulator with four
pipeline configurations, the interruption-quality metric suite with judge
prompt tooling, a command-line harness, and a live session gateway.
"""

__version__ = "0.1.0"

from .fsm import (
    ControlToken,
    FsmState,
    InvalidTransition,
    apply_control,
    parse_control,
    render_control,
    valid_controls,
)
from .tape import (
    CausalityViolation,
    current_state,
    EngineEvent,
    EntrySource,
    EventKind,
    Tape,
    TapeEntry,
    dump_tape,
    load_tape,
    next_trigger,
    render_stream,
    render_view,
)
from .engine import (
    Engine,
    EngineConfig,
    InterruptionKind,
    SessionTimeout,
    SessionTranscript,
    classify_interruption,
    run_session,
)
from .simulator import (
    BenchmarkReport,
    EmptySample,
    LatencyStats,
    PipelineConfig,
    PipelineId,
    SimRecord,
    SimulationParams,
    aggregate,
    default_params,
    expected_fted,
    load_params,
    run_benchmark,
    simulate,
)
from .metrics import (
    EmptyCategory,
    JudgeParseError,
    MetricsReport,
    MissingAnnotation,
    UnjudgedMid,
    build_report,
    judge_records,
    machine_interrupt_metrics,
    parse_judge_output,
    precision_of,
    recall_of,
    render_judge_prompt,
    rule_judge,
    user_interrupt_metrics,
)

__all__ = [
    "__version__",
    "ControlToken",
    "FsmState",
    "InvalidTransition",
    "apply_control",
    "parse_control",
    "render_control",
    "valid_controls",
    "CausalityViolation",
    "EngineEvent",
    "EntrySource",
    "EventKind",
    "Tape",
    "TapeEntry",
    "dump_tape",
    "load_tape",
    "current_state",
    "next_trigger",
    "render_stream",
    "render_view",
    "Engine",
    "EngineConfig",
    "InterruptionKind",
    "SessionTimeout",
    "SessionTranscript",
    "classify_interruption",
    "run_session",
    "BenchmarkReport",
    "EmptySample",
    "LatencyStats",
    "PipelineConfig",
    "PipelineId",
    "SimRecord",
    "SimulationParams",
    "aggregate",
    "default_params",
    "expected_fted",
    "load_params",
    "run_benchmark",
    "simulate",
    "EmptyCategory",
    "JudgeParseError",
    "MetricsReport",
    "MissingAnnotation",
    "UnjudgedMid",
    "build_report",
    "judge_records",
    "machine_interrupt_metrics",
    "parse_judge_output",
    "precision_of",
    "recall_of",
    "render_judge_prompt",
    "rule_judge",
    "user_interrupt_metrics",
]
