from .base import (
    BackendUnavailable,
    Chunk,
    DEFAULT_CHUNK_PERIOD_MS,
    EnqueueWhileListening,
    MotorMode,
    MotorTimingModel,
    OutputKind,
    PerceptionMode,
    PerceptionTimingModel,
    Predictor,
    PredictorOutput,
    ScriptExhausted,
    VoicedReport,
)
from .remote import CompletionClient, RemotePredictor, remote_judge_factory
from .scripted import (
    DuplexPolicyPredictor,
    PlainPredictor,
    PolicyScript,
    SimulatedMotor,
    SimulatedPerception,
    TablePredictor,
    UserScript,
    Utterance,
    UtteranceRecord,
    VoiceSpan,
)

__all__ = [
    "BackendUnavailable",
    "Chunk",
    "DEFAULT_CHUNK_PERIOD_MS",
    "EnqueueWhileListening",
    "MotorMode",
    "MotorTimingModel",
    "OutputKind",
    "PerceptionMode",
    "PerceptionTimingModel",
    "Predictor",
    "PredictorOutput",
    "ScriptExhausted",
    "VoicedReport",
    "CompletionClient",
    "RemotePredictor",
    "remote_judge_factory",
    "DuplexPolicyPredictor",
    "PlainPredictor",
    "PolicyScript",
    "SimulatedMotor",
    "SimulatedPerception",
    "TablePredictor",
    "UserScript",
    "Utterance",
    "UtteranceRecord",
    "VoiceSpan",
]
