from .base import (
    BLEND_W,
    FALLBACK_SCORE,
    N_CONFIRM,
    TAU_DET,
    BackendUnavailable,
    ConfirmationState,
    Detection,
    Detector,
    FrontierScores,
    GoalQuery,
    Scorer,
    ScoreRequest,
    best_index,
    blend_utility,
    confirm,
    safe_detect,
    safe_score,
)
from .external import ExternalDetector, ExternalScorer, ProtocolError
from .oracle import AdversarialScorer, OracleDetector, OracleScorer, UniformScorer

__all__ = [
    "BLEND_W", "FALLBACK_SCORE", "N_CONFIRM", "TAU_DET",
    "BackendUnavailable", "ConfirmationState", "Detection", "Detector", "FrontierScores", "GoalQuery",
    "Scorer", "ScoreRequest", "best_index", "blend_utility", "confirm", "safe_detect", "safe_score",
    "ExternalDetector", "ExternalScorer", "ProtocolError",
    "AdversarialScorer", "OracleDetector", "OracleScorer", "UniformScorer",
]
