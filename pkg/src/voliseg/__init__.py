"""Interactive 3D volumetric segmentation with memory-based propagation.

Clicks on one slice become a prompt mask, the prompt propagates through
the whole volume via a three-tier feature memory, and each interaction
round is fused per slice with the previous round's result.
"""

from .config import EngineConfig, load_config
from .errors import (
    CapacityError,
    FormatError,
    NotFoundError,
    ParameterError,
    StateError,
    TruncationError,
    ValidationError,
    VolisegError,
)
from .fusion import (
    FusionResult,
    OracleQualityScorer,
    QualityNet,
    QualityScores,
    assess_quality,
    fuse,
    solve_fusion_objective,
)
from .interact import Click, Interactor, encode_clicks, segment_slice, simulate_next_click
from .memory import (
    FeatureKey,
    FeatureValue,
    LongTermMemory,
    MemoryStore,
    SensoryState,
    WorkingMemory,
    affinity,
    readout,
    similarity,
)
from .propagate import PropagationPlan, ToyPropagationModel, propagate
from .session import Engine, ModelBackend, Round, Session, UserClick, dice, evaluate
from .volume import (
    BinaryMask,
    MaskSequence,
    Volume,
    dice_score,
    load_volume,
    normalize_intensity,
    rle_decode,
    rle_encode,
    save_volume,
)

__version__ = "0.1.0"
