from .errors import (
    AmbiguityError,
    BackendError,
    InvalidRangeError,
    MisalignmentError,
    AttnEditError,
    ShapeMismatchError,
    StaleCacheError,
    StoreError,
    ValidationError,
)
from .prompts import (
    EditSpec,
    TokenizedPrompt,
    Tokenizer,
    WordSpan,
    WordTokenizer,
    align_edit_words,
    normalize_whitespace,
)
from .schedule import NoiseSchedule, build_schedule
from .store import AttentionStore
from .types import CROSS, KINDS, SPATIAL_TEMPORAL, LatentVideo, MapKey, check_attention_map

__all__ = [
    "AmbiguityError", "AttentionStore", "BackendError", "CROSS", "EditSpec", "InvalidRangeError",
    "KINDS", "LatentVideo", "MapKey", "MisalignmentError", "NoiseSchedule", "AttnEditError",
    "SPATIAL_TEMPORAL", "ShapeMismatchError", "StaleCacheError", "StoreError", "TokenizedPrompt",
    "Tokenizer", "ValidationError", "WordSpan", "WordTokenizer", "align_edit_words",
    "build_schedule", "check_attention_map", "normalize_whitespace",
]
