"""Zero-shot video editing by attention control over DDIM inversion."""
from .attention import (
    ConstantDenoiser,
    ProjectionSet,
    ToyDenoiser,
    build_toy_denoiser,
    cross_attention,
    sparse_causal_attention,
)
from .control import (
    TAU,
    AttentionController,
    SourceReplay,
    blending_mask,
    cross_blender,
    make_controller,
    spatial_blender,
)
from .core import (
    AttentionStore,
    EditSpec,
    LatentVideo,
    NoiseSchedule,
    TokenizedPrompt,
    WordTokenizer,
    align_edit_words,
    build_schedule,
)
from .metrics import ToyEmbedder, frame_acc, tem_con
from .pipeline import EditJob, IdentityCodec, edit_video, edit_window, reconstruct
from .scheduler import ddim_invert_step, ddim_sample_step, invert, sample

__version__ = "0.1.0"
