"""Free-form face image editing: mask/sketch/color conditioned GAN.

Module map: `maskgen` samples erase masks, `dataprep` builds the 9-channel
conditioning stack, `networks` holds the gated U-net generator and the
spectrally-normalized patch discriminator, `losses` the composite
objective, `trainer` the adversarial loop and checkpoints, `service` the
HTTP edit endpoint and `report` the figure rendering.
"""

from .dataprep import ColorMap, EditBatch, SketchMap, assemble_batch
from .losses import LossWeights
from .maskgen import (
    Landmarks,
    MaskGenParams,
    MaskMap,
    generate_free_form_mask,
    rasterize_stroke,
)
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    ModelParams,
    compose,
    spectral_normalize,
)
from .trainer import TrainConfig, evaluate, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "ColorMap", "EditBatch", "SketchMap", "assemble_batch",
    "LossWeights",
    "Landmarks", "MaskGenParams", "MaskMap", "generate_free_form_mask",
    "rasterize_stroke",
    "Discriminator", "DiscriminatorConfig", "Generator", "GeneratorConfig",
    "ModelParams", "compose", "spectral_normalize",
    "TrainConfig", "evaluate", "train_loop", "train_step",
    "__version__",
]
