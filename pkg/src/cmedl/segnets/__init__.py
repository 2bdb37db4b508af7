from .common import (
    SegNetConfig,
    SegOutput,
    build_segnet,
    parameter_count,
    PAPER_WIDTH,
    ARCHS,
    HINT_LAYER_SETS,
)
from .unet import Unet
from .densefcn import DenseFCN
from .mrrn import MRRN

__all__ = [
    "SegNetConfig",
    "SegOutput",
    "build_segnet",
    "parameter_count",
    "PAPER_WIDTH",
    "ARCHS",
    "HINT_LAYER_SETS",
    "Unet",
    "DenseFCN",
    "MRRN",
]
