from .phantom import (
    Phantom,
    Sample,
    SplitData,
    PhantomCorpus,
    generate_phantom_corpus,
    build_phantom_corpus,
    modality_contrast,
    save_corpus,
    load_corpus,
)
from .preprocess import (
    HistogramTemplate,
    preprocess,
    clip_rescale,
    extract_lung_slices,
)
from .augment import AugmentationPolicy, augment

__all__ = [
    "Phantom",
    "Sample",
    "SplitData",
    "PhantomCorpus",
    "generate_phantom_corpus",
    "build_phantom_corpus",
    "modality_contrast",
    "save_corpus",
    "load_corpus",
    "HistogramTemplate",
    "preprocess",
    "clip_rescale",
    "extract_lung_slices",
    "AugmentationPolicy",
    "augment",
]
