from .tsne import (
    tsne_embed,
    TsneResult,
    conditional_probabilities,
    perplexity_of_conditionals,
    separability_score,
)
from .features import (
    FeatureSample,
    harvest_features,
    subsample_balanced,
    feature_matrix,
    dump_feature_maps,
    PER_CASE_PIXEL_CAP,
)

__all__ = [
    "tsne_embed",
    "TsneResult",
    "conditional_probabilities",
    "perplexity_of_conditionals",
    "separability_score",
    "FeatureSample",
    "harvest_features",
    "subsample_balanced",
    "feature_matrix",
    "dump_feature_maps",
    "PER_CASE_PIXEL_CAP",
]
