from .cyclegan import CycleGanNets, ResnetGenerator, PatchDiscriminator, translate, DIRECTIONS
from .perceptual import PerceptualExtractor, perceptual_features
from .drit import DritNets, DritPass, encode_decode, reparameterize

__all__ = [
    "CycleGanNets",
    "ResnetGenerator",
    "PatchDiscriminator",
    "translate",
    "DIRECTIONS",
    "PerceptualExtractor",
    "perceptual_features",
    "DritNets",
    "DritPass",
    "encode_decode",
    "reparameterize",
]
