"""Unpaired cross-modality distillation for segmentation.

Subpackages: ``data`` (phantom corpus, preprocessing, augmentation),
``segnets`` (segmentation networks with hint taps), ``i2inets`` (translation
networks and the perceptual extractor), ``losses``, ``trainer``, ``metrics``,
``analysis`` (feature embedding studies) and the ``cmedl`` command line.
"""

__version__ = "0.1.0"
