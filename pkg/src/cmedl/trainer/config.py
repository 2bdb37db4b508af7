"""Training configuration: modes, hyperparameters, per-mode weight sanity."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

from ..errors import ConfigurationError
from ..losses import LossWeights
from ..segnets import SegNetConfig
from ..data.augment import AugmentationPolicy, ElasticParams

MODES = (
    "cmedl_cycle", "cmedl_vae", "student_only",
    "pmr_only_cycle", "pmr_only_drit", "pmr_cmedl",
    "concat_ct_pmr", "weighted_ct_pmr", "output_distill",
    "weak_teacher_cmedl", "weak_teacher_cmedl_plus_pmr",
)

# which networks a full training step actually updates, per mode
MODE_UPDATED_NETS = {
    "student_only": {"seg_student"},
    "cmedl_cycle": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher",
                    "seg_student", "seg_teacher"},
    "output_distill": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher",
                       "seg_student", "seg_teacher"},
    "pmr_cmedl": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher",
                  "seg_student", "seg_teacher"},
    "weak_teacher_cmedl": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher",
                           "seg_student", "seg_teacher"},
    "weak_teacher_cmedl_plus_pmr": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher",
                                    "seg_student", "seg_teacher"},
    "pmr_only_cycle": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher", "seg_teacher"},
    "concat_ct_pmr": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher", "seg_student"},
    "weighted_ct_pmr": {"gen_s2t", "gen_t2s", "disc_student", "disc_teacher",
                        "seg_student", "alpha_net"},
    "cmedl_vae": {"content_enc_s", "content_enc_t", "style_enc_s", "style_enc_t",
                  "gen_s", "gen_t", "disc_student", "disc_teacher", "disc_content",
                  "seg_student", "seg_teacher"},
    "pmr_only_drit": {"content_enc_s", "content_enc_t", "style_enc_s", "style_enc_t",
                      "gen_s", "gen_t", "disc_student", "disc_teacher", "disc_content",
                      "seg_teacher"},
}

CYCLE_MODES = {"cmedl_cycle", "pmr_only_cycle", "pmr_cmedl", "concat_ct_pmr",
               "weighted_ct_pmr", "output_distill", "weak_teacher_cmedl",
               "weak_teacher_cmedl_plus_pmr"}
DRIT_MODES = {"cmedl_vae", "pmr_only_drit"}
HINT_MODES = {"cmedl_cycle", "cmedl_vae", "pmr_cmedl", "weak_teacher_cmedl",
              "weak_teacher_cmedl_plus_pmr"}


@dataclass
class TrainConfig:
    mode: str = "cmedl_cycle"
    arch: SegNetConfig = field(default_factory=SegNetConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    lr_i2i: float = 1e-4
    lr_seg: float = 2e-4
    batch_size: int = 2
    max_epochs: int = 100
    early_stop_patience: int = 10
    seeds: list = field(default_factory=lambda: [0])
    teacher_label_fraction: float = 1.0
    gen_width: int = 8
    disc_width: int = 8
    n_residual_blocks: int = 9
    style_dim: int = 8
    extractor_width: int = 8
    extractor_seed: int = 1234
    distill_temperature: float = 0.5
    hint_stop_teacher: bool = False
    use_image_buffer: bool = False
    image_buffer_size: int = 50
    augmentation: AugmentationPolicy = field(
        default_factory=lambda: AugmentationPolicy(
            flip_prob=0.5, scale_range=(0.95, 1.05), rotation_range_deg=(-8.0, 8.0),
            elastic=ElasticParams(grid_spacing=32.0, magnitude_sigma=1.0)))
    checkpoint_every: int = 1
    debug_grad_check: bool = False
    device: str = "cpu"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0.0 <= self.teacher_label_fraction <= 1.0:
            raise ConfigurationError("teacher_label_fraction must lie in [0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")

    def normalized(self) -> tuple["TrainConfig", list[str]]:
        """Apply mode-specific weight sanity; returns (config, warnings)."""
        import copy

        cfg = copy.deepcopy(self)
        warnings = []

        def force(name, value):
            if getattr(cfg.weights, name) != value:
                warnings.append(f"mode {cfg.mode}: forcing weights.{name}={value}")
                setattr(cfg.weights, name, value)

        if cfg.mode == "student_only":
            for name in ("hint", "context", "cycle", "adv"):
                force(name, 0.0)
        elif cfg.mode in ("pmr_only_cycle", "concat_ct_pmr", "weighted_ct_pmr"):
            force("hint", 0.0)
            force("context", 0.0)
        elif cfg.mode == "pmr_only_drit":
            force("hint", 0.0)
        elif cfg.mode == "output_distill":
            pass  # the hint weight gates the output-distillation term instead
        if cfg.mode == "concat_ct_pmr" and cfg.arch.in_channels != 2:
            warnings.append("mode concat_ct_pmr: forcing arch.in_channels=2")
            cfg.arch.in_channels = 2
        return cfg, warnings

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = asdict(self.arch)
        d["weights"] = asdict(self.weights)
        aug = asdict(self.augmentation)
        d["augmentation"] = aug
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("arch"), dict):
            d["arch"] = SegNetConfig(**d["arch"])
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        if isinstance(d.get("augmentation"), dict):
            aug = dict(d["augmentation"])
            if isinstance(aug.get("elastic"), dict):
                aug["elastic"] = ElasticParams(**aug["elastic"])
            for key in ("scale_range", "rotation_range_deg"):
                if isinstance(aug.get(key), list):
                    aug[key] = tuple(aug[key])
            d["augmentation"] = AugmentationPolicy(**aug)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
