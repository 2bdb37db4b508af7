"""Network/optimizer bundle for one training mode, plus checkpointing.

Networks are built in a fixed order from the run seed so that, e.g., the
student segmentor of a distillation run is initialized identically to a
student-only run with the same seed. Checkpoints capture every network
parameter and buffer, every Adam moment, the step counters and the torch
RNG state, so a save/load round trip reproduces the next step bitwise.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .. import io as cio
from ..losses import FusionAlphaNet
from ..segnets import build_segnet
from ..i2inets import CycleGanNets, DritNets, PerceptualExtractor
from .config import TrainConfig, CYCLE_MODES, DRIT_MODES

GAN_BETAS = (0.5, 0.999)
SEG_BETAS = (0.9, 0.999)


class CmedlSystem:
    def __init__(self, config: TrainConfig, seed: int, device: str = "cpu"):
        self.config, _ = config.normalized()
        self.seed = seed
        self.device = torch.device(device)
        torch.manual_seed(seed)
        cfg = self.config
        self.nets: dict[str, nn.Module] = {}

        # student segmentor first: its init must match a student_only build
        needs_student = cfg.mode not in ("pmr_only_cycle", "pmr_only_drit")
        if needs_student:
            self.nets["seg_student"] = build_segnet(cfg.arch)
        needs_teacher = cfg.mode not in ("student_only", "concat_ct_pmr", "weighted_ct_pmr")
        if needs_teacher:
            import copy
            teacher_arch = copy.deepcopy(cfg.arch)
            teacher_arch.in_channels = 1
            self.nets["seg_teacher"] = build_segnet(teacher_arch)

        self.cycle = None
        self.drit = None
        if cfg.mode in CYCLE_MODES:
            self.cycle = CycleGanNets.build(in_channels=1, gen_width=cfg.gen_width,
                                            disc_width=cfg.disc_width,
                                            n_residual_blocks=cfg.n_residual_blocks)
            self.nets.update(self.cycle.modules())
        elif cfg.mode in DRIT_MODES:
            self.drit = DritNets.build(in_channels=1, width=cfg.gen_width,
                                       style_dim=cfg.style_dim, disc_width=cfg.disc_width)
            self.nets.update(self.drit.modules())

        if cfg.mode == "weighted_ct_pmr":
            self.nets["alpha_net"] = FusionAlphaNet(in_channels=2, width=cfg.disc_width)

        self.extractor = None
        if cfg.weights.context > 0 and cfg.mode in CYCLE_MODES:
            self.extractor = PerceptualExtractor(in_channels=1, width=cfg.extractor_width,
                                                 seed=cfg.extractor_seed)

        for net in self.nets.values():
            net.to(self.device)
        if self.extractor is not None:
            self.extractor.to(self.device)

        self.optimizers = self._build_optimizers()

    # -- optimizers ---------------------------------------------------------

    def _build_optimizers(self) -> dict[str, torch.optim.Adam]:
        cfg = self.config
        opts = {}
        gen_names = [n for n in ("gen_s2t", "gen_t2s", "content_enc_s", "content_enc_t",
                                 "style_enc_s", "style_enc_t", "gen_s", "gen_t")
                     if n in self.nets]
        disc_names = [n for n in ("disc_student", "disc_teacher", "disc_content")
                      if n in self.nets]
        seg_names = [n for n in ("seg_student", "seg_teacher", "alpha_net") if n in self.nets]
        if gen_names:
            opts["gen"] = torch.optim.Adam(self._params(gen_names), lr=cfg.lr_i2i,
                                           betas=GAN_BETAS)
        if disc_names:
            opts["disc"] = torch.optim.Adam(self._params(disc_names), lr=cfg.lr_i2i,
                                            betas=GAN_BETAS)
        if seg_names:
            opts["seg"] = torch.optim.Adam(self._params(seg_names), lr=cfg.lr_seg,
                                           betas=SEG_BETAS)
        self._opt_param_names = {
            "gen": self._param_names(gen_names),
            "disc": self._param_names(disc_names),
            "seg": self._param_names(seg_names),
        }
        return opts

    def _params(self, names):
        out = []
        for name in names:
            out.extend(self.nets[name].parameters())
        return out

    def _param_names(self, names):
        out = []
        for name in names:
            for pname, _ in self.nets[name].named_parameters():
                out.append(f"{name}.{pname}")
        return out

    # -- train/eval mode ------------------------------------------------------

    def train_mode(self):
        for net in self.nets.values():
            net.train()

    def eval_mode(self):
        for net in self.nets.values():
            net.eval()

    def zero_grad(self):
        for net in self.nets.values():
            net.zero_grad(set_to_none=True)

    # -- checkpointing ---------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        tensors: dict[str, np.ndarray] = {}
        for name, net in self.nets.items():
            for key, value in net.state_dict().items():
                tensors[f"net/{name}/{key}"] = value.detach().cpu().numpy()
        for opt_name, opt in self.optimizers.items():
            pnames = self._opt_param_names[opt_name]
            params = opt.param_groups[0]["params"]
            for pname, param in zip(pnames, params):
                state = opt.state.get(param)
                if not state:
                    continue
                tensors[f"opt/{opt_name}/{pname}/step"] = np.asarray(
                    state["step"].detach().cpu().numpy() if torch.is_tensor(state["step"])
                    else state["step"], dtype=np.float64)
                tensors[f"opt/{opt_name}/{pname}/exp_avg"] = state["exp_avg"].detach().cpu().numpy()
                tensors[f"opt/{opt_name}/{pname}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
        tensors["rng/torch"] = torch.get_rng_state().numpy()
        return tensors

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, net in self.nets.items():
            state = {}
            prefix = f"net/{name}/"
            reference = net.state_dict()
            for key in reference:
                arr = tensors[prefix + key]
                state[key] = torch.from_numpy(arr.copy()).to(reference[key].dtype)
            net.load_state_dict(state)
        for opt_name, opt in self.optimizers.items():
            pnames = self._opt_param_names[opt_name]
            params = opt.param_groups[0]["params"]
            for pname, param in zip(pnames, params):
                key = f"opt/{opt_name}/{pname}"
                if f"{key}/exp_avg" not in tensors:
                    continue
                step_val = float(np.asarray(tensors[f"{key}/step"]).reshape(-1)[0])
                opt.state[param] = {
                    "step": torch.tensor(step_val),
                    "exp_avg": torch.from_numpy(tensors[f"{key}/exp_avg"].copy()),
                    "exp_avg_sq": torch.from_numpy(tensors[f"{key}/exp_avg_sq"].copy()),
                }
        if "rng/torch" in tensors:
            torch.set_rng_state(torch.from_numpy(tensors["rng/torch"].copy()))

    def save(self, path, meta: dict) -> None:
        meta = dict(meta, config=self.config.to_dict(), config_hash=self.config.hash(),
                    seed=self.seed)
        cio.save_checkpoint(path, meta, self.state_tensors())

    @classmethod
    def load(cls, path, device: str = "cpu") -> tuple["CmedlSystem", dict]:
        meta, tensors = cio.load_checkpoint(path)
        config = TrainConfig.from_dict(meta["config"])
        system = cls(config, seed=meta["seed"], device=device)
        system.load_state_tensors(tensors)
        return system, meta

    def parameter_snapshot(self) -> dict[str, np.ndarray]:
        return {f"{name}.{pname}": p.detach().cpu().numpy().copy()
                for name, net in self.nets.items()
                for pname, p in net.named_parameters()}
