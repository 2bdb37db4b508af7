"""Disentangled translation: content/style encoders, generators, critics.

Images are split into a spatial content code and a fixed-length style
vector produced by a reparameterized (mu, logvar) head. Generators render a
content code under a style vector; a content discriminator pushes the two
domains' content codes toward a shared distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .cyclegan import ResidualBlock, PatchDiscriminator, init_gan_weights

LOGVAR_CLAMP = (-30.0, 10.0)


class ContentEncoder(nn.Module):
    def __init__(self, in_channels=1, width=8):
        super().__init__()
        w = width
        self.model = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(in_channels, w, 7),
            nn.InstanceNorm2d(w), nn.ReLU(inplace=True),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w), nn.ReLU(inplace=True),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * w), nn.ReLU(inplace=True),
            ResidualBlock(4 * w), ResidualBlock(4 * w), ResidualBlock(4 * w),
        )
        self.out_channels = 4 * w
        init_gan_weights(self)

    def forward(self, x):
        return self.model(x)


class StyleEncoder(nn.Module):
    def __init__(self, in_channels=1, width=8, style_dim=8):
        super().__init__()
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, w, 7, padding=3), nn.ReLU(inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            ResidualBlock(4 * w),
            nn.AdaptiveAvgPool2d(1),
        )
        self.mu = nn.Linear(4 * w, style_dim)
        self.logvar = nn.Linear(4 * w, style_dim)
        init_gan_weights(self)

    def forward(self, x):
        h = self.features(x).flatten(1)
        return self.mu(h), torch.clamp(self.logvar(h), *LOGVAR_CLAMP)


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor,
                   eps: torch.Tensor | None = None) -> torch.Tensor:
    logvar = torch.clamp(logvar, *LOGVAR_CLAMP)
    if eps is None:
        eps = torch.randn_like(mu)
    return mu + torch.exp(0.5 * logvar) * eps


class StyleGenerator(nn.Module):
    """Render a content code under a style vector (broadcast-concatenated)."""

    def __init__(self, content_channels, out_channels=1, style_dim=8, n_residual_blocks=6):
        super().__init__()
        c = content_channels
        self.mix = nn.Conv2d(c + style_dim, c, 1)
        self.blocks = nn.Sequential(*[ResidualBlock(c) for _ in range(n_residual_blocks)])
        self.up = nn.Sequential(
            nn.ConvTranspose2d(c, c // 2, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c // 2), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c // 2, c // 4, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c // 4), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3), nn.Conv2d(c // 4, out_channels, 7), nn.Tanh(),
        )
        init_gan_weights(self)

    def forward(self, content, style):
        b, _, h, w = content.shape
        style_map = style.view(b, -1, 1, 1).expand(b, style.shape[1], h, w)
        x = self.mix(torch.cat([content, style_map], dim=1))
        return self.up(self.blocks(x))


class ContentDiscriminator(nn.Module):
    def __init__(self, content_channels, width=None):
        super().__init__()
        w = width or content_channels
        self.model = nn.Sequential(
            nn.Conv2d(content_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * w, 1, 3, padding=1),
        )
        init_gan_weights(self)

    def forward(self, content):
        return self.model(content)


@dataclass
class DritNets:
    content_enc_s: ContentEncoder
    content_enc_t: ContentEncoder
    style_enc_s: StyleEncoder
    style_enc_t: StyleEncoder
    gen_s: StyleGenerator       # renders into the student modality
    gen_t: StyleGenerator
    disc_student: PatchDiscriminator
    disc_teacher: PatchDiscriminator
    disc_content: ContentDiscriminator
    style_dim: int = 8

    @classmethod
    def build(cls, in_channels=1, width=8, style_dim=8, disc_width=8):
        enc_s = ContentEncoder(in_channels, width)
        enc_t = ContentEncoder(in_channels, width)
        return cls(
            content_enc_s=enc_s,
            content_enc_t=enc_t,
            style_enc_s=StyleEncoder(in_channels, width, style_dim),
            style_enc_t=StyleEncoder(in_channels, width, style_dim),
            gen_s=StyleGenerator(enc_s.out_channels, in_channels, style_dim),
            gen_t=StyleGenerator(enc_t.out_channels, in_channels, style_dim),
            disc_student=PatchDiscriminator(in_channels, disc_width),
            disc_teacher=PatchDiscriminator(in_channels, disc_width),
            disc_content=ContentDiscriminator(enc_s.out_channels),
            style_dim=style_dim,
        )

    def modules(self) -> dict[str, nn.Module]:
        return {"content_enc_s": self.content_enc_s, "content_enc_t": self.content_enc_t,
                "style_enc_s": self.style_enc_s, "style_enc_t": self.style_enc_t,
                "gen_s": self.gen_s, "gen_t": self.gen_t,
                "disc_student": self.disc_student, "disc_teacher": self.disc_teacher,
                "disc_content": self.disc_content}

    def generator_modules(self) -> dict[str, nn.Module]:
        return {k: v for k, v in self.modules().items() if not k.startswith("disc")}


@dataclass
class DritPass:
    """Every tensor one joint forward produces for the objectives."""

    content_s: torch.Tensor          # E_s(x_s)
    content_t: torch.Tensor          # E_t(x_t)
    content_s_cross: torch.Tensor    # E_t(x_s): student image through teacher encoder
    content_t_cross: torch.Tensor    # E_s(x_t)
    style_s: tuple                   # (mu, logvar, z)
    style_t: tuple
    xhat_s: torch.Tensor             # gen_s(content_s, z_t)
    xhat_t: torch.Tensor             # gen_t(content_t, z_s)
    recon_s: torch.Tensor            # gen_s(content_s, z_s), self reconstruction
    recon_t: torch.Tensor
    fake_s_random: torch.Tensor      # gen_s(content_s, z ~ N(0, I))
    fake_t_random: torch.Tensor
    z_random_s: torch.Tensor
    z_random_t: torch.Tensor
    content_s_second: torch.Tensor   # E_s(xhat_s), second-pass content code
    content_t_second: torch.Tensor


def encode_decode(nets: DritNets, x_student: torch.Tensor, x_teacher: torch.Tensor,
                  z_random_s: torch.Tensor | None = None,
                  z_random_t: torch.Tensor | None = None) -> DritPass:
    if x_student.shape != x_teacher.shape:
        raise ValueError(f"shape mismatch: {tuple(x_student.shape)} vs {tuple(x_teacher.shape)}")
    b = x_student.shape[0]
    content_s = nets.content_enc_s(x_student)
    content_t = nets.content_enc_t(x_teacher)
    content_s_cross = nets.content_enc_t(x_student)
    content_t_cross = nets.content_enc_s(x_teacher)
    mu_s, logvar_s = nets.style_enc_s(x_student)
    mu_t, logvar_t = nets.style_enc_t(x_teacher)
    z_s = reparameterize(mu_s, logvar_s)
    z_t = reparameterize(mu_t, logvar_t)
    if z_random_s is None:
        z_random_s = torch.randn(b, nets.style_dim, device=x_student.device,
                                 dtype=x_student.dtype)
    if z_random_t is None:
        z_random_t = torch.randn(b, nets.style_dim, device=x_student.device,
                                 dtype=x_student.dtype)
    xhat_s = nets.gen_s(content_s, z_t)
    xhat_t = nets.gen_t(content_t, z_s)
    return DritPass(
        content_s=content_s, content_t=content_t,
        content_s_cross=content_s_cross, content_t_cross=content_t_cross,
        style_s=(mu_s, logvar_s, z_s), style_t=(mu_t, logvar_t, z_t),
        xhat_s=xhat_s, xhat_t=xhat_t,
        recon_s=nets.gen_s(content_s, z_s), recon_t=nets.gen_t(content_t, z_t),
        fake_s_random=nets.gen_s(content_s, z_random_s),
        fake_t_random=nets.gen_t(content_t, z_random_t),
        z_random_s=z_random_s, z_random_t=z_random_t,
        content_s_second=nets.content_enc_s(xhat_s),
        content_t_second=nets.content_enc_t(xhat_t),
    )
