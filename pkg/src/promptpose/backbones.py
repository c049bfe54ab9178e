"""Image encoders: a desk-scale CNN plus the two real backbones.

Every encoder maps a (B, 3, h, w) image batch to an
:class:`EncoderOutput` with features of shape (B, C, h/stride, w/stride)
and, when the architecture has one, a global token. The ResNet and ViT
follow the released contrastive language-image architectures so their
pretrained weights can be mapped on (see ``clip_weights``).
"""

from __future__ import annotations

from collections import OrderedDict
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .text import ResidualAttentionBlock


class EncoderOutput(NamedTuple):
    features: torch.Tensor  # (B, C, H, W)
    global_token: torch.Tensor | None  # (B, C') or None


class ToyCnnEncoder(nn.Module):
    """Small stride-32 CNN for experiments without pretrained weights.

    A stride-2 stem plus four stride-2 stages; channels grow linearly up to
    ``channels``.
    """

    kind = "toy-cnn"
    stride = 32

    def __init__(self, channels: int = 64):
        super().__init__()
        self.channels = channels
        widths = [max(8, channels // 4), max(8, channels // 2), channels, channels]
        layers = [
            nn.Conv2d(3, widths[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        ]
        in_ch = widths[0]
        for w in widths:
            layers += [
                nn.Conv2d(in_ch, w, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
            in_ch = w
        self.body = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> EncoderOutput:
        return EncoderOutput(self.body(images), None)


class Bottleneck(nn.Module):
    """Anti-aliased bottleneck: stride-2 is an average pool, not a strided conv."""

    expansion = 4

    def __init__(self, inplanes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.relu1 = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu2 = nn.ReLU(inplace=True)
        self.avgpool = nn.AvgPool2d(stride) if stride > 1 else nn.Identity()
        self.conv3 = nn.Conv2d(planes, planes * self.expansion, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.relu3 = nn.ReLU(inplace=True)

        self.downsample = None
        if stride > 1 or inplanes != planes * self.expansion:
            self.downsample = nn.Sequential(OrderedDict([
                ("-1", nn.AvgPool2d(stride) if stride > 1 else nn.Identity()),
                ("0", nn.Conv2d(inplanes, planes * self.expansion, 1, bias=False)),
                ("1", nn.BatchNorm2d(planes * self.expansion)),
            ]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x
        out = self.relu1(self.bn1(self.conv1(x)))
        out = self.relu2(self.bn2(self.conv2(out)))
        out = self.avgpool(out)
        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu3(out + identity)


class ModifiedResNet(nn.Module):
    """Residual backbone with a 3-conv stem and blur-pooled downsampling.

    ``layers=(3, 4, 6, 3), width=64`` is the standard 50-layer variant with
    2048 output channels at stride 32.
    """

    kind = "resnet"
    stride = 32

    def __init__(self, layers: tuple[int, ...] = (3, 4, 6, 3), width: int = 64):
        super().__init__()
        self.width = width
        self.channels = width * 8 * Bottleneck.expansion

        self.conv1 = nn.Conv2d(3, width // 2, 3, stride=2, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width // 2)
        self.relu1 = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(width // 2, width // 2, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width // 2)
        self.relu2 = nn.ReLU(inplace=True)
        self.conv3 = nn.Conv2d(width // 2, width, 3, padding=1, bias=False)
        self.bn3 = nn.BatchNorm2d(width)
        self.relu3 = nn.ReLU(inplace=True)
        self.avgpool = nn.AvgPool2d(2)

        self._inplanes = width
        self.layer1 = self._make_layer(width, layers[0])
        self.layer2 = self._make_layer(width * 2, layers[1], stride=2)
        self.layer3 = self._make_layer(width * 4, layers[2], stride=2)
        self.layer4 = self._make_layer(width * 8, layers[3], stride=2)

    def _make_layer(self, planes: int, blocks: int, stride: int = 1) -> nn.Sequential:
        layers = [Bottleneck(self._inplanes, planes, stride)]
        self._inplanes = planes * Bottleneck.expansion
        for _ in range(1, blocks):
            layers.append(Bottleneck(self._inplanes, planes))
        return nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> EncoderOutput:
        x = self.relu1(self.bn1(self.conv1(images)))
        x = self.relu2(self.bn2(self.conv2(x)))
        x = self.relu3(self.bn3(self.conv3(x)))
        x = self.avgpool(x)
        x = self.layer1(x)
        x = self.layer2(x)
        x = self.layer3(x)
        x = self.layer4(x)
        return EncoderOutput(x, None)


class VisionTransformerEncoder(nn.Module):
    """Patch transformer; features are the patch tokens on their grid.

    ``patch_size=16, width=768, layers=12, heads=12`` is the Base variant.
    The class token is returned as the global token.
    """

    kind = "vit"

    def __init__(
        self,
        input_resolution: int = 256,
        patch_size: int = 16,
        width: int = 768,
        layers: int = 12,
        heads: int = 12,
    ):
        super().__init__()
        self.stride = patch_size
        self.channels = width
        self.input_resolution = input_resolution
        grid = input_resolution // patch_size

        self.conv1 = nn.Conv2d(3, width, patch_size, stride=patch_size, bias=False)
        scale = width**-0.5
        self.class_embedding = nn.Parameter(scale * torch.randn(width))
        self.positional_embedding = nn.Parameter(scale * torch.randn(grid * grid + 1, width))
        self.ln_pre = nn.LayerNorm(width)
        self.blocks = nn.ModuleList([ResidualAttentionBlock(width, heads) for _ in range(layers)])
        self.ln_post = nn.LayerNorm(width)

    def _positional(self, grid_h: int, grid_w: int) -> torch.Tensor:
        """Positional embedding, grid part bilinearly resized when needed."""
        n = self.positional_embedding.shape[0] - 1
        side = int(round(n**0.5))
        if (grid_h, grid_w) == (side, side):
            return self.positional_embedding
        cls_pos = self.positional_embedding[:1]
        grid_pos = self.positional_embedding[1:].reshape(1, side, side, -1).permute(0, 3, 1, 2)
        grid_pos = F.interpolate(
            grid_pos, size=(grid_h, grid_w), mode="bilinear", align_corners=False
        )
        grid_pos = grid_pos.permute(0, 2, 3, 1).reshape(grid_h * grid_w, -1)
        return torch.cat([cls_pos, grid_pos])

    def forward(self, images: torch.Tensor) -> EncoderOutput:
        x = self.conv1(images)  # (B, width, H, W)
        b, c, h, w = x.shape
        x = x.flatten(2).permute(0, 2, 1)  # (B, HW, width)
        cls = self.class_embedding.to(x.dtype).expand(b, 1, -1)
        x = torch.cat([cls, x], dim=1)
        x = x + self._positional(h, w)
        x = self.ln_pre(x)

        x = x.permute(1, 0, 2)  # (L, B, D)
        for block in self.blocks:
            x = block(x)
        x = x.permute(1, 0, 2)
        x = self.ln_post(x)

        cls_token = x[:, 0]
        patches = x[:, 1:].permute(0, 2, 1).reshape(b, c, h, w)
        return EncoderOutput(patches, cls_token)
