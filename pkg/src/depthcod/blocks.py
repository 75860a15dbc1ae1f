"""Network building blocks: backbones, dilated channel reduction, latent
injection, top-down decoder, and the fully convolutional discriminator."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .errors import BadConfig, BadShape

REDUCED_CHANNELS = 32
DILATION_RATES = (1, 3, 5, 7)


def check_input_size(x):
    h, w = x.shape[-2:]
    if h % 32 != 0 or w % 32 != 0:
        raise BadShape(f"input size {h}x{w} is not divisible by 32")


def _freeze_bn_stats(module):
    for m in module.modules():
        if isinstance(m, nn.BatchNorm2d):
            m.eval()


class _FourStageBackbone(nn.Module):
    """Base for encoders exposing four feature stages at strides 4/8/16/32."""

    stage_channels = ()

    def __init__(self, freeze_bn=False):
        super().__init__()
        self.freeze_bn = freeze_bn

    def train(self, mode=True):
        super().train(mode)
        if self.freeze_bn:
            _freeze_bn_stats(self)
        return self


class ResNet50Backbone(_FourStageBackbone):
    stage_channels = (256, 512, 1024, 2048)

    def __init__(self, freeze_bn=False):
        super().__init__(freeze_bn)
        net = torchvision.models.resnet50(weights=None)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])

    def forward(self, x):
        check_input_size(x)
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Bottle2neck(nn.Module):
    """Bottleneck with hierarchical residual-like connections inside the block."""

    expansion = 4

    def __init__(self, inplanes, planes, stride=1, downsample=None,
                 base_width=26, scale=4, first_in_stage=False):
        super().__init__()
        width = int(math.floor(planes * (base_width / 64.0)))
        self.scale = scale
        self.first_in_stage = first_in_stage
        self.nums = 1 if scale == 1 else scale - 1

        self.conv1 = nn.Conv2d(inplanes, width * scale, kernel_size=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width * scale)
        if first_in_stage and scale > 1:
            self.pool = nn.AvgPool2d(kernel_size=3, stride=stride, padding=1)
        self.convs = nn.ModuleList(
            nn.Conv2d(width, width, kernel_size=3, stride=stride, padding=1, bias=False)
            for _ in range(self.nums)
        )
        self.bns = nn.ModuleList(nn.BatchNorm2d(width) for _ in range(self.nums))
        self.conv3 = nn.Conv2d(width * scale, planes * self.expansion, kernel_size=1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample
        self.width = width

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        parts = torch.split(out, self.width, dim=1)
        pieces = []
        sp = None
        for i in range(self.nums):
            sp = parts[i] if (i == 0 or self.first_in_stage) else sp + parts[i]
            sp = self.relu(self.bns[i](self.convs[i](sp)))
            pieces.append(sp)
        if self.scale > 1:
            tail = parts[self.nums]
            pieces.append(self.pool(tail) if self.first_in_stage else tail)
        out = self.bn3(self.conv3(torch.cat(pieces, dim=1)))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


class Res2Net50Backbone(_FourStageBackbone):
    stage_channels = (256, 512, 1024, 2048)

    def __init__(self, freeze_bn=False):
        super().__init__(freeze_bn)
        self.inplanes = 64
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, kernel_size=7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        )
        self.stages = nn.ModuleList([
            self._make_stage(64, 3, stride=1),
            self._make_stage(128, 4, stride=2),
            self._make_stage(256, 6, stride=2),
            self._make_stage(512, 3, stride=2),
        ])

    def _make_stage(self, planes, blocks, stride):
        downsample = None
        out_channels = planes * Bottle2neck.expansion
        if stride != 1 or self.inplanes != out_channels:
            downsample = nn.Sequential(
                nn.Conv2d(self.inplanes, out_channels, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        layers = [Bottle2neck(self.inplanes, planes, stride, downsample, first_in_stage=True)]
        self.inplanes = out_channels
        layers += [Bottle2neck(self.inplanes, planes) for _ in range(1, blocks)]
        return nn.Sequential(*layers)

    def forward(self, x):
        check_input_size(x)
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class _ResidualBlock(nn.Module):
    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_channels != out_channels:
            self.skip = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.skip(x))


class TinyBackbone(_FourStageBackbone):
    """Four-stage residual stack small enough for CPU-scale runs."""

    stage_channels = (16, 32, 64, 128)

    def __init__(self, freeze_bn=False):
        super().__init__(freeze_bn)
        self.stem = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
        )
        self.stages = nn.ModuleList([
            _ResidualBlock(16, 16, stride=2),
            _ResidualBlock(16, 32, stride=2),
            _ResidualBlock(32, 64, stride=2),
            _ResidualBlock(64, 128, stride=2),
        ])

    def forward(self, x):
        check_input_size(x)
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


BACKBONES = {
    "resnet50": ResNet50Backbone,
    "res2net50": Res2Net50Backbone,
    "tiny": TinyBackbone,
}


def build_backbone(name, freeze_bn=False) -> _FourStageBackbone:
    if name not in BACKBONES:
        raise BadConfig(f"unknown backbone {name!r}; choose from {sorted(BACKBONES)}")
    return BACKBONES[name](freeze_bn=freeze_bn)


class DilatedReduction(nn.Module):
    """Parallel dilated 3x3 convolutions fused down to 32 channels."""

    def __init__(self, in_channels, out_channels=REDUCED_CHANNELS, rates=DILATION_RATES):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv2d(in_channels, out_channels, 3, padding=r, dilation=r)
            for r in rates
        )
        self.fuse = nn.Conv2d(out_channels * len(rates), out_channels, 1)

    def forward(self, x):
        feats = [F.relu(branch(x)) for branch in self.branches]
        return F.relu(self.fuse(torch.cat(feats, dim=1)))


class LatentInjector(nn.Module):
    """Tile a latent code over a feature map, concatenate, project back."""

    def __init__(self, channels=REDUCED_CHANNELS, latent_dim=32):
        super().__init__()
        self.latent_dim = latent_dim
        self.proj = nn.Conv2d(channels + latent_dim, channels, 3, padding=1)

    def forward(self, feat, z):
        b, _, h, w = feat.shape
        tiled = z.view(b, self.latent_dim, 1, 1).expand(b, self.latent_dim, h, w)
        return self.proj(torch.cat([feat, tiled], dim=1))


class ResidualConvUnit(nn.Module):
    def __init__(self, channels=REDUCED_CHANNELS):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        out = self.conv1(F.relu(x))
        out = self.conv2(F.relu(out))
        return x + out


class PyramidDecoder(nn.Module):
    """Top-down refinement: residual units, x2 upsampling, stage addition,
    and a one-channel head upsampled to the input resolution."""

    def __init__(self, channels=REDUCED_CHANNELS):
        super().__init__()
        self.refine = nn.ModuleList(ResidualConvUnit(channels) for _ in range(4))
        self.head = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, pyramid, out_size):
        s1, s2, s3, s4 = pyramid
        h = self.refine[3](s4)
        for feat, refine in ((s3, self.refine[2]), (s2, self.refine[1]), (s1, self.refine[0])):
            h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
            h = h + refine(feat)
        logits = self.head(h)
        return F.interpolate(logits, size=out_size, mode="bilinear", align_corners=False)


class PatchDiscriminator(nn.Module):
    """Fully convolutional real/fake classifier over (image, map) pairs.

    Five 4x4 stride-2 convolutions with leaky-ReLU (slope 0.2) in between;
    emits a logits map at 1/32 of the input resolution.
    """

    def __init__(self, in_channels=4, widths=(64, 128, 256, 512)):
        super().__init__()
        convs = []
        prev = in_channels
        for w in widths:
            convs.append(nn.Conv2d(prev, w, 4, stride=2, padding=1))
            prev = w
        convs.append(nn.Conv2d(prev, 1, 4, stride=2, padding=1))
        self.convs = nn.ModuleList(convs)

    def forward(self, image, pred):
        check_input_size(image)
        x = torch.cat([image, pred], dim=1)
        for conv in self.convs[:-1]:
            x = F.leaky_relu(conv(x), negative_slope=0.2)
        return self.convs[-1](x)
