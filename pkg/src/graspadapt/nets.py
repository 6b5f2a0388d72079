"""Networks: grasp predictor C with domain-specific batch norm, the
gradient-reversal domain classifier, the U-Net generator and the
multi-scale patch discriminator.

All modules run at desk scale (64x64 crops); the structural ratios of the
full-scale system are kept (7 conv blocks before the command merge, 9
after) with reduced channel widths.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

BANKS = ("shared", "sim", "pseudoreal")


class DomainBatchNorm2d(nn.Module):
    """Batch norm with per-domain statistic banks and shared scale/shift.

    bank="shared" is ordinary batch norm (naive mixing); "sim"/"pseudoreal"
    keep separate running statistics while reusing the same learned weight
    and bias.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        for bank in BANKS:
            self.register_buffer(f"running_mean_{bank}", torch.zeros(num_features))
            self.register_buffer(f"running_var_{bank}", torch.ones(num_features))

    def forward(self, x: torch.Tensor, bank: str) -> torch.Tensor:
        if bank not in BANKS:
            raise ValueError(f"unknown bank {bank!r}")
        return F.batch_norm(
            x,
            getattr(self, f"running_mean_{bank}"),
            getattr(self, f"running_var_{bank}"),
            self.weight, self.bias,
            training=self.training, momentum=self.momentum, eps=self.eps)


class _ConvBlock(nn.Module):
    """conv 3x3 + domain batch norm + ReLU."""

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn = DomainBatchNorm2d(cout)

    def forward(self, x: torch.Tensor, bank: str) -> torch.Tensor:
        return F.relu(self.bn(self.conv(x), bank))


_C1_SPEC = [(16, 2), (16, 1), (32, 2), (32, 1), (32, 1), (64, 1), (64, 1)]  # 64 -> 16
_C2_SPEC = [(64, 1), (64, 1), (64, 2), (64, 1), (64, 1), (64, 2),
            (64, 1), (64, 1), (64, 1)]  # 16 -> 4

# Pixels per millimeter of the canonical top-down camera (80 px across the
# 500 mm bin plus a 60 mm view margin on each side).
PX_PER_MM = 80.0 / 620.0


class GraspNet(nn.Module):
    """Grasp success predictor C.

    Takes the 6-channel (x0, xc) stack and the 5-dim motion command.  The
    command enters between the two conv trunks through two pathways: a
    fully-connected transform added per-channel, and a copy of the trunk-1
    feature map translated by the command's horizontal displacement (via
    bilinear resampling at the known camera scale), so that content at the
    commanded target location lines up with the arm pixels and the second
    trunk can reason about the post-move scene locally.  Returns the
    success probability and the final trunk activation map (used by the
    DANN and feature-anchor losses).
    """

    def __init__(self, max_step: float = 120.0, px_per_mm: float = PX_PER_MM):
        super().__init__()
        self.max_step = max_step
        blocks, cin = [], 6
        stride_total = 1
        for cout, stride in _C1_SPEC:
            blocks.append(_ConvBlock(cin, cout, stride))
            cin = cout
            stride_total *= stride
        self.c1 = nn.ModuleList(blocks)
        # Feature cells per millimeter at the trunk-1 output resolution.
        self.cells_per_mm = px_per_mm / stride_total
        self.v_fc = nn.Linear(5, 2 * cin)
        blocks = []
        cin = 2 * cin  # trunk-1 features concatenated with their shifted copy
        for cout, stride in _C2_SPEC:
            blocks.append(_ConvBlock(cin, cout, stride))
            cin = cout
        self.c2 = nn.ModuleList(blocks)
        self.feat_channels = cin
        self.fc1 = nn.Linear(cin, 64)
        self.fc2 = nn.Linear(64, 1)

    def _check_v(self, v: torch.Tensor) -> None:
        norm = v[:, 3] ** 2 + v[:, 4] ** 2
        if not torch.all((norm - 1.0).abs() <= 1e-5):
            raise ValueError("command rotation encoding violates sin^2+cos^2=1")

    def _normalize_v(self, v: torch.Tensor) -> torch.Tensor:
        scale = v.new_tensor([self.max_step, self.max_step, self.max_step, 1.0, 1.0])
        return v / scale

    def trunk1(self, x0: torch.Tensor, xc: torch.Tensor, bank: str) -> torch.Tensor:
        h = torch.cat([x0, xc], dim=1) - 0.5
        for block in self.c1:
            h = block(h, bank)
        return h

    def _shift_by_command(self, h: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        """Resample h so the commanded target location lands on the arm pixels.

        World +x maps to increasing columns and world +y to decreasing rows.
        Out-of-view content is zero-padded.
        """
        b, _, hh, ww = h.shape
        sx = v[:, 0] * self.cells_per_mm
        sy = -v[:, 1] * self.cells_per_mm
        gy, gx = torch.meshgrid(torch.arange(hh, dtype=h.dtype),
                                torch.arange(ww, dtype=h.dtype), indexing="ij")
        gx = gx[None] + sx[:, None, None]
        gy = gy[None] + sy[:, None, None]
        grid = torch.stack([2 * gx / (ww - 1) - 1, 2 * gy / (hh - 1) - 1], dim=-1)
        return F.grid_sample(h, grid, mode="bilinear", padding_mode="zeros",
                             align_corners=True)

    def trunk2(self, h: torch.Tensor, v: torch.Tensor, bank: str) -> torch.Tensor:
        self._check_v(v)
        h = torch.cat([h, self._shift_by_command(h, v)], dim=1)
        h = h + self.v_fc(self._normalize_v(v))[:, :, None, None]
        for block in self.c2:
            h = block(h, bank)
        return h

    def head(self, feat: torch.Tensor) -> torch.Tensor:
        h = feat.mean(dim=(2, 3))
        h = F.relu(self.fc1(h))
        return torch.sigmoid(self.fc2(h)).squeeze(-1)

    def forward(self, x0: torch.Tensor, xc: torch.Tensor, v: torch.Tensor,
                bank: str = "shared") -> tuple[torch.Tensor, torch.Tensor]:
        feat = self.trunk2(self.trunk1(x0, xc, bank), v, bank)
        return self.head(feat), feat

    @torch.no_grad()
    def score_commands(self, x0: torch.Tensor, xc: torch.Tensor, vs: torch.Tensor,
                       bank: str = "shared") -> torch.Tensor:
        """Score many candidate commands against one image pair.

        The image trunk is evaluated once and broadcast over the candidates,
        which is what makes CEM servoing affordable.
        """
        h = self.trunk1(x0[None], xc[None], bank)
        h = h.expand(len(vs), -1, -1, -1)
        feat = self.trunk2(h, vs, bank)
        return self.head(feat)


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad.neg() * ctx.lam, None


def grl(x: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity forward; gradient scaled by -lam in backward."""
    return _GradientReversal.apply(x, lam)


class DomainClassifier(nn.Module):
    """Two 100-unit layers on top of a gradient reversal entry point."""

    def __init__(self, feat_channels: int = 64, feat_hw: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(feat_channels * feat_hw * feat_hw, 100)
        self.fc2 = nn.Linear(100, 100)
        self.out = nn.Linear(100, 1)

    def forward(self, feat: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
        h = grl(feat, lam).flatten(1)
        h = F.relu(self.fc1(h))
        h = F.relu(self.fc2(h))
        return torch.sigmoid(self.out(h)).squeeze(-1)


class _ConvIN(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1, kernel: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)
        self.norm = nn.InstanceNorm2d(cout, affine=True)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class Generator(nn.Module):
    """U-Net image adapter with an RGB head and a 4-class mask head.

    Average pooling downsamples over three scales, bilinear upsampling comes
    back up, and skips are concatenation followed by 1x1 convolutions.  The
    same parameters process x0 and xc.  With residual_output the RGB head
    predicts a bounded correction on top of the input, so zeroing the head
    yields the identity mapping.
    """

    def __init__(self, base: int = 64, residual_output: bool = True):
        super().__init__()
        self.residual_output = residual_output
        self.e0 = _ConvIN(3, base, stride=2)  # n64s2:IN:relu
        self.e1 = _ConvIN(base, base)
        self.e2 = _ConvIN(base, base)
        self.mid = _ConvIN(base, base)
        self.s2 = nn.Conv2d(2 * base, base, 1)
        self.d2 = _ConvIN(base, base)
        self.s1 = nn.Conv2d(2 * base, base, 1)
        self.d1 = _ConvIN(base, base)
        self.d0 = _ConvIN(base, base // 2)
        self.img_head = nn.Conv2d(base // 2, 3, 3, padding=1)
        self.mask_head = nn.Conv2d(base // 2, 4, 3, padding=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h0 = self.e0(x - 0.5)
        h1 = self.e1(F.avg_pool2d(h0, 2))
        h2 = self.e2(F.avg_pool2d(h1, 2))
        h = self.mid(h2)
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        h = self.d2(F.relu(self.s2(torch.cat([h, h1], dim=1))))
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        h = self.d1(F.relu(self.s1(torch.cat([h, h0], dim=1))))
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        h = self.d0(h)
        t = torch.tanh(self.img_head(h))
        if self.residual_output:
            img = torch.clamp(x + t, 0.0, 1.0)
        else:
            img = (t + 1.0) / 2.0
        return img, self.mask_head(h)


class PatchDiscriminator(nn.Module):
    """Five 4x4-conv patch scorer shared across three input scales.

    Input is the 6-channel (x0, xc) stack; output is one linear score map
    per scale (full, 1/2, 1/4).  Stride-1 layers pad asymmetrically so each
    map is exactly input_size/8 on a side.
    """

    def __init__(self, base: int = 32):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(6, base, 4, stride=2, padding=1),
            nn.Conv2d(base, 2 * base, 4, stride=2, padding=1),
            nn.Conv2d(2 * base, 2 * base, 4, stride=2, padding=1),
            nn.Conv2d(2 * base, 2 * base, 4, stride=1, padding=0),
            nn.Conv2d(2 * base, 1, 4, stride=1, padding=0),
        ])
        self.norms = nn.ModuleList([
            nn.Identity(),
            nn.InstanceNorm2d(2 * base, affine=True),
            nn.InstanceNorm2d(2 * base, affine=True),
            nn.InstanceNorm2d(2 * base, affine=True),
        ])

    def _one_scale(self, x: torch.Tensor) -> torch.Tensor:
        h = x - 0.5
        for i, conv in enumerate(self.convs):
            if conv.stride[0] == 1:
                h = F.pad(h, (1, 2, 1, 2))  # size-preserving pad for even kernels
            h = conv(h)
            if i < len(self.convs) - 1:
                h = F.leaky_relu(self.norms[i](h), 0.2)
        return h.squeeze(1)

    def forward(self, x0: torch.Tensor, xc: torch.Tensor) -> list[torch.Tensor]:
        x = torch.cat([x0, xc], dim=1)
        scales = [x, F.avg_pool2d(x, 2), F.avg_pool2d(x, 4)]
        return [self._one_scale(s) for s in scales]
