"""Texture restoration: Fourier-convolution autoencoder, gated structure encoder, zero-init fusion.

All activations are N×C×H×W. Masks are N×1×H×W with 1 on pixels to fill.
Images live in [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mpe import MPEConfig, mpe_batch
from .tensor import DimensionError, Tensor, concat, no_grad
from .tensor import functional as F
from .tensor.conv import conv2d
from .tensor.fft import irfft2, rfft2
from .tensor.nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module, _normal, _zeros


# ---------------------------------------------------------------------------
# spectral transform
# ---------------------------------------------------------------------------

def spectral_transform(x: Tensor, weight: Tensor, bn: BatchNorm2d | None = None, relu: bool = True) -> Tensor:
    """rfft2 → (re, im) channel pairs → 1×1 conv [→ BN → ReLU] → irfft2.

    ``weight`` is a 2C×2C×1×1 kernel acting on channels ordered
    re_0, im_0, re_1, im_1, …. With ``bn=None`` and ``relu=False`` the map is
    linear in ``x``.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"spectral transform needs even spatial extents, got {h}×{w}")
    if weight.shape != (2 * c, 2 * c, 1, 1):
        raise DimensionError(f"spectral kernel {weight.shape} does not fit {c} channels")
    z = rfft2(x)  # N×C×H×Wf×2
    wf = z.shape[3]
    z = z.transpose(0, 1, 4, 2, 3).reshape(n, 2 * c, h, wf)
    z = conv2d(z, weight, None, 1, 0)
    if bn is not None:
        z = bn(z)
    if relu:
        z = F.relu(z)
    z = z.reshape(n, c, 2, h, wf).transpose(0, 1, 3, 4, 2)
    return irfft2(z, (h, w))


class FourierUnit(Module):
    def __init__(self, c: int, rng: np.random.Generator):
        self.weight = _normal(rng, (2 * c, 2 * c, 1, 1), 2 * c)
        self.bn = BatchNorm2d(2 * c)

    def forward(self, x: Tensor) -> Tensor:
        return spectral_transform(x, self.weight, self.bn, relu=True)


class SpectralBranch(Module):
    """Global→global path: 1×1 reduce, Fourier unit with a skip, 1×1 expand."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        mid = max(cout // 2, 1)
        self.pre = Conv2d(cin, mid, 1, rng, bias=False)
        self.pre_bn = BatchNorm2d(mid)
        self.fu = FourierUnit(mid, rng)
        self.post = Conv2d(mid, cout, 1, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        h = F.relu(self.pre_bn(self.pre(x)))
        return self.post(h + self.fu(h))


class FFC(Module):
    """One fast Fourier conv layer on a (local, global) channel split, with BN + ReLU per branch."""

    def __init__(self, c: int, ratio: float, rng: np.random.Generator):
        if not 0 < ratio < 1:
            raise ValueError(f"global channel ratio must be in (0, 1), got {ratio}")
        self.cg = int(round(c * ratio))
        self.cl = c - self.cg
        if self.cg < 1 or self.cl < 1:
            raise ValueError(f"{c} channels cannot be split with ratio {ratio}")
        self.l2l = Conv2d(self.cl, self.cl, 3, rng, bias=False)
        self.l2g = Conv2d(self.cl, self.cg, 3, rng, bias=False)
        self.g2l = Conv2d(self.cg, self.cl, 3, rng, bias=False)
        self.g2g = SpectralBranch(self.cg, self.cg, rng)
        self.bn_l = BatchNorm2d(self.cl)
        self.bn_g = BatchNorm2d(self.cg)

    def forward(self, x: Tensor) -> Tensor:
        xl, xg = x[:, :self.cl], x[:, self.cl:]
        yl = self.l2l(xl) + self.g2l(xg)
        yg = self.l2g(xl) + self.g2g(xg)
        return concat([F.relu(self.bn_l(yl)), F.relu(self.bn_g(yg))], axis=1)


class FFCBlock(Module):
    """Two FFC layers with a residual connection around them."""

    def __init__(self, c: int, ratio: float, rng: np.random.Generator):
        self.ffc1 = FFC(c, ratio, rng)
        self.ffc2 = FFC(c, ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.ffc2(self.ffc1(x))

    def zero_output(self) -> None:
        """Zero the last layer's BN affine so the block starts as the identity."""
        for bn in (self.ffc2.bn_l, self.ffc2.bn_g):
            bn.weight.data[:] = 0
            bn.bias.data[:] = 0


# ---------------------------------------------------------------------------
# gated convolution and the structure encoder
# ---------------------------------------------------------------------------

def gated_conv(x: Tensor, feature: Module, gate: Module) -> Tensor:
    return feature(x) * F.sigmoid(gate(x))


class GatedConv(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 3, stride: int = 1,
                 padding: int | None = None, dilation: int = 1, transpose: bool = False):
        if transpose:
            self.feature = ConvTranspose2d(cin, cout, rng, k=k, stride=stride, padding=1 if padding is None else padding)
            self.gate = ConvTranspose2d(cin, cout, rng, k=k, stride=stride, padding=1 if padding is None else padding)
        else:
            self.feature = Conv2d(cin, cout, k, rng, stride=stride, padding=padding, dilation=dilation)
            self.gate = Conv2d(cin, cout, k, rng, stride=stride, padding=padding, dilation=dilation)

    def forward(self, x: Tensor) -> Tensor:
        return gated_conv(x, self.feature, self.gate)


class DilatedResBlock(Module):
    def __init__(self, c: int, rng: np.random.Generator, dilation: int = 2):
        self.conv1 = Conv2d(c, c, 3, rng, dilation=dilation, bias=False)
        self.bn1 = BatchNorm2d(c)
        self.conv2 = Conv2d(c, c, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(c)

    def forward(self, x: Tensor) -> Tensor:
        h = F.relu(self.bn1(self.conv1(x)))
        return x + self.bn2(self.conv2(h))


@dataclass(frozen=True)
class SFEConfig:
    channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    res_blocks: int = 3
    dilation: int = 2

    @classmethod
    def tiny(cls, **kw) -> "SFEConfig":
        return cls(**{"channels": (16, 32, 64, 128), **kw})


class SFE(Module):
    """Gated-conv encoder/decoder emitting a coarse-to-fine pyramid S_0..S_3."""

    IN_CHANNELS = 3  # edge, line, mask

    def __init__(self, cfg: SFEConfig, rng: np.random.Generator):
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.channels
        self.down = [
            GatedConv(self.IN_CHANNELS, c0, rng, k=7, padding=3),
            GatedConv(c0, c1, rng, k=4, stride=2, padding=1),
            GatedConv(c1, c2, rng, k=4, stride=2, padding=1),
            GatedConv(c2, c3, rng, k=4, stride=2, padding=1),
        ]
        self.down_bn = [BatchNorm2d(c) for c in (c0, c1, c2, c3)]
        self.middle = [DilatedResBlock(c3, rng, cfg.dilation) for _ in range(cfg.res_blocks)]
        self.up = [GatedConv(a, b, rng, k=4, stride=2, transpose=True) for a, b in ((c3, c2), (c2, c1), (c1, c0))]
        self.up_bn = [BatchNorm2d(c) for c in (c2, c1, c0)]

    def forward(self, edge, line, mask) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        x = concat([_nchw(edge), _nchw(line), _nchw(mask)], axis=1)
        if x.shape[1] != self.IN_CHANNELS:
            raise DimensionError(f"SFE expects one channel each for edge, line and mask, got {x.shape[1]} total")
        _check_divisible(x, 8, "SFE")
        for conv, bn in zip(self.down, self.down_bn):
            x = F.relu(bn(conv(x)))
        for blk in self.middle:
            x = blk(x)
        taps = [x]
        for conv, bn in zip(self.up, self.up_bn):
            x = F.relu(bn(conv(x)))
            taps.append(x)
        return tuple(taps)


def sfe_forward(edge, line, mask, model: SFE):
    return model(edge, line, mask)


def _nchw(a) -> Tensor:
    t = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float32))
    if t.ndim != 4:
        raise DimensionError(f"expected N×C×H×W, got {t.shape}")
    return t


def _check_divisible(x: Tensor, k: int, who: str) -> None:
    if x.shape[2] % k or x.shape[3] % k:
        raise DimensionError(f"{who} needs spatial extents divisible by {k}, got {x.shape[2:]}")


# ---------------------------------------------------------------------------
# zero-initialized residual fusion
# ---------------------------------------------------------------------------

def zerora_fuse(x: Tensor, s: Tensor, alpha: Tensor, layer) -> Tensor:
    """layer(x + alpha·s); with alpha == 0 the output is bitwise layer(x) for finite s."""
    if x.shape != s.shape:
        raise DimensionError(f"feature {x.shape} and structure {s.shape} are not aligned")
    return layer(x + alpha * s)


class ConvBNReLU(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, transpose: bool = False):
        if transpose:
            self.conv = ConvTranspose2d(cin, cout, rng, k=k, stride=stride)
        else:
            self.conv = Conv2d(cin, cout, k, rng, stride=stride, padding=padding)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


# ---------------------------------------------------------------------------
# texture network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FTRConfig:
    channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    ffc_blocks: int = 9
    global_ratio: float = 0.5
    use_mpe: bool = True
    mpe: MPEConfig = MPEConfig()

    @classmethod
    def tiny(cls, **kw) -> "FTRConfig":
        return cls(**{"channels": (16, 32, 64, 128), "ffc_blocks": 3, **kw})


class FTR(Module):
    IN_CHANNELS = 4  # masked RGB + mask

    def __init__(self, cfg: FTRConfig, rng: np.random.Generator):
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.channels
        self.conv0 = Conv2d(self.IN_CHANNELS, c0, 7, rng, padding=3)
        self.bn0 = BatchNorm2d(c0)
        self.w_dir = Tensor((rng.standard_normal((4, cfg.mpe.d)) * 0.02).astype(np.float32), requires_grad=True)
        self.mpe_proj = Conv2d(cfg.mpe.d, c0, 1, rng, bias=False)
        self.down = [ConvBNReLU(c0, c1, 4, rng, 2, 1), ConvBNReLU(c1, c2, 4, rng, 2, 1),
                     ConvBNReLU(c2, c3, 4, rng, 2, 1)]
        self.blocks = [FFCBlock(c3, cfg.global_ratio, rng) for _ in range(cfg.ffc_blocks)]
        self.up = [ConvBNReLU(c3, c2, 4, rng, 2, transpose=True), ConvBNReLU(c2, c1, 4, rng, 2, transpose=True),
                   ConvBNReLU(c1, c0, 4, rng, 2, transpose=True)]
        self.out = Conv2d(c0, 3, 7, rng, padding=3)
        # fusion weights, S_k ↔ alpha_k
        self.alpha0 = _zeros(())
        self.alpha1 = _zeros(())
        self.alpha2 = _zeros(())
        self.alpha3 = _zeros(())

    @property
    def alphas(self) -> list[Tensor]:
        return [self.alpha0, self.alpha1, self.alpha2, self.alpha3]

    def set_alphas(self, value: float) -> None:
        for a in self.alphas:
            a.data = np.full((), value, dtype=a.dtype)

    def mpe_features(self, mask: np.ndarray) -> Tensor:
        return mpe_batch(np.asarray(mask), self.w_dir, self.cfg.mpe)

    def _middle(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x

    def forward(self, image, mask, structure=None) -> Tensor:
        """Raw tanh prediction, N×3×H×W (no compositing)."""
        image, mask_t = _nchw(image), _nchw(mask)
        if image.shape[1] != 3 or mask_t.shape[1] != 1 or image.shape[2:] != mask_t.shape[2:]:
            raise DimensionError(f"FTR expects N×3×H×W image and N×1×H×W mask, got {image.shape} and {mask_t.shape}")
        _check_divisible(image, 8, "FTR")
        dtype = self.conv0.weight.dtype
        m = mask_t.data.astype(dtype)
        img = image if image.dtype == dtype else image.astype(dtype)
        x = concat([img * (1 - m), Tensor(m)], axis=1)
        h = self.conv0(x)
        if self.cfg.use_mpe:
            h = h + self.mpe_proj(self.mpe_features(m.astype(np.uint8)))
        h = F.relu(self.bn0(h))
        if structure is None:
            for layer in self.down:
                h = layer(h)
            h = self._middle(h)
        else:
            s0, s1, s2, s3 = structure
            fine_to_coarse = [(s3, self.alpha3), (s2, self.alpha2), (s1, self.alpha1)]
            for layer, (s, a) in zip(self.down, fine_to_coarse):
                h = zerora_fuse(h, s, a, layer)
            h = zerora_fuse(h, s0, self.alpha0, self._middle)
        for layer in self.up:
            h = layer(h)
        return F.tanh(self.out(h))


def composite(pred: Tensor, image, mask) -> Tensor:
    """mask·pred + (1 − mask)·image; known pixels are copied, not recomputed."""
    m = np.asarray(_nchw(mask).data, dtype=pred.dtype)
    img = _nchw(image)
    if img.dtype != pred.dtype:
        img = img.astype(pred.dtype)
    return pred * m + img * (1 - m)


def ftr_forward(image, mask, model: FTR, structure=None) -> np.ndarray:
    """Inference: composited N×3×H×W result."""
    with no_grad():
        return composite(model(image, mask, structure), image, mask).data
