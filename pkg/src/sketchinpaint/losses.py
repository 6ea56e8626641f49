"""Loss terms for structure and texture training, the patch discriminator, and the HRF extractor."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, as_tensor, conv_transpose2d, no_grad
from .tensor import functional as F
from .tensor.nn import Conv2d, Module

LOGIT_CLAMP = 20.0
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    l1: float = 10.0
    adv: float = 10.0
    fm: float = 100.0
    hrf: float = 30.0
    gp: float = 1e-3
    l1_normalize: str = "grid"  # or "unmasked"

    def __post_init__(self):
        for k in ("l1", "adv", "fm", "hrf", "gp"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be non-negative")
        if self.l1_normalize not in ("grid", "unmasked"):
            raise ValueError(f"l1_normalize must be 'grid' or 'unmasked', got {self.l1_normalize!r}")


@dataclass
class LossReport:
    step: int
    l1: float
    l_d: float
    l_g: float
    gp: float
    fm: float
    hrf: float
    total: float

    @classmethod
    def from_terms(cls, cfg: LossConfig, step: int, l1: float, l_d: float, l_g: float, gp: float,
                   fm: float, hrf: float) -> "LossReport":
        total = (cfg.l1 * l1 + cfg.adv * (l_d + l_g + cfg.gp * gp) + cfg.fm * fm + cfg.hrf * hrf)
        return cls(step, float(l1), float(l_d), float(l_g), float(gp), float(fm), float(hrf), float(total))

    def row(self) -> dict:
        return asdict(self)


def _nchw(x) -> Tensor:
    t = as_tensor(x)
    if t.ndim == 2:
        t = t.reshape(1, 1, *t.shape)
    elif t.ndim == 3:
        t = t.reshape(1, *t.shape)
    return t


# ---------------------------------------------------------------------------
# reconstruction terms
# ---------------------------------------------------------------------------

def bce_structure_loss(pred, edge_gt, line_gt) -> tuple[Tensor, Tensor]:
    """Mean BCE of N×2×H×W edge/line probabilities against their targets."""
    pred = _nchw(pred)
    e, l = np.asarray(edge_gt, dtype=pred.dtype), np.asarray(line_gt, dtype=pred.dtype)
    n, c, h, w = pred.shape
    if c != 2 or e.size != n * h * w or l.size != n * h * w:
        raise DimensionError(f"prediction {pred.shape} does not match targets {e.shape}, {l.shape}")
    return (F.bce(pred[:, 0:1], e.reshape(n, 1, h, w), BCE_EPS),
            F.bce(pred[:, 1:2], l.reshape(n, 1, h, w), BCE_EPS))


def bce_structure_loss_logits(logits, edge_gt, line_gt) -> tuple[Tensor, Tensor]:
    """Same loss from logits; numerically stable for training."""
    logits = _nchw(logits)
    n, _, h, w = logits.shape
    e = np.asarray(edge_gt, dtype=logits.dtype).reshape(n, 1, h, w)
    l = np.asarray(line_gt, dtype=logits.dtype).reshape(n, 1, h, w)
    return F.bce_with_logits(logits[:, 0:1], e), F.bce_with_logits(logits[:, 1:2], l)


def l1_unmasked(pred, gt, mask, normalize: str = "grid") -> Tensor:
    """Mean of (1 − M)·|gt − pred|; M = 1 marks masked pixels.

    ``normalize="grid"`` divides by every element, ``"unmasked"`` only by
    the unmasked ones (0 when nothing is unmasked).
    """
    pred = as_tensor(pred)
    gt = as_tensor(gt, dtype=pred.dtype)
    m = np.asarray(mask, dtype=pred.dtype)
    try:
        keep = np.broadcast_to(1 - m, pred.shape)
    except ValueError as exc:
        raise DimensionError(f"mask {m.shape} does not broadcast to {pred.shape}") from exc
    err = (gt - pred).abs() * keep
    if normalize == "grid":
        return err.mean()
    if normalize == "unmasked":
        return err.sum() / max(float(keep.sum()), 1.0)
    raise ValueError(f"unknown normalization {normalize!r}")


def feature_match_loss(real_feats: Sequence[Tensor], fake_feats: Sequence[Tensor]) -> Tensor:
    """Mean over layers of the mean absolute feature difference; real features are constants."""
    if len(real_feats) != len(fake_feats):
        raise ContractError(f"{len(real_feats)} real layers vs {len(fake_feats)} fake layers")
    if not real_feats:
        raise ContractError("feature matching needs at least one layer")
    terms = [(as_tensor(f) - as_tensor(r).data).abs().mean() for r, f in zip(real_feats, fake_feats)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / len(terms)


# ---------------------------------------------------------------------------
# high receptive field perceptual term
# ---------------------------------------------------------------------------

class HRFExtractor(Module):
    """Fixed random dilated conv stack standing in for a pretrained segmentation backbone."""

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (8, 16, 16), dilations: tuple[int, ...] = (1, 2, 4),
                 in_ch: int = 3):
        rng = np.random.default_rng(seed)
        chans = (in_ch, *channels)
        self.convs = [Conv2d(a, b, 3, rng, dilation=d) for a, b, d in zip(chans[:-1], chans[1:], dilations)]
        for p in self.parameters():
            p.requires_grad = False

    def forward(self, x) -> list[Tensor]:
        h = as_tensor(x)
        feats = []
        for conv in self.convs:
            h = F.relu(conv(h))
            feats.append(h)
        return feats


def hrf_loss(pred, gt, extractor: Callable[[Tensor], Sequence[Tensor]]) -> Tensor:
    """Mean over layers of the mean squared feature difference."""
    pred = as_tensor(pred)
    with no_grad():
        target = [f.data for f in extractor(as_tensor(gt, dtype=pred.dtype))]
    feats = extractor(pred)
    if len(feats) != len(target):
        raise ContractError("extractor returned a different number of layers for pred and gt")
    total = None
    for f, t in zip(feats, target):
        term = ((f - t) ** 2).mean()
        total = term if total is None else total + term
    return total / len(feats)


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

class PatchDiscriminator(Module):
    """Four stride-2 4×4 convs with leaky ReLU; emits clamped patch logits and hidden features."""

    def __init__(self, rng: np.random.Generator, in_ch: int = 3, channels: tuple[int, int, int] = (16, 32, 64),
                 slope: float = 0.2):
        chans = (in_ch, *channels, 1)
        self.slope = slope
        self.convs = [Conv2d(a, b, 4, rng, stride=2, padding=1) for a, b in zip(chans[:-1], chans[1:])]

    def forward(self, x) -> tuple[Tensor, list[Tensor]]:
        h = as_tensor(x)
        if h.ndim != 4 or h.shape[1] != self.convs[0].weight.shape[1]:
            raise DimensionError(f"discriminator expects N×{self.convs[0].weight.shape[1]}×H×W, got {h.shape}")
        feats = []
        for conv in self.convs[:-1]:
            h = F.leaky_relu(conv(h), self.slope)
            feats.append(h)
        return self.convs[-1](h).clamp(-LOGIT_CLAMP, LOGIT_CLAMP), feats

    def input_gradient(self, x) -> Tensor:
        """∂(Σ patch logits)/∂x per sample, as a graph that is differentiable in the weights.

        Activation slopes and the clamp window are piecewise constant, so they
        enter as fixed masks; each layer's adjoint is a transposed conv with
        the same weight.
        """
        x = as_tensor(x).detach()
        pre, sizes = [], []
        with no_grad():
            h = x
            for i, conv in enumerate(self.convs):
                sizes.append(h.shape[2:])
                z = conv(h)
                pre.append(z.data)
                h = F.leaky_relu(z, self.slope) if i < len(self.convs) - 1 else z
        z_last = pre[-1]
        g = Tensor(((z_last >= -LOGIT_CLAMP) & (z_last <= LOGIT_CLAMP)).astype(x.dtype))
        for i in range(len(self.convs) - 1, -1, -1):
            conv = self.convs[i]
            g = conv_transpose2d(g, conv.weight, None, conv.stride, conv.padding, output_size=sizes[i])
            if i > 0:
                g = g * np.where(pre[i - 1] > 0, 1.0, self.slope).astype(x.dtype)
        return g


def _downsample_mask(mask: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    h, w = mask.shape[-2:]
    rows = F.nearest_index(h, grid[0])
    cols = F.nearest_index(w, grid[1])
    return mask[..., rows[:, None], cols[None, :]]


def adversarial_terms(real_logits, fake_logits, mask) -> tuple[Tensor, Tensor]:
    """(L_D, L_G) from patch logits; only masked patches of the fake count as fake.

    Gradients flow into both logit maps; callers decide what is constant.
    The mask (N×1×H×W, 1 = masked) is nearest-downsampled to the patch grid.
    """
    real_logits, fake_logits = as_tensor(real_logits), as_tensor(fake_logits)
    m = np.asarray(mask, dtype=fake_logits.dtype)
    if m.ndim != 4 or m.shape[0] != fake_logits.shape[0] or m.shape[1] != 1:
        raise DimensionError(f"mask {m.shape} does not match patch logits {fake_logits.shape}")
    if m.shape[2] < fake_logits.shape[2] or m.shape[3] < fake_logits.shape[3]:
        raise DimensionError(f"mask {m.shape[2:]} is coarser than the patch grid {fake_logits.shape[2:]}")
    mp = _downsample_mask(m, fake_logits.shape[2:])
    # −log σ(z) = softplus(−z); −log(1 − σ(z)) = softplus(z)
    l_d = (F.softplus(-real_logits).mean() + (F.softplus(-fake_logits) * (1 - mp)).mean()
           + (F.softplus(fake_logits) * mp).mean())
    l_g = F.softplus(-fake_logits).mean()
    return l_d, l_g


def adversarial_losses(D: PatchDiscriminator, real, fake, mask) -> tuple[Tensor, Tensor]:
    """Discriminator and generator losses. L_D treats ``fake`` as a constant."""
    real, fake = as_tensor(real), as_tensor(fake)
    if real.shape != fake.shape:
        raise DimensionError(f"real {real.shape} and fake {fake.shape} differ")
    m = np.asarray(mask)
    if m.shape != (real.shape[0], 1, *real.shape[2:]):
        raise DimensionError(f"mask {m.shape} does not match images {real.shape}")
    real_logits, _ = D(real.detach())
    l_d, _ = adversarial_terms(real_logits, D(fake.detach())[0], m)
    _, l_g = adversarial_terms(real_logits.detach(), D(fake)[0], m)
    return l_d, l_g


def gradient_penalty(D: PatchDiscriminator, real) -> Tensor:
    """E‖∇_x D(x)‖² over the batch, with D(x) summed over patches."""
    g = D.input_gradient(real)
    return (g * g).sum() / g.shape[0]
