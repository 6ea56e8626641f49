"""Transformer structure restorer.

Strided conv embedding, learned absolute position table, blocks of
row-axial / column-axial / global attention (pre-norm), transposed-conv
decoder to two sigmoid maps (edges, lines), and Mask-Predict sampling.
Activations inside the attention stack are channel-last: B×h×w×c.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, no_grad
from .tensor import functional as F
from .tensor.nn import Conv2d, ConvTranspose2d, LayerNorm, Linear, Module, _zeros

INIT_STD = 0.02  # projection init inside the transformer


# ---------------------------------------------------------------------------
# score-entry instrumentation
# ---------------------------------------------------------------------------

class ScoreCounter:
    def __init__(self):
        self.axial = 0
        self.standard = 0

    @property
    def total(self) -> int:
        return self.axial + self.standard


_counters: list[ScoreCounter] = []


@contextmanager
def count_scores():
    """Count attention-score entries allocated inside the block."""
    c = ScoreCounter()
    _counters.append(c)
    try:
        yield c
    finally:
        _counters.remove(c)


def _record(kind: str, n: int) -> None:
    for c in _counters:
        setattr(c, kind, getattr(c, kind) + n)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

class AttentionParams(Module):
    """Query/key/value/output projections for multi-head attention over c channels."""

    def __init__(self, c: int, heads: int, rng: np.random.Generator):
        if c % heads:
            raise ValueError(f"channels {c} not divisible by heads {heads}")
        self.wq = Linear(c, c, rng, bias=False, std=INIT_STD)
        self.wk = Linear(c, c, rng, bias=False, std=INIT_STD)
        self.wv = Linear(c, c, rng, bias=False, std=INIT_STD)
        self.wo = Linear(c, c, rng, std=INIT_STD)
        self.heads = heads


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # ..., L, c -> ..., heads, L, c_head
    *lead, n, c = t.shape
    t = t.reshape(*lead, n, heads, c // heads)
    nd = t.ndim
    perm = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return t.transpose(perm)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, heads, n, ch = t.shape
    nd = t.ndim
    perm = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return t.transpose(perm).reshape(*lead, n, heads * ch)


def _attend(x: Tensor, p: AttentionParams, bias: Tensor | None, kind: str) -> Tensor:
    """Attention over the second-to-last axis of ``x`` (…×L×c)."""
    q = _split_heads(p.wq(x), p.heads)
    k = _split_heads(p.wk(x), p.heads)
    v = _split_heads(p.wv(x), p.heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.swapaxes(-1, -2)) * scale
    if bias is not None:
        scores = scores + bias
    _record(kind, scores.size)
    attn = F.softmax(scores, axis=-1)
    return p.wo(_merge_heads(attn @ v))


def axial_scores(x: Tensor, axis: str, p: AttentionParams, rpe: Tensor | None) -> Tensor:
    """Pre-softmax scores, heads-split: B×h×heads×w×w (row) or B×w×heads×h×h (col)."""
    seq = _axis_view(x, axis)
    q = _split_heads(p.wq(seq), p.heads)
    k = _split_heads(p.wk(seq), p.heads)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    return scores if rpe is None else scores + rpe


def _axis_view(x: Tensor, axis: str) -> Tensor:
    if axis == "row":
        return x
    if axis == "col":
        return x.transpose(0, 2, 1, 3)
    raise ContractError(f"axis must be 'row' or 'col', got {axis!r}")


def axial_attention(x: Tensor, axis: str, p: AttentionParams, rpe: Tensor | None = None) -> Tensor:
    """Self-attention restricted to one spatial axis of a B×h×w×c tensor.

    ``axis='row'``: every row attends among its w positions, with relative
    position table ``rpe`` of shape heads×w×w added to the scores before the
    softmax. ``axis='col'`` is the same along columns with a heads×h×h table.
    """
    if x.ndim != 4:
        raise DimensionError(f"axial attention expects B×h×w×c, got {x.shape}")
    seq = _axis_view(x, axis)
    n = seq.shape[2]
    if rpe is not None and rpe.shape != (p.heads, n, n):
        raise DimensionError(f"RPE table {rpe.shape} does not match {p.heads} heads × {n} positions")
    out = _attend(seq, p, rpe, "axial")
    return out if axis == "row" else out.transpose(0, 2, 1, 3)


def standard_attention(x: Tensor, p: AttentionParams) -> Tensor:
    """Global attention over all h·w positions of a B×h×w×c tensor."""
    b, h, w, c = x.shape
    return _attend(x.reshape(b, h * w, c), p, None, "standard").reshape(b, h, w, c)


class MLP(Module):
    def __init__(self, c: int, ratio: int, rng: np.random.Generator):
        self.fc1 = Linear(c, c * ratio, rng, std=INIT_STD)
        self.fc2 = Linear(c * ratio, c, rng, std=INIT_STD)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm: row-axial, column-axial, global attention, MLP; each with a residual."""

    def __init__(self, c: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4):
        self.norm_row = LayerNorm(c)
        self.row = AttentionParams(c, heads, rng)
        self.norm_col = LayerNorm(c)
        self.col = AttentionParams(c, heads, rng)
        self.norm_attn = LayerNorm(c)
        self.attn = AttentionParams(c, heads, rng)
        self.norm_mlp = LayerNorm(c)
        self.mlp = MLP(c, mlp_ratio, rng)

    def forward(self, x: Tensor, rpe_row: Tensor | None = None, rpe_col: Tensor | None = None) -> Tensor:
        x = x + axial_attention(self.norm_row(x), "row", self.row, rpe_row)
        x = x + axial_attention(self.norm_col(x), "col", self.col, rpe_col)
        x = x + standard_attention(self.norm_attn(x), self.attn)
        return x + self.mlp(self.norm_mlp(x))


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TSRConfig:
    image_size: int = 256
    channels: tuple[int, int, int, int] = (64, 128, 256, 256)
    heads: int = 8
    blocks: int = 8
    mlp_ratio: int = 4
    line_logit_scale: float = 4.0
    boost_lines_at_inference: bool = True

    @property
    def attn_size(self) -> int:
        return self.image_size // 8

    @property
    def width(self) -> int:
        return self.channels[-1]

    @classmethod
    def tiny(cls, image_size: int = 64, **kw) -> "TSRConfig":
        base = dict(image_size=image_size, channels=(32, 64, 64, 32), heads=2, blocks=2)
        base.update(kw)
        return cls(**base)


@dataclass
class SketchInput:
    """Batched TSR inputs, all N×C×H×W numpy arrays.

    ``image`` in [-1, 1] (3 channels); ``edge`` and ``line`` in [0, 1];
    ``mask`` with 1 = masked. Masked pixels of image/edge/line are zeroed by
    ``stacked``.
    """

    image: np.ndarray
    edge: np.ndarray
    line: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        n, _, h, w = self.mask.shape
        for name, want in (("image", 3), ("edge", 1), ("line", 1), ("mask", 1)):
            arr = getattr(self, name)
            if arr.shape != (n, want, h, w):
                raise DimensionError(f"{name} has shape {arr.shape}, expected {(n, want, h, w)}")

    def stacked(self, dtype=np.float32) -> np.ndarray:
        keep = 1.0 - self.mask
        return np.concatenate([self.image * keep, self.edge * keep, self.line * keep, self.mask],
                              axis=1).astype(dtype)


class TSR(Module):
    IN_CHANNELS = 6

    def __init__(self, cfg: TSRConfig, rng: np.random.Generator):
        self.cfg = cfg
        c0, c1, c2, c3 = cfg.channels
        s = cfg.attn_size
        self.enc0 = Conv2d(self.IN_CHANNELS, c0, 7, rng, padding=3)
        self.enc1 = Conv2d(c0, c1, 4, rng, stride=2, padding=1)
        self.enc2 = Conv2d(c1, c2, 4, rng, stride=2, padding=1)
        self.enc3 = Conv2d(c2, c3, 4, rng, stride=2, padding=1)
        self.pos = Tensor((rng.standard_normal((1, s, s, c3)) * 0.02).astype(np.float32), requires_grad=True)
        self.rpe_row = _zeros((cfg.heads, s, s))
        self.rpe_col = _zeros((cfg.heads, s, s))
        self.blocks = [TransformerBlock(c3, cfg.heads, rng, cfg.mlp_ratio) for _ in range(cfg.blocks)]
        self.norm_out = LayerNorm(c3)
        self.dec0 = ConvTranspose2d(c3, c2, rng)
        self.dec1 = ConvTranspose2d(c2, c1, rng)
        self.dec2 = ConvTranspose2d(c1, c0, rng)
        self.out = Conv2d(c0, 2, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        """N×6×H×W stacked input → N×2×H×W logits (edge, line)."""
        if x.ndim != 4 or x.shape[1] != self.IN_CHANNELS:
            raise DimensionError(f"TSR expects N×{self.IN_CHANNELS}×H×W input, got {x.shape}")
        h = F.relu(self.enc0(x))
        h = F.relu(self.enc1(h))
        h = F.relu(self.enc2(h))
        h = F.relu(self.enc3(h))
        if h.shape[2:] != self.pos.shape[1:3]:
            raise DimensionError(f"attention grid {h.shape[2:]} != position table {self.pos.shape[1:3]}")
        t = h.transpose(0, 2, 3, 1) + self.pos
        for blk in self.blocks:
            t = blk(t, self.rpe_row, self.rpe_col)
        h = self.norm_out(t).transpose(0, 3, 1, 2)
        h = F.relu(self.dec0(h))
        h = F.relu(self.dec1(h))
        h = F.relu(self.dec2(h))
        return self.out(h)

    def probabilities(self, inp: SketchInput, inference: bool = True) -> Tensor:
        logits = self.forward(Tensor(inp.stacked(self.pos.dtype)))
        if inference and self.cfg.boost_lines_at_inference:
            scale = np.array([1.0, self.cfg.line_logit_scale], dtype=logits.dtype).reshape(1, 2, 1, 1)
            logits = logits * scale
        return F.sigmoid(logits)

    def predict(self, inp: SketchInput) -> np.ndarray:
        with no_grad():
            return self.probabilities(inp, inference=True).data


def tsr_forward(inp: SketchInput, model: TSR) -> np.ndarray:
    """Inference-mode edge/line probabilities, N×2×H×W."""
    return model.predict(inp)


# ---------------------------------------------------------------------------
# Mask-Predict
# ---------------------------------------------------------------------------

@dataclass
class MaskPredictResult:
    probs: np.ndarray  # N×2×H×W final maps (input values outside the mask)
    committed_counts: list[np.ndarray] = field(default_factory=list)  # per iteration, N×2
    confidences: list[np.ndarray] = field(default_factory=list)  # per iteration, N×2×H×W

    @property
    def edge(self) -> np.ndarray:
        return self.probs[:, :1]

    @property
    def line(self) -> np.ndarray:
        return self.probs[:, 1:]


def commit_schedule(t: int, iters: int, masked: int) -> int:
    """Cumulative number of committed pixels after iteration t: ceil(t/T · masked)."""
    return -(-t * masked // iters)


def mask_predict(inp: SketchInput, model: TSR, iters: int = 5, threshold: float = 0.5) -> MaskPredictResult:
    """Iteratively commit the most confident masked predictions and re-predict the rest.

    Only the edge/line channels are re-masked; the image and mask inputs stay
    fixed. Committed pixels keep the probability they had when committed and
    are fed back binarized at ``threshold``.
    """
    if iters < 1:
        raise ContractError(f"Mask-Predict needs at least one iteration, got {iters}")
    masked = inp.mask[:, 0].astype(bool)  # N×H×W
    n, _, h, w = inp.mask.shape
    known = np.concatenate([inp.edge, inp.line], axis=1).astype(np.float64)
    out = known * (1 - inp.mask)
    committed = np.zeros((n, 2, h, w), dtype=bool)
    feed = out.copy()
    result = MaskPredictResult(out)
    flat_idx = np.arange(h * w)
    for t in range(1, iters + 1):
        cur = SketchInput(inp.image, feed[:, :1], feed[:, 1:], inp.mask)
        probs = model.predict(cur).astype(np.float64)
        conf = np.maximum(probs, 1 - probs)
        result.confidences.append(conf)
        counts = np.zeros((n, 2), dtype=np.int64)
        for b in range(n):
            region = masked[b].reshape(-1)
            total = int(region.sum())
            target = commit_schedule(t, iters, total)
            for ch in range(2):
                done = committed[b, ch].reshape(-1)
                need = target - int(done.sum())
                if need > 0:
                    cand = flat_idx[region & ~done]
                    c = conf[b, ch].reshape(-1)[cand]
                    # highest confidence first, ties by ascending pixel index
                    order = np.lexsort((cand, -c))[:need]
                    pick = cand[order]
                    done[pick] = True
                    committed[b, ch].reshape(-1)[pick] = True
                    out[b, ch].reshape(-1)[pick] = probs[b, ch].reshape(-1)[pick]
                counts[b, ch] = int(committed[b, ch].sum())
        result.committed_counts.append(counts)
        binar = (out >= threshold).astype(np.float64)
        feed = np.where(committed, binar, known * (1 - inp.mask))
    result.probs = out
    return result
