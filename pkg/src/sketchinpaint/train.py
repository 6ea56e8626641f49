"""Toy-scale training loops: structure transformer, structure upsampler, texture pretraining and
zero-initialized structure finetuning."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .data import MaskGenConfig, SyntheticSceneConfig, generate_mask, synth_scene
from .losses import (
    HRFExtractor,
    LossConfig,
    LossReport,
    PatchDiscriminator,
    adversarial_terms,
    bce_structure_loss_logits,
    feature_match_loss,
    gradient_penalty,
    hrf_loss,
    l1_unmasked,
)
from .metrics import PRF, edge_line_prf, psnr
from .sketch import SSU, random_segments, rasterize_lines
from .tensor import Tensor, backward, no_grad
from .tensor import functional as F
from .tensor.nn import Module, freeze_batchnorm_stats
from .tensor.optim import Adam, linear_warmup, warmup_cosine
from .tensor.serialize import save_checkpoint
from .texture import FTR, SFE, composite
from .tsr import TSR, SketchInput

HELD_OUT_OFFSET = 1_000_000_000  # evaluation seeds never overlap training seeds


class NumericError(RuntimeError):
    """A loss became NaN or infinite."""


def _check_finite(step: int, **terms: float) -> None:
    bad = {k: v for k, v in terms.items() if not math.isfinite(v)}
    if bad:
        raise NumericError(f"non-finite loss at step {step}: {bad}")


# ---------------------------------------------------------------------------
# logs
# ---------------------------------------------------------------------------

@dataclass
class CurveLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if key in r], dtype=np.float64)

    def write_csv(self, path) -> None:
        keys: list[str] = []
        for r in self.rows:
            keys += [k for k in r if k not in keys]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.rows)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average; entry t averages values[max(0, t-window+1) : t+1]."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _save(model: Module, ckpt_dir, step: int) -> None:
    if ckpt_dir is None:
        return
    Path(ckpt_dir).mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    save_checkpoint(Path(ckpt_dir) / f"step_{step:06d}.ckpt", state)


# ---------------------------------------------------------------------------
# data batches
# ---------------------------------------------------------------------------

@dataclass
class SceneBatch:
    image: np.ndarray  # N×3×H×W in [-1, 1]
    edge: np.ndarray  # N×1×H×W
    line: np.ndarray  # N×1×H×W
    mask: np.ndarray  # N×1×H×W, 1 = masked

    def sketch_input(self) -> SketchInput:
        return SketchInput(self.image, self.edge, self.line, self.mask)


def scene_batch(seeds: Iterable[int], scene_cfg: SyntheticSceneConfig, mask_cfg: MaskGenConfig) -> SceneBatch:
    if mask_cfg.size != scene_cfg.size:
        raise ValueError(f"mask size {mask_cfg.size} != scene size {scene_cfg.size}")
    imgs, edges, lines, masks = [], [], [], []
    for s in seeds:
        sc = synth_scene(scene_cfg, s)
        imgs.append(sc.image * 2 - 1)
        edges.append(sc.edge[None])
        lines.append(sc.line[None])
        masks.append(generate_mask(mask_cfg, s)[None].astype(np.float64))
    return SceneBatch(*(np.stack(a).astype(np.float32) for a in (imgs, edges, lines, masks)))


# ---------------------------------------------------------------------------
# structure transformer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TSRTrainConfig:
    steps: int = 500
    batch: int = 16
    lr: float = 4e-3
    warmup: int = 50
    seed: int = 0
    ckpt_every: int = 0
    fixed_data: bool = False  # reuse the first batch every step
    scene: SyntheticSceneConfig = SyntheticSceneConfig()
    mask: MaskGenConfig = MaskGenConfig()


@dataclass
class TrainResult:
    model: Module
    log: CurveLog

    @property
    def losses(self) -> np.ndarray:
        return self.log.column("loss")


def _train_seeds(seed: int, step: int, batch: int) -> range:
    start = seed * 10_000_019 + step * batch
    return range(start, start + batch)


def train_tsr_toy(model: TSR, cfg: TSRTrainConfig = TSRTrainConfig(), ckpt_dir=None,
                  on_step: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Adam with linear warmup and cosine decay on L_e + L_l (BCE from logits, full grid)."""
    opt = Adam(model.parameters(), lr=cfg.lr)
    log = CurveLog()
    model.train()
    fixed = scene_batch(_train_seeds(cfg.seed, 0, cfg.batch), cfg.scene, cfg.mask) if cfg.fixed_data else None
    _save(model, ckpt_dir, 0)
    for step in range(cfg.steps):
        lr = warmup_cosine(step, cfg.lr, cfg.warmup, cfg.steps)
        b = fixed or scene_batch(_train_seeds(cfg.seed, step, cfg.batch), cfg.scene, cfg.mask)
        logits = model(Tensor(b.sketch_input().stacked(model.pos.dtype)))
        le, ll = bce_structure_loss_logits(logits, b.edge, b.line)
        loss = le + ll
        row = dict(step=step, lr=lr, loss=float(loss.data), edge_bce=float(le.data), line_bce=float(ll.data))
        _check_finite(step, loss=row["loss"])
        opt.zero_grad()
        backward(loss)
        opt.step(lr)
        log.add(**row)
        if on_step is not None:
            on_step(step, row)
        if cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            _save(model, ckpt_dir, step + 1)
    return TrainResult(model, log)


def evaluate_tsr(model: TSR, scenes: int = 64, seed: int = 0, scene_cfg: SyntheticSceneConfig = SyntheticSceneConfig(),
                 mask_cfg: MaskGenConfig = MaskGenConfig(), batch: int = 16, threshold: float = 0.5) -> dict[str, PRF]:
    """Masked-region edge and line P/R/F1 on held-out scenes (plain inference forward)."""
    model.eval()
    edge, line = PRF(0, 0, 0), PRF(0, 0, 0)
    start = HELD_OUT_OFFSET + seed * 10_000
    for lo in range(0, scenes, batch):
        b = scene_batch(range(start + lo, start + min(lo + batch, scenes)), scene_cfg, mask_cfg)
        probs = model.predict(b.sketch_input())
        edge = edge + edge_line_prf(probs[:, :1], b.edge, b.mask, threshold)
        line = line + edge_line_prf(probs[:, 1:], b.line, b.mask, threshold)
    model.train()
    return {"edge": edge, "line": line}


# ---------------------------------------------------------------------------
# structure upsampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SSUTrainConfig:
    steps: int = 1000
    batch: int = 8
    lr: float = 1e-3
    warmup: int = 50
    crop: int = 32  # coarse training size; the target is drawn at twice this
    segments: tuple[int, int] = (2, 5)
    width: tuple[float, float] = (1.0, 2.0)  # line width in coarse pixels
    seed: int = 0


def line_pair(rng: np.random.Generator, size: int, segments=(2, 5), width=(1.0, 2.0)) -> tuple[np.ndarray, np.ndarray]:
    """(coarse raster at size, target raster at 2·size) of the same random segments."""
    n = int(rng.integers(segments[0], segments[1] + 1))
    lines = random_segments(rng, n, width=width, min_length=0.2)
    return (rasterize_lines(lines, size, size, ref_size=size),
            rasterize_lines(lines, 2 * size, 2 * size, ref_size=size))


def _pair_batch(rng, n, size, cfg: SSUTrainConfig) -> tuple[np.ndarray, np.ndarray]:
    pairs = [line_pair(rng, size, cfg.segments, cfg.width) for _ in range(n)]
    return (np.stack([p[0] for p in pairs])[:, None].astype(np.float32),
            np.stack([p[1] for p in pairs])[:, None].astype(np.float32))


def train_ssu(model: SSU, cfg: SSUTrainConfig = SSUTrainConfig()) -> TrainResult:
    """BCE between sigmoid(logits) and the 2× raster (soft coverage targets)."""
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    log = CurveLog()
    for step in range(cfg.steps):
        lr = warmup_cosine(step, cfg.lr, cfg.warmup, cfg.steps)
        x, y = _pair_batch(rng, cfg.batch, cfg.crop, cfg)
        loss = F.bce_with_logits(model(Tensor(x)), y)
        _check_finite(step, loss=float(loss.data))
        opt.zero_grad()
        backward(loss)
        opt.step(lr)
        log.add(step=step, lr=lr, loss=float(loss.data))
    return TrainResult(model, log)


def evaluate_ssu(model: SSU, sets: int = 32, size: int = 64, seed: int = 0, cfg: SSUTrainConfig = SSUTrainConfig()) -> PRF:
    """F1 of sigmoid(logits) > 0.5 against the binarized 2× raster on held-out segment sets."""
    rng = np.random.default_rng(HELD_OUT_OFFSET + seed)
    total = PRF(0, 0, 0)
    with no_grad():
        for _ in range(sets):
            x, y = _pair_batch(rng, 1, size, cfg)
            logits = model(Tensor(x.astype(model.conv1.weight.dtype))).data
            total = total + edge_line_prf((logits > 0).astype(np.float64), y)
    return total


# ---------------------------------------------------------------------------
# texture restorer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GANTrainConfig:
    steps: int = 300
    batch: int = 2
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    sfe_warmup: int = 20  # linear warmup of the structure encoder's learning rate
    seed: int = 0
    val_every: int = 25
    val_scenes: int = 8
    loss: LossConfig = LossConfig()
    scene: SyntheticSceneConfig = SyntheticSceneConfig()
    mask: MaskGenConfig = MaskGenConfig()


@dataclass
class GANResult:
    ftr: FTR
    sfe: SFE | None
    disc: PatchDiscriminator
    reports: list[LossReport]
    val_psnr: list[tuple[int, float]]

    @property
    def alphas(self) -> list[float]:
        return [float(a.data) for a in self.ftr.alphas]


def validation_set(cfg: GANTrainConfig) -> SceneBatch:
    start = HELD_OUT_OFFSET + cfg.seed * 10_000
    return scene_batch(range(start, start + cfg.val_scenes), cfg.scene, cfg.mask)


def validation_outputs(ftr: FTR, val: SceneBatch, sfe: SFE | None = None) -> np.ndarray:
    """Composited eval-mode outputs in [-1, 1]."""
    was_training = ftr.training
    ftr.eval()
    if sfe is not None:
        sfe.eval()
    with no_grad():
        pyramid = None if sfe is None else sfe(val.edge, val.line, val.mask)
        pred = ftr(val.image, val.mask, pyramid)
        out = composite(pred, val.image, val.mask).data
    ftr.train(was_training)
    if sfe is not None:
        sfe.train(was_training)
    return out


def validation_psnr(ftr: FTR, val: SceneBatch, sfe: SFE | None = None) -> float:
    out = validation_outputs(ftr, val, sfe)
    return float(np.mean([psnr((o + 1) / 2, (g + 1) / 2) for o, g in zip(out, val.image)]))


def _gan_step(step: int, ftr: FTR, sfe: SFE | None, disc: PatchDiscriminator, opts_g: list[tuple[Adam, float]],
              opt_d: Adam, lr_d: float, b: SceneBatch, cfg: LossConfig, hrf: HRFExtractor) -> LossReport:
    real = Tensor(b.image)
    # discriminator update on a detached generator output
    with no_grad():
        pyramid = None if sfe is None else sfe(b.edge, b.line, b.mask)
        fake_const = ftr(b.image, b.mask, pyramid).data
    real_logits, _ = disc(real)
    fake_logits, _ = disc(Tensor(fake_const))
    l_d, _ = adversarial_terms(real_logits, fake_logits, b.mask)
    gp = gradient_penalty(disc, real)
    loss_d = l_d + cfg.gp * gp
    opt_d.zero_grad()
    backward(loss_d)
    opt_d.step(lr_d)
    # generator update
    pyramid = None if sfe is None else sfe(b.edge, b.line, b.mask)
    pred = ftr(b.image, b.mask, pyramid)
    l1 = l1_unmasked(pred, b.image, b.mask, cfg.l1_normalize)
    fake_logits, fake_feats = disc(pred)
    with no_grad():
        _, real_feats = disc(real)
    _, l_g = adversarial_terms(real_logits.detach(), fake_logits, b.mask)
    fm = feature_match_loss(real_feats, fake_feats)
    perc = hrf_loss(pred, b.image, hrf)
    loss_g = cfg.l1 * l1 + cfg.adv * l_g + cfg.fm * fm + cfg.hrf * perc
    report = LossReport.from_terms(cfg, step, float(l1.data), float(l_d.data), float(l_g.data), float(gp.data),
                                   float(fm.data), float(perc.data))
    _check_finite(step, total=report.total, generator=float(loss_g.data))
    for opt, _ in opts_g:
        opt.zero_grad()
    backward(loss_g)
    for opt, lr in opts_g:
        opt.step(lr)
    opt_d.zero_grad()  # discard discriminator gradients from the generator pass
    return report


def pretrain_ftr(ftr: FTR, cfg: GANTrainConfig, disc: PatchDiscriminator | None = None) -> GANResult:
    """Texture-only training (no structure input) with the full generator/discriminator loss stack."""
    rng = np.random.default_rng(cfg.seed)
    disc = disc or PatchDiscriminator(rng)
    hrf = HRFExtractor()
    opt_g, opt_d = Adam(ftr.parameters(), lr=cfg.lr_g), Adam(disc.parameters(), lr=cfg.lr_d)
    val = validation_set(cfg)
    reports, curve = [], [(0, validation_psnr(ftr, val))]
    ftr.train()
    for step in range(cfg.steps):
        b = scene_batch(_train_seeds(cfg.seed, step, cfg.batch), cfg.scene, cfg.mask)
        reports.append(_gan_step(step, ftr, None, disc, [(opt_g, cfg.lr_g)], opt_d, cfg.lr_d, b, cfg.loss, hrf))
        if (step + 1) % cfg.val_every == 0 or step + 1 == cfg.steps:
            curve.append((step + 1, validation_psnr(ftr, val)))
    return GANResult(ftr, None, disc, reports, curve)


def finetune_zerora(ftr: FTR, sfe: SFE, cfg: GANTrainConfig, with_zerora: bool = True,
                    disc: PatchDiscriminator | None = None) -> GANResult:
    """Jointly train SFE and the pretrained FTR with ground-truth sketches as structure input.

    FTR batch-norm statistics stay frozen. With ``with_zerora`` the fusion
    scales start at 0 (output identical to the pretrained model); the
    ablation starts them at 1.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    disc = disc or PatchDiscriminator(rng)
    hrf = HRFExtractor()
    freeze_batchnorm_stats(ftr)
    ftr.set_alphas(0.0 if with_zerora else 1.0)
    opt_ftr = Adam(ftr.parameters(), lr=cfg.lr_g)
    opt_sfe = Adam(sfe.parameters(), lr=cfg.lr_g)
    opt_d = Adam(disc.parameters(), lr=cfg.lr_d)
    val = validation_set(cfg)
    reports, curve = [], [(0, validation_psnr(ftr, val, sfe))]
    ftr.train()
    sfe.train()
    for step in range(cfg.steps):
        b = scene_batch(_train_seeds(cfg.seed + 7, step, cfg.batch), cfg.scene, cfg.mask)
        lr_sfe = linear_warmup(step + 1, cfg.lr_g, cfg.sfe_warmup)
        reports.append(_gan_step(step, ftr, sfe, disc, [(opt_ftr, cfg.lr_g), (opt_sfe, lr_sfe)], opt_d, cfg.lr_d,
                                 b, cfg.loss, hrf))
        if (step + 1) % cfg.val_every == 0 or step + 1 == cfg.steps:
            curve.append((step + 1, validation_psnr(ftr, val, sfe)))
    return GANResult(ftr, sfe, disc, reports, curve)


def reports_log(reports: list[LossReport]) -> CurveLog:
    return CurveLog([r.row() for r in reports])


__all__ = [
    "CurveLog", "GANResult", "GANTrainConfig", "NumericError", "SSUTrainConfig", "SceneBatch", "TSRTrainConfig",
    "TrainResult", "evaluate_ssu", "evaluate_tsr", "finetune_zerora", "line_pair", "pretrain_ftr", "reports_log",
    "scene_batch", "smoothed", "train_ssu", "train_tsr_toy", "validation_outputs", "validation_psnr",
    "validation_set", "write_json",
]
