"""Student encoder distillation against a frozen FSQ quantizer and decoder.

The objective is a frame-domain reconstruction term plus the latent MSE
between teacher and student pre-quantization outputs. Gradients pass the
quantizer straight through and stop where the [-1, 1] clamp saturates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .codec import (
    DeskCodec,
    LatentSequence,
    StudentEncoder,
    decoder_matrix,
    frame_signal,
    teacher_linear_map,
)
from .fsq import fsq_quantize

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1.0
    lambda_distill: float = 1.0

    def __post_init__(self):
        if self.lambda_rec < 0 or self.lambda_distill < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 2e-3
    epochs: int = 12
    batch: int = 256
    seed: int = 0
    warmup_steps: int = 200
    holdout: float = 0.2
    init_scale: float = 0.05


@dataclass
class TrainResult:
    student: StudentEncoder
    heldout_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def distillation_loss(h_teacher, h_student) -> float:
    a = h_teacher.h if isinstance(h_teacher, LatentSequence) else np.asarray(h_teacher, dtype=np.float64)
    b = h_student.h if isinstance(h_student, LatentSequence) else np.asarray(h_student, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"student latents {b.shape} must match teacher latents {a.shape}")
    return float(np.mean((a - b) ** 2))


def _objective(weight, frames, h_teacher, decoder, spec, weights: LossWeights, distill_on: bool):
    """Loss and its straight-through gradient with respect to ``weight``."""
    z = frames @ weight
    h = np.clip(z, -1.0, 1.0)
    q = fsq_quantize(spec, h).values
    err = q @ decoder - frames
    rec = np.mean(err**2)
    dist = np.mean((h - h_teacher) ** 2)
    lam_d = weights.lambda_distill if distill_on else 0.0
    loss = weights.lambda_rec * rec + lam_d * dist
    grad_h = weights.lambda_rec * 2.0 / err.size * (err @ decoder.T)
    grad_h += lam_d * 2.0 / h.size * (h - h_teacher)
    grad_h *= np.abs(z) < 1.0
    return loss, frames.T @ grad_h


def train_student(teacher_codec: DeskCodec, corpus, weights: LossWeights = LossWeights(),
                  cfg: TrainConfig = TrainConfig(), init: np.ndarray | None = None) -> TrainResult:
    """Fit a linear frame -> latent student with Adam on minibatches.

    The held-out objective (both terms, full weights) is measured before the
    first step and after every epoch; the best of those checkpoints is kept.
    """
    if teacher_codec.teacher is None or teacher_codec.config.bottleneck != "fsq":
        raise ValueError("student training needs a fitted FSQ teacher codec")
    if cfg.lr < 0 or cfg.epochs < 1 or cfg.batch < 1:
        raise ValueError("lr must be >= 0; epochs and batch must be >= 1")
    config = teacher_codec.config
    spec = config.fsq_spec
    frames = np.concatenate([frame_signal(a, config) for a in corpus])
    t_map = teacher_linear_map(teacher_codec.teacher, config)
    targets = np.clip(frames @ t_map, -1.0, 1.0)
    decoder = decoder_matrix(teacher_codec.teacher, config)

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(frames))
    n_hold = max(1, int(round(cfg.holdout * len(frames))))
    hold, train = order[:n_hold], order[n_hold:]

    if init is None:
        w = rng.standard_normal(t_map.shape) * cfg.init_scale
    else:
        w = np.array(init, dtype=np.float64)
        if w.shape != t_map.shape:
            raise ValueError(f"init must have shape {t_map.shape}")

    def heldout(weight):
        loss, _ = _objective(weight, frames[hold], targets[hold], decoder, spec, weights, True)
        return float(loss)

    m = np.zeros_like(w)
    v = np.zeros_like(w)
    beta1, beta2 = 0.9, 0.999
    best_w, best_loss = w.copy(), heldout(w)
    result = TrainResult(StudentEncoder(best_w), [best_loss], 0, 0)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for start in range(0, len(train), cfg.batch):
            idx = train[start:start + cfg.batch]
            loss, grad = _objective(w, frames[idx], targets[idx], decoder, spec, weights,
                                    step >= cfg.warmup_steps)
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise DivergenceError(f"loss {loss:.3g} exceeded {DIVERGENCE_LIMIT:g} at step {step}")
            step += 1
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad**2
            m_hat = m / (1 - beta1**step)
            v_hat = v / (1 - beta2**step)
            w = w - cfg.lr * m_hat / (np.sqrt(v_hat) + 1e-12)
        train = train[rng.permutation(len(train))]
        loss = heldout(w)
        result.heldout_loss.append(loss)
        log.info("epoch %d held-out loss %.6g", epoch, loss)
        if loss < best_loss:
            best_loss, best_w, result.best_epoch = loss, w.copy(), epoch
    result.student = StudentEncoder(best_w)
    result.steps = step
    return result
