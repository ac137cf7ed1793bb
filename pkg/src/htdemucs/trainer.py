"""Waveform L1 training with Adam, parameter EMA, stem remixing and
per-source fine-tuning."""
from __future__ import annotations

import json
import logging
import math
import random
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, NumericError
from .numerics import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip_l2: Optional[float] = None
    batch_size: int = 32
    epochs: int = 1200
    batches_per_epoch: int = 800
    ema_decays: tuple = (0.999,)
    remix: bool = True
    rescale: bool = True
    rescale_range: tuple = (0.25, 1.25)
    repitch: bool = False  # not implemented; must stay off
    segment_seconds: float = 1.0
    valid_every: Optional[int] = None  # steps; defaults to once per epoch
    target_source: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.repitch:
            raise ConfigError("repitch augmentation is not available")


@dataclass
class FinetuneConfig:
    target_source: str = "vocals"
    lr: float = 1e-4
    epochs: int = 50
    grad_clip_l2: float = 5.0
    weight_decay: float = 0.05
    batch_size: int = 32
    batches_per_epoch: int = 800
    segment_seconds: float = 1.0
    ema_decays: tuple = (0.999,)
    valid_every: Optional[int] = None
    seed: int = 0

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, weight_decay=self.weight_decay, grad_clip_l2=self.grad_clip_l2,
            batch_size=self.batch_size, epochs=self.epochs, batches_per_epoch=self.batches_per_epoch,
            ema_decays=self.ema_decays, remix=False, rescale=False, repitch=False,
            segment_seconds=self.segment_seconds, valid_every=self.valid_every,
            target_source=self.target_source, seed=self.seed)


# --- loss / optimizer / EMA ---------------------------------------------------

def l1_loss(pred, target, source_index=None):
    """Mean absolute error; ``source_index`` restricts it to one source slice
    (axis -3 of [..., sources, channels, frames])."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    if source_index is not None:
        idx = (Ellipsis, source_index, slice(None), slice(None))
        pred, target = pred[idx], target[idx]
    return nx.mean(nx.tabs(pred - target))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def global_grad_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0, grad_clip_l2=None):
    """One bias-corrected Adam update in place. Clipping is global L2 and happens
    before the moment updates; weight decay is decoupled. Returns the pre-clip norm."""
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    norm = global_grad_norm(grads)
    if grad_clip_l2 is not None and norm > grad_clip_l2:
        scale = grad_clip_l2 / norm
        grads = [g * scale for g in grads]
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.dtype)
    return norm


def save_adam_state(state: AdamState, path):
    """Optimizer-state sidecar next to a weight file."""
    arrays = {f"m{i}": m for i, m in enumerate(state.m)}
    arrays.update({f"v{i}": v for i, v in enumerate(state.v)})
    with open(path, "wb") as f:
        np.savez(f, t=np.int64(state.t), **arrays)


def load_adam_state(path) -> AdamState:
    with np.load(path) as z:
        n = sum(1 for k in z.files if k.startswith("m"))
        return AdamState([z[f"m{i}"] for i in range(n)], [z[f"v{i}"] for i in range(n)], int(z["t"]))


def ema_update(shadow, params, decay):
    """``shadow <- decay * shadow + (1 - decay) * params``, in place."""
    for s, p in zip(shadow, params):
        pd = p.data if isinstance(p, Tensor) else p
        s *= decay
        s += (1.0 - decay) * pd


# --- augmentation / batching ----------------------------------------------------

def fisher_yates(n, rng: random.Random):
    perm = list(range(n))
    rng.shuffle(perm)
    return perm


def remix_batch(stems, seed):
    """Recombine stems across the batch: source s of item b comes from item
    ``perm_s[b]``, one independent permutation per source (drawn in source order)."""
    stems = np.asarray(stems)
    batch, n_src = stems.shape[:2]
    if batch < 2:
        warnings.warn("remix_batch needs batch >= 2; returning input unchanged")
        return _mix(stems), stems.copy()
    rng = random.Random(seed)
    perms = [fisher_yates(batch, rng) for _ in range(n_src)]
    targets = np.stack([stems[perms[s], s] for s in range(n_src)], axis=1)
    return _mix(targets), targets


def _mix(targets):
    total = targets[:, 0].copy()
    for s in range(1, targets.shape[1]):
        total += targets[:, s]
    return total


class StemDataset:
    """Random fixed-length excerpts from a list of songs (``SongStems``)."""

    def __init__(self, songs, sources, segment_frames):
        self.songs = list(songs)
        self.sources = list(sources)
        self.segment = segment_frames
        self._arrays = [s.stack(self.sources) for s in self.songs]
        short = [s.song_id for s, a in zip(self.songs, self._arrays) if a.shape[-1] < segment_frames]
        if short:
            raise DimensionError(f"songs shorter than the segment: {short}")

    def __len__(self):
        return len(self.songs)

    def sample(self, batch_size, rng: np.random.Generator):
        out = []
        for _ in range(batch_size):
            a = self._arrays[rng.integers(len(self._arrays))]
            start = rng.integers(a.shape[-1] - self.segment + 1)
            out.append(a[..., start:start + self.segment])
        return np.stack(out)

    def fixed_excerpts(self, per_song=1):
        """Deterministic evenly spaced excerpts, for validation."""
        out = []
        for a in self._arrays:
            span = a.shape[-1] - self.segment
            for i in range(per_song):
                start = span * i // max(1, per_song - 1) if per_song > 1 else span // 2
                out.append(a[..., start:start + self.segment])
        return np.stack(out)


# --- loops ------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    records: list = field(default_factory=list)
    best_state: Optional[dict] = None
    best_valid: float = math.inf
    ema_states: list = field(default_factory=list)


def evaluate_l1(model, batch, source_index=None, chunk=4):
    total, n = 0.0, 0
    with nx.no_grad():
        for i in range(0, len(batch), chunk):
            part = batch[i:i + chunk]
            pred = model.forward(_mix(part))
            total += float(l1_loss(pred, part, source_index).data) * len(part)
            n += len(part)
    return total / n


def _swap_state(model, state):
    old = model.state_dict()
    model.load_state_dict(state)
    return old


def train(model, train_set: StemDataset, valid_set: Optional[StemDataset], cfg: TrainConfig,
          log_file=None, max_steps=None, adam_state: AdamState = None) -> TrainResult:
    """Run ``cfg.epochs * cfg.batches_per_epoch`` steps (or ``max_steps``).

    Each record: epoch, step, train_l1, valid_l1 (current weights), valid_l1_ema
    (first EMA), lr, grad_norm. The best EMA snapshot on the validation set is kept.
    """
    params = model.parameters()
    state = adam_state or AdamState.zeros_like(params)
    np_rng = np.random.default_rng(cfg.seed)
    shadows = [[p.data.astype(np.float64) for p in params] for _ in cfg.ema_decays]
    src_idx = None
    if cfg.target_source is not None:
        if cfg.target_source not in model.sources:
            raise ConfigError(f"unknown target source {cfg.target_source!r}")
        src_idx = model.sources.index(cfg.target_source)
    valid_batch = valid_set.fixed_excerpts() if valid_set is not None else None
    total_steps = cfg.epochs * cfg.batches_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    valid_every = cfg.valid_every or cfg.batches_per_epoch
    result = TrainResult(model)
    out = open(log_file, "a") if log_file else None

    try:
        for step in range(1, total_steps + 1):
            stems = train_set.sample(cfg.batch_size, np_rng)
            if cfg.rescale:
                lo, hi = cfg.rescale_range
                stems = stems * np_rng.uniform(lo, hi, size=stems.shape[:2] + (1, 1)).astype(stems.dtype)
            if cfg.remix and len(stems) >= 2:
                mix, targets = remix_batch(stems, int(np_rng.integers(2 ** 31)))
            else:
                mix, targets = _mix(stems), stems
            model.zero_grad()
            pred = model.forward(mix)
            loss = l1_loss(pred, targets, src_idx)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss {value} at step {step}")
            loss.backward()
            grad_norm = adam_step(params, [p.grad for p in params], state, cfg.lr, cfg.beta1,
                                  cfg.beta2, cfg.eps, cfg.weight_decay, cfg.grad_clip_l2)
            if not math.isfinite(grad_norm):
                raise NumericError(f"non-finite gradient norm at step {step}")
            for shadow, decay in zip(shadows, cfg.ema_decays):
                ema_update(shadow, params, decay)

            rec = {"epoch": (step - 1) // cfg.batches_per_epoch, "step": step, "train_l1": value,
                   "valid_l1": None, "valid_l1_ema": None, "lr": cfg.lr, "grad_norm": grad_norm}
            if valid_batch is not None and (step == 1 or step % valid_every == 0 or step == total_steps):
                rec["valid_l1"] = evaluate_l1(model, valid_batch, src_idx)
                if shadows:
                    live = _swap_state(model, dict(zip((n for n, _ in model.named_parameters()), shadows[0])))
                    rec["valid_l1_ema"] = evaluate_l1(model, valid_batch, src_idx)
                    snapshot = model.state_dict()
                    model.load_state_dict(live)
                    if rec["valid_l1_ema"] < result.best_valid:
                        result.best_valid = rec["valid_l1_ema"]
                        result.best_state = snapshot
                log.info("step %d train %.5f valid %.5f", step, value, rec["valid_l1"])
            result.records.append(rec)
            if out:
                out.write(json.dumps(rec) + "\n")
    finally:
        if out:
            out.close()
    names = [n for n, _ in model.named_parameters()]
    result.ema_states = [dict(zip(names, (s.astype(np.float32) for s in sh))) for sh in shadows]
    result.adam_state = state
    return result


def finetune(model, train_set, valid_set, cfg: FinetuneConfig, log_file=None, max_steps=None) -> TrainResult:
    """Fine-tune a copy-in-place of a trained multi-source model on one target."""
    return train(model, train_set, valid_set, cfg.to_train_config(), log_file, max_steps)
