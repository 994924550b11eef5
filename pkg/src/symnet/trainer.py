"""SGD + momentum training with a polynomial learning-rate decay."""
from __future__ import annotations

import csv
import io as _io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .augment import apply_augment, sample_spec
from .exceptions import ConfigError, ParameterError, TrainingError
from .heatmap import SynthConfig, synth_kind
from .network import NetConfig, NetParams, backward, forward, init, normalize_image, save_checkpoint
from .tensor import l2_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    base_lr: float = 1e-2
    power: float = 0.9
    total_batches: int = 2000
    batch_size: int = 4
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    crop_fraction: float = 0.9
    sigma: float = 5.0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.base_lr < 0:
            raise ConfigError(f"base_lr must be >= 0, got {self.base_lr}")
        if not self.power > 0:
            raise ConfigError(f"power must be > 0, got {self.power}")
        if self.total_batches < 1:
            raise ConfigError("total_batches must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, mapping):
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            v = mapping[f.name]
            if isinstance(v, str):
                try:
                    if f.type == "bool":
                        v = v.lower() in ("1", "true", "yes")
                    elif f.type == "int":
                        v = int(v)
                    else:
                        v = float(v)
                except ValueError:
                    raise ConfigError(f"bad value for {f.name}: {v!r}") from None
            kwargs[f.name] = v
        return cls(**kwargs)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # (batch_index, lr, loss)
    params: NetParams | None = None

    @property
    def losses(self):
        return [r[2] for r in self.records]

    @property
    def lrs(self):
        return [r[1] for r in self.records]

    def to_csv(self):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch", "lr", "loss"])
        for b, lr, loss in self.records:
            w.writerow([b, repr(float(lr)), repr(float(loss))])
        return buf.getvalue()


def split_dataset(ids, ratio=0.8, seed=0):
    """Seeded shuffle, then ``round(ratio * n)`` ids (half rounded up) for training."""
    ids = list(ids)
    if len(ids) < 2:
        raise ParameterError("need at least two ids to split")
    if not 0 < ratio < 1:
        raise ParameterError(f"ratio must be in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(math.floor(ratio * len(ids) + 0.5))
    train = [ids[i] for i in order[:n_train]]
    test = [ids[i] for i in order[n_train:]]
    return train, test


def poly_lr(schedule: TrainSchedule, batch):
    if not 0 <= batch <= schedule.total_batches:
        raise ParameterError(f"batch {batch} outside [0, {schedule.total_batches}]")
    return schedule.base_lr * (1.0 - batch / schedule.total_batches) ** schedule.power


def batch_loss(params: NetParams, images, targets):
    """Mean l2 loss over items and the matching mean gradients.

    ``images`` are normalized (1, C, H, W) tensors, ``targets`` (H, W) heatmaps;
    sizes may differ between items.
    """
    dtype = params.config.dtype
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    total = 0.0
    for x, t in zip(images, targets):
        out, cache = forward(params, x, return_cache=True)
        loss, dout = l2_loss(out, np.asarray(t, dtype=dtype)[None, None])
        g = backward(params, cache, dout)
        for k in grads:
            grads[k] += g[k]
        total += loss
    n = len(images)
    return total / n, {k: v / n for k, v in grads.items()}


def sgd_step(params: NetParams, grads, velocity, lr, momentum):
    for k, p in params.arrays.items():
        v = velocity[k]
        v *= momentum
        v -= np.asarray(lr, dtype=p.dtype) * grads[k]
        p += v


def _prepare(sample, kind, schedule, seed, cfg_dtype):
    image, gts = sample.image, sample.gts
    if schedule.augment:
        spec = sample_spec(seed, image.shape[:2], schedule.crop_fraction)
        image, gts = apply_augment(image, gts, spec)
    h, w = image.shape[:2]
    target = synth_kind(gts, kind, w, h, SynthConfig(schedule.sigma))
    return normalize_image(image).astype(cfg_dtype), target.astype(cfg_dtype)


def train(config: NetConfig, schedule: TrainSchedule, dataset, kind,
          checkpoint_path=None, params=None):
    """Train a single-kind heatmap regressor on ``dataset`` (a list of Samples).

    Every batch draws ``batch_size`` distinct samples and, when augmenting,
    one :class:`AugmentSpec` per sample from the schedule's seeded
    generator, so a rerun with the same seeds reproduces the log exactly.
    """
    items = list(dataset)
    if not items:
        raise ParameterError("empty training set")
    for s in items:
        if not any(g.kind == kind for g in s.gts):
            raise ParameterError(f"sample {s.image_id} has no {kind} symmetry")
    params = init(config) if params is None else params.copy()
    dtype = params.config.dtype
    velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    rng = np.random.default_rng(schedule.seed)
    fixed = None
    if not schedule.augment:
        fixed = [_prepare(s, kind, schedule, None, dtype) for s in items]

    result = TrainLog()
    bs = min(schedule.batch_size, len(items))
    for b in range(schedule.total_batches):
        lr = poly_lr(schedule, b)
        picks = rng.choice(len(items), size=bs, replace=False)
        seeds = rng.integers(0, 2**63 - 1, size=bs)
        if fixed is not None:
            pairs = [fixed[i] for i in picks]
        else:
            pairs = [_prepare(items[i], kind, schedule, int(sd), dtype)
                     for i, sd in zip(picks, seeds)]
        xs = [p[0] for p in pairs]
        ts = [p[1] for p in pairs]
        if len({x.shape for x in xs}) == 1:
            loss, grads = _batched_loss(params, np.concatenate(xs), np.stack(ts)[:, None])
        else:
            loss, grads = batch_loss(params, xs, ts)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at batch {b} (lr {lr:g})")
        sgd_step(params, grads, velocity, lr, schedule.momentum)
        result.records.append((b, lr, loss))
        if b % 100 == 0:
            log.debug("batch %d lr %.3g loss %.5f", b, lr, loss)
        if checkpoint_path and schedule.checkpoint_interval and \
                (b + 1) % schedule.checkpoint_interval == 0:
            save_checkpoint(checkpoint_path, params)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, params)
    result.params = params
    return params, result


def _batched_loss(params, x, t):
    out, cache = forward(params, x, return_cache=True)
    loss, dout = l2_loss(out, np.asarray(t, dtype=params.config.dtype))
    return loss, backward(params, cache, dout)


def write_train_config(path, config: NetConfig, schedule: TrainSchedule, extra=None):
    mapping = {**config.to_dict(), **schedule.to_dict(), **(extra or {})}
    return io.write_config(path, mapping)


def read_train_config(path):
    """Return ``(NetConfig, TrainSchedule, raw mapping)`` from a key=value file."""
    raw = io.read_config(path)
    unknown = set(raw) - {f.name for f in fields(NetConfig)} - {f.name for f in fields(TrainSchedule)}
    return NetConfig.from_dict(raw), TrainSchedule.from_dict(raw), {k: raw[k] for k in unknown}


def write_log(path, train_log: TrainLog):
    Path(path).write_text(train_log.to_csv())
