"""Loss, Adam, learning-rate schedule, patch sampling and the training loop."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import model as M
from .imageio import DataError, DatasetManifest, bicubic_resize, load_png, quantize

log = logging.getLogger(__name__)


class StaleGradientError(RuntimeError):
    """adam_step called without fresh gradients for every parameter."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, loss: float, checkpoint: str | None):
        super().__init__(f"non-finite loss {loss} at step {step}"
                         + (f"; diagnostic checkpoint written to {checkpoint}" if checkpoint else ""))
        self.step = step
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    total_steps: int = 5000
    halve_every: int = 2000
    patch: int = 64
    scales: tuple[int, ...] = (2,)
    seed: int = 0
    checkpoint_every: int = 1000
    augment: bool = True

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        """The full published schedule: 6e5 steps, batch 64, halving every 4e5."""
        return cls(**{"batch_size": 64, "total_steps": 600_000, "halve_every": 400_000, **overrides})

    def __post_init__(self):
        self.scales = tuple(sorted(set(int(s) for s in self.scales)))
        self.validate()

    def validate(self) -> None:
        for name in ("lr0", "beta1", "beta2", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if getattr(self, name) >= 1:
                raise ValueError(f"{name} must be < 1, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.halve_every < 1:
            raise ValueError(f"halve_every must be >= 1, got {self.halve_every}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if not self.scales:
            raise ValueError("scales must not be empty")
        for s in self.scales:
            if s not in M.SUPPORTED_SCALES:
                raise ValueError(f"scales: unsupported scale {s}")
            if self.patch % s:
                raise ValueError(f"patch {self.patch} is not divisible by scale {s}")


def lr_at(step: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * 2.0 ** -(step // cfg.halve_every)


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, step, stream)."""
    return np.random.Generator(np.random.Philox(key=seed & (2**64 - 1), counter=[0, 0, step, stream]))


# --------------------------------------------------------------------------
# loss and optimizer

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Half the per-item squared error, averaged over the batch."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape {pred.shape} != {target.shape}")
    b = pred.shape[0]
    diff = pred - target
    loss = float(np.sum(np.square(diff, dtype=np.float64)) / (2 * b))
    return loss, diff / b


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: M.ParamStore) -> "AdamState":
        return cls({n: np.zeros_like(p) for n, p in params.items()},
                   {n: np.zeros_like(p) for n, p in params.items()}, 0)


def adam_step(params: M.ParamStore, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    stale = params.stale()
    if stale:
        raise StaleGradientError(f"no fresh gradient for {len(stale)} parameter(s), e.g. {stale[0]}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name in params.trainable():
        p = params[name]
        g = params.grad(name)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)).astype(p.dtype, copy=False)
    params.mark_consumed()


# --------------------------------------------------------------------------
# data

@dataclass
class PatchBatch:
    lr: np.ndarray  # (b, 3, patch/scale, patch/scale)
    hr: np.ndarray  # (b, 3, patch, patch)
    scale: int


@dataclass
class TrainImage:
    name: str
    hr: np.ndarray  # (h, w, 3) uint8
    lr: dict[int, np.ndarray] = field(default_factory=dict)


def load_training_set(manifest: DatasetManifest) -> list[TrainImage]:
    out = []
    for it in manifest.items:
        lr = {s: load_png(manifest.path(p)) for s, p in it.lr.items()}
        out.append(TrainImage(it.stem, load_png(manifest.path(it.hr)), lr))
    return out


def dihedral(img: np.ndarray, flip: bool, rot: int) -> np.ndarray:
    """Apply horizontal flip then ``rot`` quarter turns to the last two axes."""
    if flip:
        img = img[..., ::-1]
    return np.rot90(img, rot, axes=(-2, -1))


def dihedral_inverse(img: np.ndarray, flip: bool, rot: int) -> np.ndarray:
    img = np.rot90(img, -rot, axes=(-2, -1))
    return img[..., ::-1] if flip else img


def _usable(dataset: list[TrainImage], patch: int) -> list[TrainImage]:
    usable = []
    for im in dataset:
        h, w = im.hr.shape[:2]
        if h < patch or w < patch:
            log.warning("skipping %s: %dx%d is smaller than the %d-pixel patch", im.name, h, w, patch)
        else:
            usable.append(im)
    return usable


def sample_batch(dataset: list[TrainImage], cfg: TrainConfig, rng: np.random.Generator,
                 augment: bool | None = None, origin: tuple[int, int] | None = None) -> PatchBatch:
    """Draw ``batch_size`` aligned LR/HR patch pairs.

    A stored LR image is cropped at the HR origin divided by the scale;
    without one, the HR crop is bicubic-downscaled and rounded to 8 bits.
    ``origin`` pins every crop to one HR coordinate.
    """
    if not dataset:
        raise DataError("empty dataset")
    usable = _usable(dataset, cfg.patch)
    if not usable:
        raise DataError(f"no image is at least {cfg.patch} pixels on each side")
    augment = cfg.augment if augment is None else augment
    scale = int(cfg.scales[rng.integers(len(cfg.scales))]) if len(cfg.scales) > 1 else cfg.scales[0]
    p, q = cfg.patch, cfg.patch // scale
    lrs, hrs = [], []
    for _ in range(cfg.batch_size):
        im = usable[rng.integers(len(usable))]
        h, w = im.hr.shape[:2]
        if origin is None:
            y = int(rng.integers((h - p) // scale + 1)) * scale
            x = int(rng.integers((w - p) // scale + 1)) * scale
        else:
            y, x = origin
        hr = im.hr[y:y + p, x:x + p].transpose(2, 0, 1)
        if scale in im.lr:
            lr = im.lr[scale][y // scale:y // scale + q, x // scale:x // scale + q].transpose(2, 0, 1)
        else:
            lr = quantize(bicubic_resize(im.hr[y:y + p, x:x + p], q, q)).transpose(2, 0, 1)
        if augment:
            flip = bool(rng.random() < 0.5)
            rot = int(rng.integers(4))
            hr, lr = dihedral(hr, flip, rot), dihedral(lr, flip, rot)
        hrs.append(hr)
        lrs.append(lr)
    return PatchBatch(np.stack(lrs).astype(np.float32) / 255, np.stack(hrs).astype(np.float32) / 255, scale)


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    model: M.ModelGraph
    state: AdamState
    step: int
    losses: list[float]


def save_training_state(path, g: M.ModelGraph, state: AdamState, step: int, cfg: TrainConfig) -> None:
    """Model checkpoint at ``path`` plus ``path.adam`` moments and ``path.json`` counters."""
    M.save_checkpoint(g, path)
    tensors = [(f"m.{n}", state.m[n]) for n in g.params.names()] + [(f"v.{n}", state.v[n]) for n in g.params.names()]
    M.write_tensors(f"{path}.adam", tensors)
    meta = {"step": step, "adam_t": state.t, "config": {**asdict(cfg), "scales": list(cfg.scales)}}
    with open(f"{path}.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_training_state(path) -> tuple[M.ModelGraph, AdamState, int]:
    g = M.load_checkpoint(path)
    with open(f"{path}.json") as f:
        meta = json.load(f)
    moments = dict(M.read_tensors(f"{path}.adam"))
    state = AdamState(t=int(meta["adam_t"]))
    for n in g.params.names():
        state.m[n] = np.array(moments[f"m.{n}"])
        state.v[n] = np.array(moments[f"v.{n}"])
    return g, state, int(meta["step"])


BatchFn = Callable[[object, TrainConfig, np.random.Generator], PatchBatch]


def train(g: M.ModelGraph, dataset, cfg: TrainConfig, *, batch_fn: BatchFn = sample_batch,
          state: AdamState | None = None, start_step: int = 0, out_dir: str | None = None,
          log_path: str | None = None, progress_every: int = 0) -> TrainResult:
    """Run steps ``start_step .. cfg.total_steps - 1`` of Adam on the MSE loss.

    Every step draws its batch from ``step_rng(cfg.seed, step)`` so a run
    resumed from a saved state follows the uninterrupted trajectory.
    """
    for s in cfg.scales:
        if s not in g.scales:
            raise ValueError(f"training scale x{s} is not built into the {g.variant} model {g.scales}")
    state = state or AdamState.for_params(g.params)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    losses = []
    writer, logfile = None, None
    if log_path:
        new = start_step == 0 or not os.path.exists(log_path)
        logfile = open(log_path, "w" if new else "a", newline="")
        writer = csv.writer(logfile, lineterminator="\n")
        if new:
            writer.writerow(["step", "lr", "loss", "wall_ms"])
    try:
        step = start_step
        for step in range(start_step, cfg.total_steps):
            t0 = time.perf_counter()
            batch = batch_fn(dataset, cfg, step_rng(cfg.seed, step))
            pred, tape = M.model_forward(g, batch.lr, batch.scale, tape=True)
            loss, grad = mse_loss(pred, batch.hr)
            if not math.isfinite(loss):
                ck = None
                if out_dir:
                    ck = os.path.join(out_dir, f"nonfinite_step{step}.lesr")
                    M.save_checkpoint(g, ck)
                raise NonFiniteLossError(step, loss, ck)
            g.params.zero_grad()
            M.model_backward(g, tape, grad)
            lr = lr_at(step, cfg)
            adam_step(g.params, state, lr, cfg)
            losses.append(loss)
            if writer:
                writer.writerow([step, f"{lr:.6g}", f"{loss:.9g}", f"{(time.perf_counter() - t0) * 1e3:.1f}"])
            if progress_every and (step % progress_every == 0 or step == cfg.total_steps - 1):
                log.info("step %d  lr %.3g  loss %.6g", step, lr, loss)
            done = step + 1
            if out_dir and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save_training_state(os.path.join(out_dir, f"step{done:07d}.lesr"), g, state, done, cfg)
        final = max(cfg.total_steps, start_step)
    finally:
        if logfile:
            logfile.close()
    if out_dir:
        save_training_state(os.path.join(out_dir, "final.lesr"), g, state, final, cfg)
    return TrainResult(g, state, final, losses)


# --------------------------------------------------------------------------
# gradient check

@dataclass
class GradcheckReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def table(self) -> str:
        lines = [f"{'parameter':<24}{'entries':>8}{'max rel err':>14}"]
        for n, e in self.max_rel_error.items():
            lines.append(f"{n:<24}{self.checked[n]:>8}{e:>14.3e}")
        lines.append(f"worst {self.worst:.3e}  tolerance {self.tolerance:.1e}  {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(g: M.ModelGraph, x: np.ndarray, scale: int | None = None, tolerance: float = 1e-4,
              entries: int = 6, eps: float = 1e-6, seed: int = 0) -> GradcheckReport:
    """Compare analytic loss gradients with central differences in float64.

    The loss is mse_loss of the model output against a fixed random
    target.  Up to ``entries`` entries of every parameter are probed.
    Each entry is tried with steps ``eps``, ``10 eps`` and ``100 eps`` and
    the closest estimate counts: entries with tiny gradients are dominated
    by roundoff at small steps, large ones by curvature at big steps.
    Biases that are exactly zero (fresh initialization) are first moved
    to small positive values: otherwise a unit whose inputs are all zero
    sits on the ReLU kink, where central differences see half a slope.
    """
    g64 = g.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    scale = scale or g.scales[0]
    rng = np.random.default_rng(seed)
    for name, p in g64.params.items():
        if name.endswith(".bias") and not p.any():
            p[...] = rng.uniform(0.01, 0.1, p.shape)
    out = M.model_forward(g64, x, scale)
    target = rng.random(out.shape)

    def loss_delta(up: np.ndarray, down: np.ndarray) -> float:
        # L(up) - L(down) factored as a product so the large shared loss cancels exactly
        return float(np.sum((up - down) * (up + down - 2 * target)) / (2 * up.shape[0]))

    pred, tape = M.model_forward(g64, x, scale, tape=True)
    _, grad = mse_loss(pred, target)
    g64.params.zero_grad()
    M.model_backward(g64, tape, grad)
    errors, counts = {}, {}
    for name, p in g64.params.items():
        if not _used_at_scale(g64, name, scale):
            continue
        flat = p.reshape(-1)
        analytic = g64.params.grad(name).reshape(-1)
        idx = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            best = math.inf
            for h in (eps, 10 * eps, 100 * eps):
                flat[i] = orig + h
                up = M.model_forward(g64, x, scale)
                flat[i] = orig - h
                down = M.model_forward(g64, x, scale)
                flat[i] = orig
                best = min(best, rel_error(analytic[i], loss_delta(up, down) / (2 * h)))
                if best < 1e-7:
                    break
            worst = max(worst, best)
        errors[name], counts[name] = worst, len(idx)
    return GradcheckReport(errors, counts, tolerance)


def _used_at_scale(g: M.ModelGraph, param: str, scale: int) -> bool:
    layer = param.rsplit(".", 1)[0]
    return any(s.name == layer for s in g.layers_for_scale(scale))
