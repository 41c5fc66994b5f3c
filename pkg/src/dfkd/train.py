"""Teacher pretraining and teacher-to-student distillation loops.

The teacher is never updated during distillation: its masked spectra and
per-frame crossovers are computed once up front and reused every epoch.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import model as mdl
from .adapter import DEFAULT_EPS, adapt
from .data import hash64
from .dsp import StftConfig, istft, istft_adjoint, stft
from .loss import LossTerm, LossWeights, kd_loss, l2_loss, si_snr, total_loss
from .metrics import evaluate

LOG_FIELDS = ("step", "epoch", "l_se", "l_low", "l_high", "l_kd", "l_total", "grad_norm")
OPTIMIZERS = ("sgd", "adam")
SE_LOSSES = ("neg_sisnr", "spectral_mse")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    optimizer: str = "adam"
    seed: int = 0
    eps_adapter: float = DEFAULT_EPS
    se_loss: str = "neg_sisnr"
    val_every: int = 10
    per_utterance: bool = False
    forced_m: int | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.se_loss not in SE_LOSSES:
            raise ValueError(f"se_loss must be one of {SE_LOSSES}")

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    kind: str = "adam"
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list | None = None
    v: list | None = None


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_si_snri: float = float("nan")
    config: dict = field(default_factory=dict)
    version: str = __version__
    wall_time: float = 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.steps:
                writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                                 for k in LOG_FIELDS})

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "version": self.version,
            "config": self.config,
            "best_epoch": self.best_epoch,
            "best_val_si_snri": self.best_val_si_snri,
            "epochs": self.epochs,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def write_json(self, path, timing: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(timing), indent=2, sort_keys=True) + "\n")


def step(net: mdl.MaskNet, grads: mdl.GradientBuffer, state: OptimizerState, lr: float):
    """One in-place parameter update; returns ``(net, state)``."""
    if not grads.is_finite():
        raise TrainingDiverged("non-finite gradient")
    params = net.parameters()
    gs = grads.parameters()
    if state.kind == "sgd":
        for p, g in zip(params, gs):
            p -= lr * g
        _check_params(net)
        return net, state
    if state.kind != "adam":
        raise ValueError(f"unknown optimizer {state.kind!r}")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    _check_params(net)
    return net, state


def _check_params(net):
    if not all(np.all(np.isfinite(p)) for p in net.parameters()):
        raise TrainingDiverged("non-finite parameters after update")


@dataclass
class _Clip:
    noisy: np.ndarray
    feats: np.ndarray
    clean_ref: np.ndarray
    clean_spec: np.ndarray
    teacher_out: np.ndarray | None = None
    m: np.ndarray | None = None


def _prepare(samples, stft_cfg):
    clips = []
    for s in samples:
        noisy = stft(s.mixture, stft_cfg).data
        n_out = stft_cfg.signal_length(noisy.shape[0])
        clips.append(_Clip(noisy, mdl.features(noisy), s.clean[:n_out],
                           stft(s.clean[:n_out], stft_cfg).data))
    return clips


def split_validation(samples, every: int = 10):
    """Hold out every ``every``-th training clip (about 10% by default)."""
    if every <= 0 or len(samples) < every:
        return list(samples), []
    train = [s for i, s in enumerate(samples) if i % every != every - 1]
    val = [s for i, s in enumerate(samples) if i % every == every - 1]
    return train, val


def _se_term(clip, student_out, cfg, stft_cfg) -> LossTerm:
    if cfg.se_loss == "spectral_mse":
        return l2_loss(clip.clean_spec, student_out)
    est = istft(student_out, stft_cfg).samples
    term = si_snr(est, clip.clean_ref)
    return LossTerm(term.value, istft_adjoint(term.grad, stft_cfg).data)


def _fit(net, samples, cfg: TrainConfig, teacher=None, stft_cfg=None, log=None):
    stft_cfg = stft_cfg or StftConfig()
    if not samples:
        raise ValueError("training corpus is empty")
    started = time.perf_counter()
    train_samples, val_samples = split_validation(samples, cfg.val_every)
    clips = _prepare(train_samples, stft_cfg)
    if teacher is not None:
        for c in clips:
            mask, _ = mdl.forward(teacher, c.feats)
            c.teacher_out = mdl.apply_mask(mask, c.noisy)
            if cfg.forced_m is not None:
                c.m = np.full(c.noisy.shape[0], cfg.forced_m)
            else:
                c.m = adapt(c.teacher_out, cfg.eps_adapter, cfg.per_utterance)

    alpha = cfg.weights.alpha
    shuffle_rng = np.random.default_rng(hash64(cfg.seed, "shuffle"))
    state = OptimizerState(kind=cfg.optimizer)
    report = TrainReport(config=cfg.echo())
    best = (net.copy(), -np.inf, 0)
    step_no = 0

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(clips))
        sums = dict.fromkeys(("l_se", "l_low", "l_high", "l_kd", "l_total"), 0.0)
        for start in range(0, len(order), cfg.batch_size):
            batch = [clips[i] for i in order[start : start + cfg.batch_size]]
            feats = np.concatenate([c.feats for c in batch])
            masks, cache = mdl.forward(net, feats)
            upstream = np.empty_like(masks)
            row = dict.fromkeys(("l_se", "l_low", "l_high", "l_kd", "l_total"), 0.0)
            offset = 0
            for c in batch:
                n = c.noisy.shape[0]
                out = mdl.apply_mask(masks[offset : offset + n], c.noisy)
                se = _se_term(c, out, cfg, stft_cfg)
                if teacher is None:
                    total = se
                else:
                    kd = kd_loss(c.teacher_out, out, cfg.weights, cfg.eps_adapter, m=c.m)
                    total = total_loss(kd, se, alpha)
                    row["l_kd"] += kd.value
                    row["l_low"] += kd.parts.get("l_low", 0.0)
                    row["l_high"] += kd.parts.get("l_high", 0.0)
                if not np.isfinite(total.value):
                    raise TrainingDiverged(f"non-finite loss at step {step_no + 1}, epoch {epoch}")
                row["l_se"] += se.value
                row["l_total"] += total.value
                upstream[offset : offset + n] = mdl.mask_grad(total.grad, c.noisy)
                offset += n
            k = len(batch)
            upstream /= k
            grads, _ = mdl.backward(net, cache, upstream, input_grad=False)
            step(net, grads, state, cfg.lr)
            step_no += 1
            row = {key: val / k for key, val in row.items()}
            row.update(step=step_no, epoch=epoch, grad_norm=grads.norm())
            report.steps.append(row)
            for key in sums:
                sums[key] += row[key] * k
        epoch_row = {"epoch": epoch, **{key: val / len(clips) for key, val in sums.items()}}
        if val_samples:
            summary, _ = evaluate(net, val_samples, stft_cfg)
            epoch_row["val_si_snri"] = summary["si_snri_mean"]
            if summary["si_snri_mean"] > best[1]:
                best = (net.copy(), summary["si_snri_mean"], epoch)
        report.epochs.append(epoch_row)
        if log is not None:
            log(epoch_row)

    if val_samples:
        net, report.best_val_si_snri, report.best_epoch = best
    else:
        report.best_epoch = cfg.epochs
    report.wall_time = time.perf_counter() - started
    net.training_meta = {"best_epoch": report.best_epoch, "config": cfg.echo(),
                         "teacher": teacher is not None}
    return net, report


def train_teacher(samples, layer_dims=mdl.TEACHER_DIMS, cfg: TrainConfig | None = None,
                  stft_cfg=None, log=None):
    """Train a network on the enhancement loss alone; returns ``(net, report)``."""
    cfg = cfg or TrainConfig()
    net = mdl.init(layer_dims, cfg.seed)
    return _fit(net, samples, cfg, None, stft_cfg, log)


def distill(teacher: mdl.MaskNet, samples, student_dims=mdl.STUDENT_DIMS["small"],
            cfg: TrainConfig | None = None, stft_cfg=None, log=None, student=None):
    """Train a student against the frozen ``teacher`` plus the enhancement loss.

    ``cfg.weights.kd_variant == "none"`` trains from scratch (no teacher use).
    A ``student`` network, if given, is copied and used instead of a fresh init.
    """
    cfg = cfg or TrainConfig()
    net = student.copy() if student is not None else mdl.init(student_dims, cfg.seed)
    use_teacher = None if cfg.weights.kd_variant == "none" else teacher
    return _fit(net, samples, cfg, use_teacher, stft_cfg, log)
