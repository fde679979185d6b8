"""Losses, reverse-mode gradients, AdamW, training loop and rollouts.

A training sample is a window of consecutive frames: ``history`` frames
(oldest first) followed by ``target_steps`` frames to predict. The model
input at each step is the channel stack ``[x_t, x_{t-1}, ..., x_{t-H}]``
(most recent first, ``H = history_size``) and its output ``h`` is
integrated as

    ZERO    x_{t+1} = h
    FIRST   x_{t+1} = x_t + h
    SECOND  x_{t+1} = 2 x_t - x_{t-1} + h

T1 models are trained entirely on reduced coefficients: the dataset is
transformed and truncated once, and because truncation and the transform
are linear the integrator recurrence holds coefficient-wise. FNO-style
models are trained on n-space signals. In both cases the loss compares the
predicted state with the true state; multi-step windows are unrolled and
differentiated through time.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .layers import SpectralModel, Wiring, _parse

__all__ = [
    "RolloutOrder",
    "LossKind",
    "TrainConfig",
    "TrainReport",
    "DivergenceError",
    "relative_l2_loss",
    "squared_error_loss",
    "AdamW",
    "backward",
    "train",
    "rollout",
    "evaluate_nspace",
    "dataset_loss",
]

DIVERGENCE_LIMIT = 1e6


class DivergenceError(ArithmeticError):
    """Training loss became non-finite or exceeded the divergence limit."""


class RolloutOrder(str, enum.Enum):
    ZERO = "zero"
    FIRST = "first"
    SECOND = "second"


class LossKind(str, enum.Enum):
    REL_L2 = "rel_l2"
    MSE = "mse"  # mean over the batch of squared (weighted) error norms


# -- losses -----------------------------------------------------------------------

def _weighted_sq(a: np.ndarray, weights) -> np.ndarray:
    sq = a.real ** 2 + a.imag ** 2 if np.iscomplexobj(a) else a * a
    if weights is not None:
        sq = sq * weights
    return sq.reshape(sq.shape[0], -1).sum(axis=1)


def relative_l2_loss(pred, target, weights=None, return_grad: bool = False):
    """Batch mean of ``||pred - target|| / ||target||`` per sample.

    The leading axis is the batch; 1D inputs are a single sample. ``weights``
    (broadcast against the trailing axes) turns both norms into weighted
    norms, e.g. mode multiplicities for half-spectrum DFT coefficients.
    With ``return_grad`` the gradient with respect to ``pred`` is returned too.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"pred extent {pred.shape} != target extent {target.shape}")
    if pred.ndim == 1:
        out = relative_l2_loss(pred[None], target[None], weights, return_grad)
        return (out[0], out[1][0]) if return_grad else out
    tn = np.sqrt(_weighted_sq(target, weights))
    if np.any(tn == 0):
        raise ValueError(f"relative L2 loss undefined: target {int(np.argmin(tn))} has zero norm")
    r = pred - target
    rn = np.sqrt(_weighted_sq(r, weights))
    loss = float(np.mean(rn / tn))
    if not return_grad:
        return loss
    B = pred.shape[0]
    scale = np.divide(1.0, rn * tn * B, out=np.zeros_like(rn), where=rn > 0)
    g = r * scale.reshape((B,) + (1,) * (r.ndim - 1))
    if weights is not None:
        g = g * weights
    return loss, g


def squared_error_loss(pred, target, weights=None, return_grad: bool = False):
    """Batch mean of ``||pred - target||^2`` (weighted if ``weights`` given)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"pred extent {pred.shape} != target extent {target.shape}")
    if pred.ndim == 1:
        out = squared_error_loss(pred[None], target[None], weights, return_grad)
        return (out[0], out[1][0]) if return_grad else out
    r = pred - target
    B = pred.shape[0]
    loss = float(np.mean(_weighted_sq(r, weights)))
    if not return_grad:
        return loss
    g = 2.0 * r / B
    if weights is not None:
        g = g * weights
    return loss, g


_LOSSES = {LossKind.REL_L2: relative_l2_loss, LossKind.MSE: squared_error_loss}


# -- configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    step_size: Optional[int] = None  # STEP schedule when set, else constant rate
    gamma: float = 1.0
    seed: int = 0
    loss: LossKind = LossKind.REL_L2
    rollout_order: RolloutOrder = RolloutOrder.ZERO
    history_size: int = 0
    target_steps: int = 1
    stop_at_val_nmse: Optional[float] = None  # stop once validation N-MSE falls below

    def __post_init__(self):
        object.__setattr__(self, "loss", _parse(LossKind, self.loss))
        object.__setattr__(self, "rollout_order", _parse(RolloutOrder, self.rollout_order))
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.step_size is not None and (self.step_size < 1 or not 0 < self.gamma <= 1):
            raise ValueError("STEP schedule needs step_size >= 1 and gamma in (0, 1]")
        if self.history_size < 0 or self.target_steps < 1:
            raise ValueError("history_size must be >= 0 and target_steps >= 1")

    @property
    def history_frames(self) -> int:
        """Frames needed before the first prediction."""
        return _history_frames(self.rollout_order, self.history_size)

    def learning_rate_at(self, epoch: int) -> float:
        if self.step_size is None:
            return self.learning_rate
        return self.learning_rate * self.gamma ** (epoch // self.step_size)


def _history_frames(order: RolloutOrder, history_size: int) -> int:
    return max(history_size + 1, 2 if order is RolloutOrder.SECOND else 1)


@dataclass
class TrainReport:
    initial_loss: float
    final_loss: float = math.nan
    train_loss: list = field(default_factory=list)  # mean minibatch loss per epoch
    val_nmse: list = field(default_factory=list)  # n-space N-MSE per epoch (empty without val data)
    epoch_seconds: list = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def epochs_to(self, threshold: float) -> Optional[int]:
        """First epoch (1-based) whose validation N-MSE is below ``threshold``."""
        for i, v in enumerate(self.val_nmse):
            if v < threshold:
                return i + 1
        return None


# -- optimizer -------------------------------------------------------------------------

class AdamW:
    """Adam moments with decoupled weight decay; complex parameters are treated as (re, im) pairs."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        for p in self.params:
            if not p.flags.c_contiguous:
                raise ValueError("AdamW needs contiguous parameter arrays")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros(self._real(p).shape) for p in self.params]
        self.v = [np.zeros(self._real(p).shape) for p in self.params]

    @staticmethod
    def _real(a: np.ndarray) -> np.ndarray:
        return a.view(np.float64) if np.iscomplexobj(a) else a

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            pr = self._real(p)
            gr = self._real(np.ascontiguousarray(g, dtype=p.dtype))
            if self.weight_decay:
                pr *= 1.0 - self.lr * self.weight_decay
            m *= self.b1
            m += (1.0 - self.b1) * gr
            v *= self.b2
            v += (1.0 - self.b2) * gr * gr
            pr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- unrolled forward / reverse -------------------------------------------------------

def _combine(order: RolloutOrder, states: list, h: np.ndarray) -> np.ndarray:
    if order is RolloutOrder.ZERO:
        return h
    if order is RolloutOrder.FIRST:
        return states[-1] + h
    return 2.0 * states[-1] - states[-2] + h


def _input_stack(states: list, history_size: int) -> np.ndarray:
    return np.stack([states[-1 - j] for j in range(history_size + 1)], axis=1)


def _unroll(model: SpectralModel, history: np.ndarray, targets: np.ndarray, order: RolloutOrder,
            history_size: int, loss: LossKind, weights=None, need_grad: bool = True):
    """Loss (and parameter gradients) of a multi-step prediction window.

    ``history`` is ``(B, H_req, *rep)`` oldest first and ``targets`` is
    ``(B, steps, *rep)``; ``rep`` is ``(m,)`` reduced coefficients for T1 and
    the grid for FNO-style models.
    """
    kspace = model.wiring is Wiring.T1
    fwd = model.kspace_forward if kspace else model.nspace_forward
    bwd = model.kspace_backward if kspace else model.nspace_backward
    loss_fn = _LOSSES[loss]
    steps = targets.shape[1]
    states = [history[:, j] for j in range(history.shape[1])]
    n_hist = len(states)
    tapes, gstates, total = [], [], 0.0
    for s in range(steps):
        out, tape = fwd(_input_stack(states, history_size))
        if out.shape[1] != 1:
            raise ValueError(f"rollout models must have one output channel, got {out.shape[1]}")
        new = _combine(order, states, out[:, 0])
        value, g = loss_fn(new, targets[:, s], weights, return_grad=True)
        total += value / steps
        states.append(new)
        tapes.append(tape)
        gstates.append(g / steps)
    if not np.isfinite(total):
        raise DivergenceError(f"non-finite loss {total}")
    if not need_grad:
        return total, None
    grads = {}
    # gradient accumulators for every state, initial history included
    acc = [np.zeros_like(st) for st in states]
    for s in range(steps):
        acc[n_hist + s] = acc[n_hist + s] + gstates[s]
    for s in reversed(range(steps)):
        idx = n_hist + s
        g_new = acc[idx]
        if order is RolloutOrder.FIRST:
            acc[idx - 1] = acc[idx - 1] + g_new
        elif order is RolloutOrder.SECOND:
            acc[idx - 1] = acc[idx - 1] + 2.0 * g_new
            acc[idx - 2] = acc[idx - 2] - g_new
        pgrads, g_in = bwd(tapes[s], g_new[:, None])
        for name, gp in pgrads.items():
            grads[name] = grads[name] + gp if name in grads else gp
        for j in range(history_size + 1):
            acc[idx - 1 - j] = acc[idx - 1 - j] + g_in[:, j]
    return total, grads


def _loss_weights(model: SpectralModel):
    if model.wiring is Wiring.T1 and model.hermitian:
        return model.selector.multiplicity(True)
    return None


def _split_window(model: SpectralModel, window: np.ndarray, config: TrainConfig):
    H_req = config.history_frames
    if window.shape[1] != H_req + config.target_steps:
        raise ValueError(f"window has {window.shape[1]} frames, expected {H_req + config.target_steps}")
    return window[:, :H_req], window[:, H_req:]


def _to_rep(model: SpectralModel, frames: np.ndarray) -> np.ndarray:
    """(B, F, *grid) signals -> per-frame model representation."""
    if model.wiring is Wiring.T1:
        return model.to_kspace(frames)
    return frames


def backward(model: SpectralModel, batch, config: Optional[TrainConfig] = None):
    """Loss and exact parameter gradients for one batch.

    ``batch`` is either a ``(x, y)`` pair of signal batches (single-step,
    ZERO order, ``x`` of shape ``(B, *grid)`` or ``(B, C, *grid)``) or a
    window array ``(B, frames, *grid)`` interpreted with ``config``.
    Returns ``(loss, {parameter name: gradient})``.
    """
    config = config or TrainConfig()
    if isinstance(batch, tuple):
        x, y = (np.asarray(a, dtype=np.float64) for a in batch)
        nd = len(model.grid)
        if x.ndim == nd + 1:
            x = x[:, None]
        if y.ndim == nd + 1:
            y = y[:, None]
        if model.wiring is Wiring.T1:
            x, y = model.to_kspace(x), model.to_kspace(y)
        fwd = model.kspace_forward if model.wiring is Wiring.T1 else model.nspace_forward
        bwd = model.kspace_backward if model.wiring is Wiring.T1 else model.nspace_backward
        out, tape = fwd(x)
        value, g = _LOSSES[config.loss](out, y, _loss_weights(model), return_grad=True)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss {value}")
        grads, _ = bwd(tape, g)
        return value, grads
    window = _to_rep(model, np.asarray(batch, dtype=np.float64))
    hist, targ = _split_window(model, window, config)
    return _unroll(model, hist, targ, config.rollout_order, config.history_size, config.loss,
                   _loss_weights(model))


# -- data plumbing ------------------------------------------------------------------------

def _frames_of(dataset) -> np.ndarray:
    frames = getattr(dataset, "frames", dataset)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 3:
        raise ValueError("dataset frames must be (samples, frames, *grid)")
    return frames


def _windows(n_samples: int, n_frames: int, length: int) -> np.ndarray:
    if n_frames < length:
        raise ValueError(f"samples hold {n_frames} frames; window needs {length} "
                         f"(history plus target steps)")
    starts = n_frames - length + 1
    return np.array([(s, t) for s in range(n_samples) for t in range(starts)], dtype=np.int64)


def _gather(rep: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    return np.stack([rep[s, t:t + length] for s, t in idx])


def dataset_loss(model: SpectralModel, dataset, config: TrainConfig, batch_size: int = 256) -> float:
    """Training objective averaged over every window of ``dataset``."""
    frames = _frames_of(dataset)
    rep = _to_rep(model, frames)
    length = config.history_frames + config.target_steps
    idx = _windows(frames.shape[0], frames.shape[1], length)
    total = 0.0
    for lo in range(0, len(idx), batch_size):
        w = _gather(rep, idx[lo:lo + batch_size], length)
        hist, targ = w[:, :config.history_frames], w[:, config.history_frames:]
        value, _ = _unroll(model, hist, targ, config.rollout_order, config.history_size, config.loss,
                           _loss_weights(model), need_grad=False)
        total += value * len(w)
    return total / len(idx)


def train(model: SpectralModel, dataset, config: TrainConfig, val=None, log=None) -> TrainReport:
    """Minibatch AdamW on ``dataset`` (updates ``model`` in place).

    ``dataset`` and ``val`` are frame arrays ``(samples, frames, *grid)`` or
    objects exposing ``.frames``. Deterministic given ``config.seed``.
    """
    frames = _frames_of(dataset)
    if frames.shape[0] == 0:
        raise ValueError("training set is empty")
    if model.in_channels != config.history_size + 1:
        raise ValueError(f"model takes {model.in_channels} input channels but history_size "
                         f"{config.history_size} supplies {config.history_size + 1}")
    rep = _to_rep(model, frames)
    length = config.history_frames + config.target_steps
    idx = _windows(frames.shape[0], frames.shape[1], length)
    weights = _loss_weights(model)
    names = [n for n, _ in model.named_parameters()]
    opt = AdamW([p for _, p in model.named_parameters()], lr=config.learning_rate,
                weight_decay=config.weight_decay)
    gen = rng.stream(config.seed, "shuffle")
    report = TrainReport(initial_loss=dataset_loss(model, frames, config))
    _check_divergence(report.initial_loss, "initial")
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        opt.lr = config.learning_rate_at(epoch)
        order = gen.permutation(len(idx))
        running = 0.0
        for lo in range(0, len(idx), config.batch_size):
            sel = idx[order[lo:lo + config.batch_size]]
            w = _gather(rep, sel, length)
            value, grads = _unroll(model, w[:, :config.history_frames], w[:, config.history_frames:],
                                   config.rollout_order, config.history_size, config.loss, weights)
            _check_divergence(value, f"epoch {epoch + 1}")
            opt.step([grads[n] for n in names])
            running += value * len(sel)
        report.train_loss.append(running / len(idx))
        report.epoch_seconds.append(time.perf_counter() - t0)
        if val is not None:
            report.val_nmse.append(evaluate_nspace(model, val, config))
        if log is not None:
            log(epoch + 1, report)
        if (config.stop_at_val_nmse is not None and report.val_nmse
                and report.val_nmse[-1] < config.stop_at_val_nmse):
            break
    report.final_loss = dataset_loss(model, frames, config)
    return report


def _check_divergence(value: float, where: str) -> None:
    if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise DivergenceError(f"training diverged at {where}: loss {value:.6g} "
                              f"(limit {DIVERGENCE_LIMIT:g}); lower the learning rate")


# -- rollout and evaluation -----------------------------------------------------------------

def rollout(model: SpectralModel, initial_history, steps: int, order=RolloutOrder.ZERO,
            history_size: Optional[int] = None) -> np.ndarray:
    """Predict ``steps`` future frames from ``initial_history`` (oldest first).

    ``initial_history`` is ``(frames, *grid)`` or batched ``(B, frames, *grid)``.
    Returns the predicted frames with the same batching, ``(…, steps, *grid)``.
    """
    order = _parse(RolloutOrder, order)
    history_size = model.in_channels - 1 if history_size is None else history_size
    if history_size + 1 != model.in_channels:
        raise ValueError(f"history_size {history_size} does not match model input channels {model.in_channels}")
    hist = np.asarray(initial_history, dtype=np.float64)
    nd = len(model.grid)
    single = hist.ndim == nd + 1
    if single:
        hist = hist[None]
    if hist.ndim != nd + 2 or hist.shape[2:] != model.grid:
        raise ValueError(f"history extent {hist.shape} does not match model grid {model.grid}")
    need = _history_frames(order, history_size)
    if hist.shape[1] < need:
        raise ValueError(f"{order.value} order with history_size {history_size} needs {need} "
                         f"history frames, got {hist.shape[1]}")
    states = [hist[:, j] for j in range(hist.shape[1])]
    preds = []
    for _ in range(steps):
        h = model.predict_signal(_input_stack(states, history_size))
        h = h[:, 0] if h.ndim == nd + 2 else h
        states.append(_combine(order, states, h))
        preds.append(states[-1])
    out = np.stack(preds, axis=1) if preds else np.zeros(hist.shape[:1] + (0,) + model.grid)
    return out[0] if single else out


def evaluate_nspace(model: SpectralModel, dataset, config: Optional[TrainConfig] = None,
                    batch_size: int = 256) -> float:
    """Mean n-space N-MSE ``||y_hat - y||^2 / ||y||^2`` over every window and predicted step."""
    config = config or TrainConfig()
    frames = _frames_of(dataset)
    H_req = config.history_frames
    length = H_req + config.target_steps
    idx = _windows(frames.shape[0], frames.shape[1], length)
    errs = []
    for lo in range(0, len(idx), batch_size):
        w = _gather(frames, idx[lo:lo + batch_size], length)
        pred = rollout(model, w[:, :H_req], config.target_steps, config.rollout_order, config.history_size)
        y = w[:, H_req:]
        num = ((pred - y) ** 2).reshape(len(w), config.target_steps, -1).sum(axis=2)
        den = (y ** 2).reshape(len(w), config.target_steps, -1).sum(axis=2)
        if np.any(den == 0):
            raise ValueError("N-MSE undefined for an all-zero target frame")
        errs.append((num / den).ravel())
    return float(np.mean(np.concatenate(errs)))
