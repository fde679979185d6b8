"""Choosing retained modes and measuring what truncation costs.

For a target spectrum ``Y`` and a prediction ``Y_hat`` on the retained set
``s`` the full-spectrum error splits exactly into a reachable part on ``s``
and an irreducible part on the complement:

    L = sum_{k in s} |Y_k - Y_hat_k|^p + sum_{k not in s} |Y_k|^p = J + R_o

``p = 2`` (squared L2, the default, consistent with Parseval and the
relative-L2 training loss) or ``p = 1``. Values are averaged over samples.
For half-spectrum DFT selectors the retained set includes each mode's
conjugate partner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import ModeSelector, SpectralModel, Wiring, embed
from .transforms import TransformKind, TransformOperator

__all__ = [
    "SpectrumStats",
    "LossDecomposition",
    "lowpass_selector",
    "topk_selector",
    "spectrum_stats",
    "irreducible_loss",
    "decompose_loss",
    "reconstruction_curve",
    "gradient_dependency_mass",
    "support_mask",
]


def _shape(N) -> tuple:
    return tuple(int(n) for n in np.atleast_1d(N))


def lowpass_selector(m: int, N, hermitian: bool = False) -> ModeSelector:
    """Lowest-frequency modes.

    1D: indices ``0..m-1``. 2D: the ``m x m`` corner block. With
    ``hermitian`` (real-signal DFT models) modes are taken from one half of
    the conjugate-symmetric spectrum: 1D ``0..m-1`` with ``m <= N//2 + 1``,
    2D rows ``-(m-1)..m-1`` and columns ``0..m-1`` without conjugate duplicates.
    """
    shape = _shape(N)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if len(shape) == 1:
        limit = shape[0] // 2 + 1 if hermitian else shape[0]
        if m > limit:
            raise ValueError(f"cannot keep {m} low-pass modes of a length-{shape[0]} "
                             f"{'half ' if hermitian else ''}spectrum (max {limit})")
        return ModeSelector(tuple(range(m)), shape)
    H, W = shape
    if not hermitian:
        if m > min(H, W):
            raise ValueError(f"m={m} block does not fit a {H}x{W} spectrum")
        return ModeSelector(tuple((i, j) for i in range(m) for j in range(m)), shape)
    if 2 * m - 1 > H or m > W // 2 + 1:
        raise ValueError(f"m={m} half-plane block does not fit a {H}x{W} spectrum")
    rows = list(range(m)) + list(range(-(m - 1), 0))
    chosen, seen = [], set()
    for i in rows:
        for j in range(m):
            idx = (i % H, j)
            mirror = ((-i) % H, (-j) % W)
            if mirror in seen and mirror != idx:
                continue
            chosen.append(idx)
            seen.add(idx)
    return ModeSelector(tuple(chosen), shape)


@dataclass(frozen=True)
class SpectrumStats:
    """Mean absolute coefficient per mode over a dataset."""

    mean_abs: np.ndarray
    sample_count: int

    def __post_init__(self):
        a = np.asarray(self.mean_abs, dtype=np.float64)
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("spectrum statistics must be nonnegative and finite")
        if self.sample_count < 1:
            raise ValueError("spectrum statistics need at least one sample")
        object.__setattr__(self, "mean_abs", a)


def spectrum_stats(signals, kind=TransformKind.DCT2) -> SpectrumStats:
    """Stats of ``(count, *grid)`` signals (pass training-split targets only)."""
    signals = np.asarray(signals, dtype=np.float64)
    op = TransformOperator(kind, signals.shape[1:])
    return SpectrumStats(np.abs(op.forward(signals)).mean(axis=0), signals.shape[0])


def topk_selector(stats: SpectrumStats, m: int, hermitian: bool = False) -> ModeSelector:
    """The ``m`` modes with largest mean magnitude; ties go to the lower (flat) index.

    With ``hermitian`` only one representative of each conjugate pair (the
    lower flat index) is a candidate.
    """
    a = stats.mean_abs
    shape = a.shape
    flat = a.reshape(-1)
    cand = np.arange(flat.size)
    if hermitian:
        coords = np.unravel_index(cand, shape)
        mirror = np.ravel_multi_index(tuple((-c) % n for c, n in zip(coords, shape)), shape)
        cand = cand[cand <= mirror]
    if not 1 <= m <= cand.size:
        raise ValueError(f"m={m} outside [1, {cand.size}]")
    # stable sort on -value keeps index order among ties
    order = cand[np.argsort(-flat[cand], kind="stable")][:m]
    if len(shape) == 1:
        idx = tuple(int(i) for i in order)
    else:
        idx = tuple(zip(*[c.tolist() for c in np.unravel_index(order, shape)]))
    return ModeSelector(idx, shape)


def support_mask(s: ModeSelector, hermitian: bool = False) -> np.ndarray:
    """Boolean mask over the full spectrum of coefficients reachable through ``s``."""
    mask = np.zeros(s.size, dtype=bool)
    mask[s.flat] = True
    if hermitian:
        mask[s.mirror] = True
    return mask.reshape(s.shape)


def _power(a: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.abs(a)
    if norm == "l2":
        return a.real ** 2 + a.imag ** 2 if np.iscomplexobj(a) else a * a
    raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")


def _spectra(Y: np.ndarray, kind) -> np.ndarray:
    if kind is not None:
        Y = TransformOperator(kind, Y.shape[1:]).forward(Y)
    if Y.shape[0] == 0:
        raise ValueError("irreducible loss of an empty dataset is undefined")
    return Y


def irreducible_loss(targets, s: ModeSelector, norm: str = "l2", kind=None, hermitian: bool = False) -> float:
    """Mean over samples of the discarded-mode error ``sum_{k not in s} |Y_k|^p``.

    ``targets`` are spectra ``(count, *shape)`` (a single spectrum is also
    accepted); pass ``kind`` to transform n-space signals first.
    """
    Y = np.asarray(getattr(targets, "coefficients", targets))
    if Y.shape == s.shape:
        Y = Y[None]
    Y = _spectra(Y, kind)
    if Y.shape[1:] != s.shape:
        raise ValueError(f"spectrum extent {Y.shape[1:]} does not match selector extent {s.shape}")
    mask = ~support_mask(s, hermitian)
    return float(_power(Y[:, mask], norm).sum(axis=1).mean())


@dataclass(frozen=True)
class LossDecomposition:
    J: float
    R_o: float
    L: float
    norm: str = "l2"


def decompose_loss(model: SpectralModel, dataset, s: ModeSelector | None = None, norm: str = "l2",
                   batch_size: int = 256) -> LossDecomposition:
    """Split a T1 model's full-spectrum error on ``dataset`` into ``J + R_o``.

    ``dataset`` holds frames ``(count, frames, *grid)`` or exposes
    ``.frames``; the first ``in_channels`` frames are the input history and
    the next frame is the target.
    """
    if model.wiring is not Wiring.T1:
        raise ValueError("loss decomposition applies to T1 models")
    s = model.selector if s is None else s
    if s != model.selector:
        raise ValueError("model does not operate on the given selector")
    frames = np.asarray(getattr(dataset, "frames", dataset), dtype=np.float64)
    if frames.shape[0] == 0:
        raise ValueError("loss decomposition of an empty dataset is undefined")
    keep = support_mask(s, model.hermitian)
    J = R = 0.0
    for lo in range(0, frames.shape[0], batch_size):
        fr = frames[lo:lo + batch_size]
        c = model.in_channels
        x = fr[:, c - 1::-1]  # most recent history frame first
        Y = model.transform.forward(fr[:, c])
        out, _ = model.kspace_forward(model.to_kspace(x))
        E = embed(out[:, 0], s, hermitian=model.hermitian)
        J += float(_power((Y - E)[:, keep], norm).sum())
        R += float(_power(Y[:, ~keep], norm).sum())
    n = frames.shape[0]
    J, R = J / n, R / n
    return LossDecomposition(J=J, R_o=R, L=J + R, norm=norm)


def reconstruction_curve(dataset, selector_family: str, m_values, kind=TransformKind.DCT2,
                         stats: SpectrumStats | None = None, hermitian: bool = False) -> list:
    """Mean n-space N-MSE of truncate-embed-invert on the dataset targets, per ``m``.

    ``selector_family`` is ``"lowpass"`` or ``"topk"``; ``m`` is the low-pass
    parameter and top-k keeps the same number of modes. Top-k statistics
    default to the training split (or all targets when no split exists).
    Returns a list of ``(m, nmse)`` pairs.
    """
    kind = TransformKind.parse(kind)
    frames = np.asarray(getattr(dataset, "frames", dataset), dtype=np.float64)
    y = frames[:, -1]
    grid = y.shape[1:]
    op = TransformOperator(kind, grid)
    Y = op.forward(y)
    if selector_family == "topk" and stats is None:
        splits = getattr(dataset, "splits", {}) or {}
        train = y[np.asarray(splits["train"])] if "train" in splits else y
        stats = spectrum_stats(train, kind)
    denom = (y ** 2).reshape(len(y), -1).sum(axis=1)
    rows = []
    for m in m_values:
        low = lowpass_selector(m, grid, hermitian)
        if selector_family == "lowpass":
            s = low
        elif selector_family == "topk":
            s = topk_selector(stats, low.m, hermitian)
        else:
            raise ValueError(f"unknown selector family {selector_family!r}; expected 'lowpass' or 'topk'")
        mask = support_mask(s, hermitian)
        rec = op.inverse(np.where(mask, Y, 0))
        if np.iscomplexobj(rec):
            rec = rec.real
        err = ((rec - y) ** 2).reshape(len(y), -1).sum(axis=1)
        rows.append((int(m), float(np.mean(err / denom))))
    return rows


def gradient_dependency_mass(phi: Callable, s: ModeSelector, probe, kind=TransformKind.DCT2,
                             rel_step: float = 1e-5) -> np.ndarray:
    """Per retained mode ``k``: ``sum_{j not in s} |d psi_k / d X_j|`` at ``X = T(probe)``.

    ``psi = T o phi o T^-1`` and the derivatives are central finite
    differences with step ``rel_step * max(1, |X_j|)``. DCT-II only.
    """
    kind = TransformKind.parse(kind)
    if kind is not TransformKind.DCT2:
        raise ValueError("gradient dependency mass is defined for real (DCT-II) spectra")
    x = np.asarray(getattr(probe, "values", probe), dtype=np.float64)
    if x.shape != s.shape:
        raise ValueError(f"probe extent {x.shape} does not match selector extent {s.shape}")
    op = TransformOperator(kind, s.shape)

    def psi(X):
        out = np.asarray(phi(op.inverse(X)), dtype=np.float64)
        if out.shape != s.shape or not np.all(np.isfinite(out)):
            raise ValueError("phi must return a finite signal of the probe's extent")
        return op.forward(out).reshape(-1)[s.flat]

    X = op.forward(x).reshape(-1)
    discarded = np.setdiff1d(np.arange(s.size), s.flat)
    mass = np.zeros(s.m)
    for j in discarded:
        h = rel_step * max(1.0, abs(X[j]))
        Xp = X.copy()
        Xm = X.copy()
        Xp[j] += h
        Xm[j] -= h
        d = (psi(Xp.reshape(s.shape)) - psi(Xm.reshape(s.shape))) / (2 * h)
        mass += np.abs(d)
    return mass
