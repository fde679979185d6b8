"""Orthonormal DCT-II and DFT, 1D and axis-separable 2D.

The DCT-II uses the permuted length-N FFT method (Makhoul 1980): even
samples in order followed by odd samples reversed, one complex FFT, and a
quarter-sample phase twiddle. The DFT is numpy's pocketfft with
``norm="ortho"``. Both run in O(N log N) for every N, powers of two or not.

Conventions (orthonormal, so the inverse is the adjoint):

    DCT-II   X_k = s_k sum_n x_n cos(pi (2n + 1) k / (2N)),
             s_0 = sqrt(1/N), s_k = sqrt(2/N) for k > 0
    DFT      X_k = N^(-1/2) sum_n x_n exp(-2 pi i k n / N)
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TransformKind",
    "Signal",
    "Spectrum",
    "TransformOperator",
    "dct",
    "idct",
    "dft",
    "idft",
    "dct2_matrix",
    "dft_matrix",
    "dct2_forward",
    "dct2_inverse",
    "dft_forward",
    "dft_inverse",
    "transform_2d",
    "inverse_2d",
    "transform",
]


class TransformKind(str, enum.Enum):
    DCT2 = "dct2"
    DFT = "dft"

    @classmethod
    def parse(cls, value) -> "TransformKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown transform kind {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"{what} contains non-finite entries (first at index {tuple(bad)})")


def _as_grid(values, what: str) -> np.ndarray:
    try:
        arr = np.asarray(values)
    except ValueError as exc:  # ragged nested sequences
        raise ValueError(f"{what} must be a rectangular grid: {exc}") from None
    if arr.dtype == object:
        raise ValueError(f"{what} must be a rectangular numeric grid")
    return arr


@dataclass(frozen=True)
class Signal:
    """Real n-space samples on a 1D or 2D grid."""

    values: np.ndarray
    resolution: tuple = field(default=None)

    def __post_init__(self):
        arr = _as_grid(self.values, "signal")
        if np.iscomplexobj(arr):
            raise ValueError("signal values must be real")
        arr = arr.astype(np.float64)
        if arr.ndim not in (1, 2) or arr.size == 0:
            raise ValueError(f"signal must be a non-empty 1D or 2D array, got shape {arr.shape}")
        _check_finite(arr, "signal")
        res = arr.shape if self.resolution is None else tuple(int(r) for r in np.atleast_1d(self.resolution))
        if res != arr.shape:
            raise ValueError(f"resolution {res} does not match array extent {arr.shape}")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "resolution", res)


@dataclass(frozen=True)
class Spectrum:
    """k-space coefficients of a signal under ``kind`` (real for DCT-II, complex for DFT)."""

    coefficients: np.ndarray
    kind: TransformKind

    def __post_init__(self):
        kind = TransformKind.parse(self.kind)
        coeffs = _as_grid(self.coefficients, "spectrum")
        coeffs = coeffs.astype(np.complex128 if kind is TransformKind.DFT else np.float64)
        _check_finite(coeffs, "spectrum")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "kind", kind)

    @property
    def resolution(self) -> tuple:
        return self.coefficients.shape


# -- array kernels --------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _dct_scale(n: int) -> np.ndarray:
    s = np.full(n, np.sqrt(2.0 / n))
    s[0] = np.sqrt(1.0 / n)
    s.setflags(write=False)
    return s


@functools.lru_cache(maxsize=64)
def _twiddles(n: int):
    # forward: scale_k * exp(-i pi k / 2N); inverse: exp(i pi k / 2N) / scale_k
    k = np.arange(n)
    fwd = np.exp(-0.5j * np.pi * k / n) * _dct_scale(n)
    inv = np.exp(0.5j * np.pi * k / n) / _dct_scale(n)
    fwd.setflags(write=False)
    inv.setflags(write=False)
    return fwd, inv


def dct(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Orthonormal DCT-II of ``x`` along ``axis``."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return dct(x.real, axis) + 1j * dct(x.imag, axis)
    x = np.moveaxis(x.astype(np.float64, copy=False), axis, -1)
    n = x.shape[-1]
    v = np.concatenate([x[..., ::2], x[..., 1::2][..., ::-1]], axis=-1)
    V = np.fft.fft(v, axis=-1)
    out = (V * _twiddles(n)[0]).real
    return np.moveaxis(out, -1, axis)


def idct(X: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`dct` (orthonormal DCT-III) along ``axis``."""
    X = np.asarray(X)
    if np.iscomplexobj(X):
        return idct(X.real, axis) + 1j * idct(X.imag, axis)
    X = np.moveaxis(X.astype(np.float64, copy=False), axis, -1)
    n = X.shape[-1]
    # V_k = exp(i pi k / 2N) (X_k / s_k - i X_{N-k} / s_{N-k}), X_N := 0
    inv = _twiddles(n)[1]
    scale = 1.0 / _dct_scale(n)
    V = np.empty(X.shape, dtype=np.complex128)
    V.real = X
    V.imag[..., 0] = 0.0
    V.imag[..., 1:] = -X[..., :0:-1] * (scale[:0:-1] / scale[1:])
    V *= inv
    v = np.fft.ifft(V, axis=-1).real
    half = (n + 1) // 2
    out = np.empty_like(v)
    out[..., ::2] = v[..., :half]
    out[..., 1::2] = v[..., half:][..., ::-1]
    return np.moveaxis(out, -1, axis)


def dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Orthonormal DFT along ``axis``."""
    return np.fft.fft(x, axis=axis, norm="ortho")


def idft(X: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse orthonormal DFT along ``axis`` (complex output)."""
    return np.fft.ifft(X, axis=axis, norm="ortho")


def dct2_matrix(n: int) -> np.ndarray:
    """Definitional O(N^2) orthonormal DCT-II matrix, ``X = M @ x``."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return _dct_scale(n)[:, None] * np.cos(np.pi * (2 * j + 1) * k / (2 * n))


def dft_matrix(n: int) -> np.ndarray:
    """Definitional O(N^2) orthonormal DFT matrix."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return np.exp(-2j * np.pi * k * j / n) / np.sqrt(n)


_MATRICES = {TransformKind.DCT2: dct2_matrix, TransformKind.DFT: dft_matrix}


@dataclass(frozen=True)
class TransformOperator:
    """Orthonormal transform over the trailing ``len(resolution)`` axes.

    Leading axes are batch/channel axes. Immutable and stateless, so one
    instance can be shared between threads.
    """

    kind: TransformKind
    resolution: tuple

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind.parse(self.kind))
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        if len(res) not in (1, 2) or any(r < 1 for r in res):
            raise ValueError(f"resolution must be 1 or 2 positive integers, got {self.resolution!r}")
        object.__setattr__(self, "resolution", res)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def is_complex(self) -> bool:
        return self.kind is TransformKind.DFT

    def _check(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        if a.shape[a.ndim - len(self.resolution):] != self.resolution or a.ndim < len(self.resolution):
            raise ValueError(f"trailing extent {a.shape[-len(self.resolution):]} does not match "
                             f"transform resolution {self.resolution}")
        return a

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = self._check(x)
        axes = tuple(range(-len(self.resolution), 0))
        if self.kind is TransformKind.DFT:
            return np.fft.fftn(out, axes=axes, norm="ortho")
        for axis in axes:
            out = dct(out, axis=axis)
        return out

    def inverse(self, X: np.ndarray) -> np.ndarray:
        out = self._check(X)
        axes = tuple(range(-len(self.resolution), 0))
        if self.kind is TransformKind.DFT:
            return np.fft.ifftn(out, axes=axes, norm="ortho")
        for axis in axes:
            out = idct(out, axis=axis)
        return out

    def matrix(self) -> np.ndarray:
        """Dense matrix acting on the row-major flattened grid (oracle use, small grids)."""
        make = _MATRICES[self.kind]
        mats = [make(r) for r in self.resolution]
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out


# -- typed entry points ----------------------------------------------------------

def _signal_values(x) -> np.ndarray:
    return x.values if isinstance(x, Signal) else Signal(x).values


def dct2_forward(x) -> Spectrum:
    values = _signal_values(x)
    return Spectrum(TransformOperator(TransformKind.DCT2, values.shape).forward(values), TransformKind.DCT2)


def dct2_inverse(X: Spectrum) -> Signal:
    if not isinstance(X, Spectrum) or X.kind is not TransformKind.DCT2:
        kind = getattr(X, "kind", type(X).__name__)
        raise ValueError(f"dct2_inverse expects a DCT2 spectrum, got {kind}")
    return Signal(TransformOperator(X.kind, X.resolution).inverse(X.coefficients))


def dft_forward(x) -> Spectrum:
    values = _signal_values(x)
    return Spectrum(TransformOperator(TransformKind.DFT, values.shape).forward(values), TransformKind.DFT)


def dft_inverse(X: Spectrum, atol: float = 1e-9) -> Signal:
    """Inverse DFT of the spectrum of a real signal.

    The imaginary residue of the result must stay below ``atol`` times the
    signal norm; spectra without conjugate symmetry are rejected.
    """
    if not isinstance(X, Spectrum) or X.kind is not TransformKind.DFT:
        kind = getattr(X, "kind", type(X).__name__)
        raise ValueError(f"dft_inverse expects a DFT spectrum, got {kind}")
    out = TransformOperator(X.kind, X.resolution).inverse(X.coefficients)
    scale = max(1.0, float(np.linalg.norm(out)))
    if np.abs(out.imag).max() > atol * scale:
        raise ValueError("spectrum is not conjugate-symmetric; inverse would not be real")
    return Signal(out.real)


def transform_2d(x, kind) -> Spectrum:
    """Separable 2D transform of a rectangular grid."""
    kind = TransformKind.parse(kind)
    values = _signal_values(x)
    if values.ndim != 2:
        raise ValueError(f"transform_2d expects a 2D grid, got shape {values.shape}")
    return Spectrum(TransformOperator(kind, values.shape).forward(values), kind)


def inverse_2d(X: Spectrum) -> Signal:
    if X.coefficients.ndim != 2:
        raise ValueError("inverse_2d expects a 2D spectrum")
    return dct2_inverse(X) if X.kind is TransformKind.DCT2 else dft_inverse(X)


def transform(x, kind) -> Spectrum:
    """Forward transform of a 1D or 2D signal."""
    kind = TransformKind.parse(kind)
    return dct2_forward(x) if kind is TransformKind.DCT2 else dft_forward(x)

