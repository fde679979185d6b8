"""Synthetic operator-learning datasets with known ground truth.

Fields live on the periodic domain ``[0, 2 pi)^d`` so DFT wavenumbers are
integers. Two solution operators are provided:

* heat: each Fourier mode decays by ``exp(-nu |k|^2 T)`` (exact, diagonal in k-space)
* Burgers: ``u_t = -u u_x + nu u_xx`` integrated pseudospectrally with
  2/3-rule dealiasing of the quadratic term and classical RK4.

Burgers time step. Explicit RK4 is stable on the negative real axis up to
``|lambda dt| <= 2.78`` and the advective rate is bounded by
``max|u| / dx``, so a step is admissible when

    dt <= dt_max = min(dx / max|u0|, 2.78 / (nu k_max^2))

with ``k_max = N // 2`` the largest grid wavenumber. The default step is
``0.5 dt_max`` rounded down so that an integer number of steps lands on
``T``; user steps above ``dt_max`` are rejected.

Dataset file (``.sfds``), little-endian:

    b"SFDS" | u32 version | u32 kind (0 heat2d, 1 burgers1d, 2 custom)
    u32 ndim | u32 extent[ndim] | u64 count | u32 frames
    f64 values[count][frames][extent...]

Frame 0 is the input x; the last frame is the target y (intermediate
frames, if any, are equally spaced snapshots). A JSON manifest beside the
file records the generator config, split index ranges and a SHA-256 of
the binary file.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .transforms import Signal

__all__ = [
    "DataKind",
    "GeneratorConfig",
    "DatasetPair",
    "Dataset",
    "sample_initial_condition",
    "heat_solution",
    "burgers_solution",
    "burgers_stable_dt",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
    "non_monotone_dataset",
    "BlowUpError",
]

BLOWUP_LIMIT = 1e3
RK4_REAL_AXIS = 2.78


class BlowUpError(ArithmeticError):
    """Integration left the admissible range (``max|u| > 1e3``)."""


class DataKind(str, enum.Enum):
    HEAT_2D = "heat2d"
    BURGERS_1D = "burgers1d"
    CUSTOM = "custom"


_KIND_TAGS = {DataKind.HEAT_2D: 0, DataKind.BURGERS_1D: 1, DataKind.CUSTOM: 2}


@dataclass(frozen=True)
class GeneratorConfig:
    kind: DataKind = DataKind.BURGERS_1D
    resolution: int = 256
    viscosity: float = 0.05
    horizon: float = 1.0
    decay: float = 2.0  # initial-condition spectrum ~ (1 + |k|)^-decay
    count: int = 100
    seed: int = 0
    amplitude: float = 1.0  # expected RMS of initial conditions
    frames: int = 2  # snapshots per sample, including t = 0
    dt: Optional[float] = None  # Burgers step; None -> half the stability bound
    splits: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        object.__setattr__(self, "kind", DataKind(self.kind))
        object.__setattr__(self, "splits", tuple(float(s) for s in self.splits))
        if self.kind is DataKind.CUSTOM:
            raise ValueError("custom datasets are not generated")
        if not self.viscosity > 0 or not self.horizon > 0:
            raise ValueError("viscosity and horizon must be positive")
        if self.count < 1 or self.resolution < 2 or self.frames < 2:
            raise ValueError("need count >= 1, resolution >= 2, frames >= 2")
        if self.decay < 0 or not self.amplitude > 0:
            raise ValueError("decay must be >= 0 and amplitude > 0")
        if len(self.splits) != 3 or min(self.splits) < 0 or abs(sum(self.splits) - 1) > 1e-9:
            raise ValueError("splits must be three nonnegative fractions summing to 1")

    @property
    def grid(self) -> tuple:
        r = int(self.resolution)
        return (r, r) if self.kind is DataKind.HEAT_2D else (r,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["splits"] = list(self.splits)
        return d


@dataclass(frozen=True)
class DatasetPair:
    x: Signal
    y: Signal
    metadata: dict = field(default_factory=dict)


@dataclass
class Dataset:
    """``frames`` is ``(count, frames, *grid)``; ``splits`` maps names to index arrays."""

    frames: np.ndarray
    kind: DataKind = DataKind.CUSTOM
    config: Optional[GeneratorConfig] = None
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = DataKind(self.kind)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim < 3 or self.frames.shape[1] < 2:
            raise ValueError(f"dataset frames must be (count, frames >= 2, *grid), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def grid(self) -> tuple:
        return self.frames.shape[2:]

    @property
    def x(self) -> np.ndarray:
        return self.frames[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.frames[:, -1]

    def subset(self, name: str) -> "Dataset":
        if name not in self.splits:
            raise KeyError(f"dataset has no split {name!r}; available: {sorted(self.splits)}")
        idx = np.asarray(self.splits[name], dtype=np.int64)
        return Dataset(self.frames[idx], self.kind, self.config, {})

    def pairs(self):
        meta = {"generator": self.kind.value}
        if self.config is not None:
            meta.update(viscosity=self.config.viscosity, horizon=self.config.horizon)
        return [DatasetPair(Signal(f[0]), Signal(f[-1]), dict(meta, index=i)) for i, f in enumerate(self.frames)]


# -- fields and solvers -----------------------------------------------------------------

def _wavenumbers(grid: tuple) -> list:
    return [np.fft.fftfreq(n, d=1.0 / n) for n in grid]


def _k_squared(grid: tuple) -> np.ndarray:
    ks = np.meshgrid(*_wavenumbers(grid), indexing="ij")
    return sum(k * k for k in ks)


def sample_initial_condition(config: GeneratorConfig, index: int) -> Signal:
    """Smooth random periodic field, deterministic per ``(config.seed, index)``.

    White noise is transformed, each coefficient scaled by
    ``(1 + |k|)^-decay`` and transformed back, which gives i.i.d. Gaussian
    spectral coefficients with that envelope. The result is rescaled by a
    fixed constant so its expected RMS equals ``config.amplitude``.
    """
    grid = config.grid
    env = (1.0 + np.sqrt(_k_squared(grid))) ** (-config.decay)
    noise = rng.normal(rng.stream(config.seed, "initial_condition", index), grid)
    field_ = np.fft.ifftn(np.fft.fftn(noise, norm="ortho") * env, norm="ortho").real
    # E[|x_n|^2] = sum(env^2) / N for orthonormal transforms of unit white noise
    rms = math.sqrt(float(np.sum(env ** 2)) / env.size)
    return Signal(field_ * (config.amplitude / rms))


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Signal) else np.asarray(x, dtype=np.float64)


def heat_solution(x0, nu: float, T: float) -> Signal:
    """Exact periodic heat-equation solution: mode ``k`` scaled by ``exp(-nu |k|^2 T)``."""
    u = _values(x0)
    if nu < 0 or T < 0:
        raise ValueError("viscosity and horizon must be nonnegative")
    decay = np.exp(-nu * _k_squared(u.shape) * T)
    return Signal(np.fft.ifftn(np.fft.fftn(u) * decay).real)


def _dealias_mask(n: int) -> np.ndarray:
    k = np.fft.rfftfreq(n, d=1.0 / n)
    return k < n / 3.0


def burgers_stable_dt(u0, nu: float) -> float:
    """Largest admissible RK4 step for ``u0`` (see module docstring)."""
    u = _values(u0)
    n = u.shape[-1]
    dx = 2 * math.pi / n
    k_max = n // 2
    umax = float(np.max(np.abs(u)))
    adv = dx / umax if umax > 0 else math.inf
    diff = RK4_REAL_AXIS / (nu * k_max ** 2) if nu > 0 else math.inf
    return min(adv, diff)


def burgers_solution(x0, nu: float, T: float, dt: Optional[float] = None, snapshots: int = 1):
    """Integrate viscous Burgers on ``[0, 2 pi)`` to time ``T``.

    With ``snapshots > 1`` returns an array of states at ``T * j / snapshots``
    for ``j = 1..snapshots``; otherwise the final state as a Signal. The
    step count is ``ceil(T / dt)`` per snapshot interval (effective step
    never exceeds ``dt``).
    """
    u = _values(x0)
    if u.ndim != 1:
        raise ValueError("burgers_solution expects a 1D periodic signal")
    if not nu > 0 or T < 0:
        raise ValueError("need nu > 0 and T >= 0")
    n = u.shape[0]
    bound = burgers_stable_dt(u, nu)
    if dt is None:
        dt = 0.5 * bound
    elif dt > bound:
        raise ValueError(f"time step {dt:.4g} exceeds the RK4 stability bound {bound:.4g} "
                         f"(min(dx / max|u0|, {RK4_REAL_AXIS} / (nu k_max^2)))")
    interval = T / snapshots
    steps = max(1, math.ceil(interval / dt - 1e-12)) if interval > 0 else 0
    h = interval / steps if steps else 0.0
    k = np.fft.rfftfreq(n, d=1.0 / n)
    ik_half = -0.5j * k * _dealias_mask(n)  # -(1/2) d/dx of u^2, dealiased
    lin = -nu * k * k

    def rhs(U):
        w = np.fft.irfft(U, n)
        return ik_half * np.fft.rfft(w * w) + lin * U

    U = np.fft.rfft(u)
    out = []
    for _ in range(snapshots):
        for _ in range(steps):
            k1 = rhs(U)
            k2 = rhs(U + 0.5 * h * k1)
            k3 = rhs(U + 0.5 * h * k2)
            k4 = rhs(U + h * k3)
            U = U + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        state = np.fft.irfft(U, n)
        peak = float(np.max(np.abs(state))) if np.all(np.isfinite(state)) else math.inf
        if peak > BLOWUP_LIMIT:
            raise BlowUpError(f"Burgers integration blew up (max|u| = {peak:.3g} > {BLOWUP_LIMIT:g})")
        out.append(state)
    if snapshots == 1:
        return Signal(out[0])
    return np.stack(out)


# -- datasets --------------------------------------------------------------------------------

def _split_indices(count: int, fractions: tuple) -> dict:
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    n_val = min(n_val, count - n_train)
    return {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, count),
    }


def _trajectory(config: GeneratorConfig, index: int) -> np.ndarray:
    x0 = sample_initial_condition(config, index).values
    F = config.frames
    if config.kind is DataKind.HEAT_2D:
        times = config.horizon * np.arange(1, F) / (F - 1)
        later = [heat_solution(x0, config.viscosity, t).values for t in times]
    else:
        later = burgers_solution(x0, config.viscosity, config.horizon, config.dt, snapshots=F - 1)
        later = [later.values] if isinstance(later, Signal) else list(later)
    return np.stack([x0] + later)


def generate_dataset(config: GeneratorConfig) -> Dataset:
    """Generate ``config.count`` samples; each depends only on ``(seed, index)``."""
    frames = np.stack([_trajectory(config, i) for i in range(config.count)])
    return Dataset(frames, config.kind, config, _split_indices(config.count, config.splits))


def non_monotone_dataset(N: int, count: int, seed: int, bump: int | None = None) -> Dataset:
    """1D signals whose mean DCT-II magnitude spectrum is not monotone in k.

    Coefficient magnitudes follow a decaying envelope plus a dominant bump
    at mode ``bump`` (default ``3N/4``) with random signs, so a top-k
    selector should pick the bump before the low-pass tail.
    """
    from .transforms import TransformOperator

    bump = (3 * N) // 4 if bump is None else bump
    k = np.arange(N)
    profile = (1.0 + k) ** -1.0 + 2.0 * np.exp(-0.5 * ((k - bump) / 1.5) ** 2)
    gen = rng.stream(seed, "non_monotone")
    coeffs = profile * np.where(gen.random((count, N)) < 0.5, -1.0, 1.0)
    coeffs *= 1.0 + 0.1 * rng.normal(gen, (count, N))
    x = TransformOperator("dct2", (N,)).inverse(coeffs)
    frames = np.stack([x, x], axis=1)
    return Dataset(frames, DataKind.CUSTOM, None, {"train": np.arange(count)})


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(dataset: Dataset, path) -> str:
    """Write ``path`` (binary) and ``path + '.json'`` (manifest); returns the manifest path."""
    frames = np.ascontiguousarray(dataset.frames, dtype="<f8")
    count, F = frames.shape[:2]
    grid = frames.shape[2:]
    header = (b"SFDS" + struct.pack("<III", 1, _KIND_TAGS[dataset.kind], len(grid))
              + struct.pack(f"<{len(grid)}I", *grid) + struct.pack("<QI", count, F))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())
    manifest = {
        "format": "SFDS",
        "version": 1,
        "file": os.path.basename(str(path)),
        "sha256": _sha256(path),
        "kind": dataset.kind.value,
        "grid": list(grid),
        "count": int(count),
        "frames": int(F),
        "config": dataset.config.to_dict() if dataset.config is not None else None,
        "splits": {k: [int(v[0]), int(v[-1]) + 1] if len(v) else [0, 0] for k, v in dataset.splits.items()},
    }
    mpath = str(path) + ".json"
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return mpath


def read_dataset(path, verify: bool = True) -> Dataset:
    """Read a dataset file and (if present) its manifest; checksum mismatches raise ValueError."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"SFDS":
        raise ValueError(f"{path}: not an SFDS dataset file")
    version, kind_tag, ndim = struct.unpack_from("<III", data, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    off = 16
    grid = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    count, F = struct.unpack_from("<QI", data, off)
    off += 12
    n = count * F * int(np.prod(grid))
    if len(data) - off != 8 * n:
        raise ValueError(f"{path}: payload has {len(data) - off} bytes, header implies {8 * n}")
    frames = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64).reshape((count, F) + grid)
    kind = {v: k for k, v in _KIND_TAGS.items()}[kind_tag]
    config, splits = None, {}
    mpath = str(path) + ".json"
    if os.path.exists(mpath):
        with open(mpath) as fh:
            manifest = json.load(fh)
        if verify and manifest.get("sha256") != hashlib.sha256(data).hexdigest():
            raise ValueError(f"{path}: checksum does not match manifest")
        if manifest.get("config"):
            config = GeneratorConfig(**manifest["config"])
        splits = {k: np.arange(a, b) for k, (a, b) in manifest.get("splits", {}).items()}
    return Dataset(frames, kind, config, splits)
