"""Forward-pass timing of T1 versus FNO-style stacks.

Each grid cell builds both wirings with the same depth, width, selector and
seed (so per-mode weights are identical) and times a batch-1 forward pass
on the same input. T1 is timed with its n-space output (one forward and
one inverse transform), so the comparison isolates the per-layer
transforms of the FNO-style stack.

Protocol: BLAS/FFT thread pools pinned to one thread, ``warmup`` untimed
passes, then ``repetitions`` timed samples with ``time.perf_counter_ns``.
A sample is a loop of ``inner`` passes, where ``inner`` is doubled until a
sample lasts at least 10x the clock resolution (and at least 200 us).
Reported times are per pass: median and interquartile range of the samples.
"""

from __future__ import annotations

import csv
import gc
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import rng
from .layers import CountingTransform, SpectralModel, Wiring, build_model, t1_forward
from .mode_selection import lowpass_selector
from .transforms import TransformKind

__all__ = ["BenchGrid", "BenchReport", "run_speedup_grid", "count_transforms", "time_forward"]

MIN_SAMPLE_NS = 200_000


@dataclass(frozen=True)
class BenchGrid:
    depths: tuple = (1, 2, 4, 6, 8)
    widths: tuple = (8, 32)
    resolutions: tuple = (32, 64, 128)
    repetitions: int = 7
    warmup: int = 2
    modes: int = 16  # low-pass m per axis, capped at resolution // 2
    ndim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 5:
            raise ValueError("reported cells need at least 5 repetitions")
        if self.warmup < 0 or self.ndim not in (1, 2) or self.modes < 1:
            raise ValueError("warmup must be >= 0, ndim 1 or 2, modes >= 1")
        for name in ("depths", "widths", "resolutions"):
            vals = getattr(self, name)
            if not vals or min(vals) < 1:
                raise ValueError(f"{name} must be a nonempty list of positive integers")
            object.__setattr__(self, name, tuple(int(v) for v in vals))


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)  # dicts keyed like the CSV columns

    COLUMNS = ("depth", "width", "resolution", "wiring", "median_us", "iqr_us", "speedup")

    def speedup(self, depth: int, width: int, resolution: int) -> float:
        for r in self.rows:
            if (r["depth"], r["width"], r["resolution"], r["wiring"]) == (depth, width, resolution, "t1"):
                return r["speedup"]
        raise KeyError((depth, width, resolution))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in r.items()})


def count_transforms(model: SpectralModel, one_forward: str = "nspace", x=None) -> tuple:
    """(forward, inverse) transform executions for one forward pass.

    ``one_forward`` is ``"nspace"`` (signal-space prediction) or ``"kspace"``
    (T1 reduced output only, as in the k-space objective).
    """
    probe = model.copy()
    counter = CountingTransform(probe.transform)
    probe.transform = counter
    if x is None:
        x = np.zeros((1, model.in_channels) + model.grid)
    if one_forward == "kspace":
        t1_forward(x, probe)
    elif one_forward == "nspace":
        probe.predict_signal(x)
    else:
        raise ValueError("one_forward must be 'nspace' or 'kspace'")
    return counter.forward_count, counter.inverse_count


def _clock_resolution_ns() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e9


def time_forward(fn, repetitions: int, warmup: int) -> np.ndarray:
    """Per-pass nanoseconds for ``repetitions`` samples of ``fn()`` (GC paused while timing)."""
    enabled = gc.isenabled()
    gc.disable()
    try:
        return _time(fn, repetitions, warmup)
    finally:
        if enabled:
            gc.enable()


def _time(fn, repetitions: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    floor = max(MIN_SAMPLE_NS, 10 * _clock_resolution_ns())
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        if time.perf_counter_ns() - t0 >= floor:
            break
        inner *= 2
    out = np.empty(repetitions)
    for r in range(repetitions):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        out[r] = (time.perf_counter_ns() - t0) / inner
    return out


def _cell_models(grid: BenchGrid, kind: TransformKind, depth: int, width: int, res: int):
    shape = (res,) * grid.ndim
    hermitian = kind is TransformKind.DFT
    m = min(grid.modes, res // 2)
    sel = lowpass_selector(m, shape, hermitian)
    common = dict(kind=kind, selector=sel, depth=depth, width=width, seed=grid.seed)
    return build_model(Wiring.T1, **common), build_model(Wiring.FNO_STYLE, **common), shape


def run_speedup_grid(grid: BenchGrid, transform_kind=TransformKind.DCT2, progress=None) -> BenchReport:
    kind = TransformKind.parse(transform_kind)
    report = BenchReport()
    with threadpool_limits(limits=1):
        for res in grid.resolutions:
            for width in grid.widths:
                for depth in grid.depths:
                    t1, fno, shape = _cell_models(grid, kind, depth, width, res)
                    x = rng.normal(rng.stream(grid.seed, "bench_input", res), (1, 1) + shape)
                    times = {
                        "t1": time_forward(lambda: t1.predict_signal(x), grid.repetitions, grid.warmup),
                        "fno": time_forward(lambda: fno.predict_signal(x), grid.repetitions, grid.warmup),
                    }
                    med = {k: float(np.median(v)) for k, v in times.items()}
                    for wiring, v in times.items():
                        q1, q3 = np.percentile(v, [25, 75])
                        report.rows.append({
                            "depth": depth, "width": width, "resolution": res, "wiring": wiring,
                            "median_us": med[wiring] / 1e3, "iqr_us": float(q3 - q1) / 1e3,
                            "speedup": med["fno"] / med[wiring],
                        })
                    if progress is not None:
                        progress(report.rows[-2])
    return report
