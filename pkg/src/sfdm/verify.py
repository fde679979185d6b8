"""Executable invariant suite behind ``sfdm verify``.

Every check is deterministic (seeded) and reports a metric, the tolerance
it was held to and a pass flag. Components that a check exercises can be
replaced through ``overrides`` so that deliberately broken variants (a
wrong vp variance, an unnormalized DFT) can be shown to fail:

    dct_forward, dct_inverse, dft_forward, dft_inverse   (x, axis=-1) -> array
    vp_dense_dct, vp_dense_dft, vp_diagonal              (N, m, seed) -> KSpaceWeights

The report contains no timings, so reruns are byte-identical. The timing
stability check of the benchmark runs only when requested.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from math import comb

import numpy as np

from . import initialization as init
from . import rng, transforms as tf
from .data import (GeneratorConfig, burgers_solution, generate_dataset, heat_solution, read_dataset,
                   sample_initial_condition, write_dataset)
from .layers import (Activation, KSpaceLayer, ModeSelector, build_model, embed, fdm_layer_forward, fno_stack_forward,
                     load_checkpoint, save_checkpoint, t1_forward, t1_predict_signal, truncate)
from .mode_selection import (SpectrumStats, decompose_loss, irreducible_loss, lowpass_selector,
                             reconstruction_curve, topk_selector)
from .training import TrainConfig, backward, relative_l2_loss, train

__all__ = ["CheckResult", "CHECKS", "run_verify", "report_json", "gradient_check", "Components"]


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


class Components:
    """Default implementations of everything a check may exercise."""

    def __init__(self, overrides: dict | None = None):
        self.dct_forward = tf.dct
        self.dct_inverse = tf.idct
        self.dft_forward = tf.dft
        self.dft_inverse = tf.idft
        self.vp_dense_dct = init.sample_vp_dense_dct
        self.vp_dense_dft = init.sample_vp_dense_dft
        self.vp_diagonal = init.sample_vp_diagonal
        for key, fn in (overrides or {}).items():
            if not hasattr(self, key):
                raise KeyError(f"unknown component {key!r}")
            setattr(self, key, fn)

    def pair(self, kind: str):
        if kind == "dct2":
            return self.dct_forward, self.dct_inverse
        return self.dft_forward, self.dft_inverse


class _Op:
    """1D transform operator built from component callables (for the probe)."""

    def __init__(self, forward, inverse):
        self.forward = lambda x: forward(x, axis=-1)
        self.inverse = lambda X: inverse(X, axis=-1)


CHECKS = []


def _check(module: str, name: str):
    def wrap(fn):
        CHECKS.append((module, name, fn))
        return fn
    return wrap


def _rel(a, b) -> float:
    den = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / den)


# -- transforms -----------------------------------------------------------------------------

@_check("transforms", "roundtrip_and_parseval_1d")
def _roundtrip_1d(c: Components):
    worst = 0.0
    gen = rng.stream(0, "verify", "roundtrip")
    for kind in ("dct2", "dft"):
        fwd, inv = c.pair(kind)
        for n in range(2, 1025):
            x = rng.normal(gen, n)
            X = fwd(x)
            worst = max(worst, _rel(inv(X).real, x),
                        abs(np.linalg.norm(X) - np.linalg.norm(x)) / np.linalg.norm(x))
    return worst <= 1e-10, worst, 1e-10, "N = 2..1024, DCT-II and DFT"


@_check("transforms", "roundtrip_and_parseval_2d")
def _roundtrip_2d(c: Components):
    worst = 0.0
    gen = rng.stream(0, "verify", "roundtrip2d")
    for kind in ("dct2", "dft"):
        fwd, inv = c.pair(kind)
        for shape in [(2, 2), (3, 5), (8, 8), (16, 12), (31, 32), (64, 64)]:
            x = rng.normal(gen, shape)
            X = fwd(fwd(x, axis=0), axis=1)
            back = inv(inv(X, axis=1), axis=0).real
            worst = max(worst, _rel(back, x), abs(np.linalg.norm(X) - np.linalg.norm(x)) / np.linalg.norm(x))
    return worst <= 1e-10, worst, 1e-10, "separable 2D grids"


@_check("transforms", "fft_path_matches_matrix")
def _matrix_path(c: Components):
    worst = 0.0
    gen = rng.stream(0, "verify", "matrix")
    for n in range(1, 65):
        x = rng.normal(gen, (3, n))
        worst = max(worst, _rel(c.dct_forward(x), x @ tf.dct2_matrix(n).T),
                    _rel(c.dft_forward(x), x @ tf.dft_matrix(n).T))
    return worst <= 1e-9, worst, 1e-9, "N = 1..64 against definitional matrices"


@_check("transforms", "linearity")
def _linearity(c: Components):
    gen = rng.stream(0, "verify", "linearity")
    worst = 0.0
    for kind in ("dct2", "dft"):
        fwd, _ = c.pair(kind)
        for n in (7, 64, 257):
            x, y = rng.normal(gen, n), rng.normal(gen, n)
            a, b = 1.7, -0.3
            worst = max(worst, _rel(fwd(a * x + b * y), a * fwd(x) + b * fwd(y)))
    return worst <= 1e-10, worst, 1e-10, ""


@_check("transforms", "dft_conjugate_symmetry")
def _conj_sym(c: Components):
    gen = rng.stream(0, "verify", "conj")
    worst = 0.0
    for n in (4, 8, 16, 33):
        X = c.dft_forward(rng.normal(gen, n))
        worst = max(worst, float(np.max(np.abs(X - np.conj(X[(-np.arange(n)) % n])))))
    return worst <= 1e-12, worst, 1e-12, ""


@_check("transforms", "cosine_sum_identities")
def _cosine(c: Components):
    worst = 0.0
    for N in range(2, 65):
        n = np.arange(N)
        for k in range(1, N):
            cs = np.cos(2 * np.pi * k * n / N)
            worst = max(worst, abs(cs.sum()))
            if 2 * k != N:  # k = N/2 gives cos^2 = 1 everywhere
                worst = max(worst, abs((cs ** 2).sum() - N / 2))
    return worst <= 1e-9, worst, 1e-9, "sum cos = 0, sum cos^2 = N/2 (k != N/2)"


@_check("transforms", "normalization_convention_probe")
def _normalization(c: Components):
    N, S = 256, 20000
    x = rng.normal(rng.stream(0, "verify", "norm"), (S, N))
    raw = np.fft.fft(x)
    expected = {"1/N": 1.0 / N, "1": float(N), "1/sqrt(N)": 1.0}
    factors = {"1/N": 1.0 / N, "1": 1.0, "1/sqrt(N)": None}
    worst = 0.0
    for name, f in factors.items():
        X = c.dft_forward(x) if f is None else raw * f
        var = float(np.mean(np.abs(X[:, 1:N // 2]) ** 2))
        worst = max(worst, abs(var / expected[name] - 1))
    return worst <= 0.1, worst, 0.1, "Var[X_k] for forward factors 1/N, 1, 1/sqrt(N)"


# -- initialization ----------------------------------------------------------------------------

@_check("initialization", "vp_entry_variances")
def _entry_variances(c: Components):
    cases = [(c.vp_dense_dct(1024, 1000, 1), 1024 / 1000 ** 2),
             (c.vp_dense_dft(1024, 1000, 2), 1024 / 1000 ** 2),
             (c.vp_diagonal(4_000_000, 1_000_000, 3), 4.0)]
    worst = 0.0
    for w, target in cases:
        v = w.values
        var = float(np.mean(v.real ** 2) + (np.mean(v.imag ** 2) if np.iscomplexobj(v) else 0.0))
        worst = max(worst, abs(var / target - 1))
    return worst <= 0.01, worst, 0.01, "10^6 draws each"


def _probe(c: Components, family: str, kind: str, N: int, m: int, batch: int, draws: int) -> float:
    scheme = init.InitScheme(family, kind, N, m, seed=5)
    if family == "vp_dense":
        fn = c.vp_dense_dct if kind == "dct2" else c.vp_dense_dft
    elif family == "vp_diagonal":
        fn = c.vp_diagonal
    else:
        fn = None
    sampler = None
    if fn is not None:
        sampler = lambda d: fn(N, m, 1000 + d)  # noqa: E731
    op = _Op(*c.pair(kind))
    return init.variance_probe(scheme, batch, draws, sampler=sampler, transform=op).mean_ratio


@_check("initialization", "vp_variance_probe")
def _vp_probe(c: Components):
    ratios = [_probe(c, "vp_dense", "dct2", 256, 16, 2000, 30),
              _probe(c, "vp_dense", "dft", 256, 16, 2000, 30),
              _probe(c, "vp_diagonal", "dct2", 256, 16, 2000, 200)]
    worst = max(abs(r - 1) for r in ratios)
    return worst <= 0.1, worst, 0.1, "ratios " + ", ".join(f"{r:.4f}" for r in ratios)


@_check("initialization", "xavier_collapse")
def _xavier(c: Components):
    ratios = [_probe(c, "xavier", "dct2", N, 24, 1000, 10) for N in (128, 256, 512, 1024)]
    decreasing = all(a > b for a, b in zip(ratios, ratios[1:]))
    ok = decreasing and ratios[-1] < 0.1
    return ok, ratios[-1], 0.1, "ratios " + ", ".join(f"{r:.4f}" for r in ratios)


@_check("initialization", "total_variance_under_transform")
def _cosine_identities(c: Components):
    N, S = 256, 100_000
    x = rng.normal(rng.stream(0, "verify", "a2"), (S, N), std=1.5)
    worst = 0.0
    tv = x.var(axis=0).sum()
    for kind in ("dct2", "dft"):
        X = c.pair(kind)[0](x)
        tX = X.real.var(axis=0).sum() + (X.imag.var(axis=0).sum() if np.iscomplexobj(X) else 0.0)
        worst = max(worst, abs(tX / tv - 1))
    return worst <= 0.05, worst, 0.05, "N=256, 1e5 samples"


def kspace_moment_errors(N: int = 64, m: int = 8, samples: int = 100000, weight_draws: int = 4000, seed: int = 0):
    """Per-coefficient variance of ``S^T A S X`` for random ``A`` and white ``X``.

    Returns ``(relative error of the k < m variances, max |moment| for k >= m)``
    pooled over real (DCT, N(0, s2A)) and complex (DFT, N(0, s2A) per part) weights.
    """
    sigma2, s2A = 1.3, 0.7
    worst, tail = 0.0, 0.0
    sel = ModeSelector(tuple(range(m)), (N,))
    for complex_ in (False, True):
        gen = rng.stream(seed, "kspace_moments", int(complex_))
        acc = np.zeros(N)
        mean = np.zeros(N, dtype=complex)
        per = samples // weight_draws
        for _ in range(weight_draws):
            if complex_:
                A = rng.complex_normal(gen, (m, m), math.sqrt(s2A))
                X = rng.complex_normal(gen, (per, N), math.sqrt(sigma2 / 2))
            else:
                A = rng.normal(gen, (m, m), math.sqrt(s2A))
                X = rng.normal(gen, (per, N), math.sqrt(sigma2))
            Xh = embed(truncate(X, sel) @ A.T, sel)
            acc += (np.abs(Xh) ** 2).sum(axis=0)
            mean += Xh.sum(axis=0)
        n = per * weight_draws
        var = acc / n - np.abs(mean / n) ** 2
        expected = (2 if complex_ else 1) * m * sigma2 * s2A
        worst = max(worst, float(np.max(np.abs(var[:m] / expected - 1))))
        tail = max(tail, float(np.max(np.abs(var[m:]))), float(np.max(np.abs(mean[m:]))))
    return worst, tail


@_check("initialization", "truncated_layer_moments")
def _kspace_moments(c: Components):
    worst, tail = kspace_moment_errors()
    return worst <= 0.05 and tail == 0.0, worst, 0.05, f"discarded-mode moments max {tail:g}"


@_check("initialization", "vp_determinism")
def _vp_det(c: Components):
    a = c.vp_dense_dct(64, 8, 11).values
    b = c.vp_dense_dct(64, 8, 11).values
    m1 = build_model("fno", "dft", lowpass_selector(4, (16,), True), 2, 3, seed=4)
    m2 = build_model("fno", "dft", lowpass_selector(4, (16,), True), 2, 3, seed=4)
    same = np.array_equal(a, b) and all(np.array_equal(p, q) for (_, p), (_, q) in
                                        zip(m1.named_parameters(), m2.named_parameters()))
    return same, 0.0 if same else 1.0, 0.0, "bit-identical weights for equal seeds"


# -- layers ---------------------------------------------------------------------------------------

@_check("layers", "transform_counts")
def _counts(c: Components):
    from .bench import count_transforms
    got = []
    for d in (1, 3, 8):
        t1 = build_model("t1", "dct2", lowpass_selector(4, (16,)), d, 2)
        fno = build_model("fno", "dct2", lowpass_selector(4, (16,)), d, 2)
        got.append(count_transforms(t1, "nspace") == (1, 1) and count_transforms(t1, "kspace") == (1, 0)
                   and count_transforms(fno, "nspace") == (d, d))
    ok = all(got)
    return ok, 0.0 if ok else 1.0, 0.0, "T1 (1, 1) / (1, 0), FNO (d, d)"


@_check("layers", "dense_matrix_oracle")
def _dense_oracle(c: Components):
    gen = rng.stream(0, "verify", "dense_oracle")
    worst = 0.0
    for kind in ("dct2", "dft"):
        for N in (5, 8, 16):
            m = 3
            op = tf.TransformOperator(kind, (N,))
            sel = ModeSelector(tuple(range(m)), (N,))
            A = rng.normal(gen, (m, m)) + (1j * rng.normal(gen, (m, m)) if kind == "dft" else 0)
            layer = KSpaceLayer(A)
            x = rng.normal(gen, (4, N))
            W = op.matrix()
            M = np.conj(W).T @ sel.matrix().T @ A @ sel.matrix() @ W
            got = fdm_layer_forward(x, layer, sel, op, hermitian=False)
            worst = max(worst, _rel(got, x @ M.T))
    return worst <= 1e-9, worst, 1e-9, "W* S^T A S W for N <= 16"


@_check("layers", "truncation_idempotence")
def _idempotent(c: Components):
    X = rng.normal(rng.stream(0, "verify", "idem"), (3, 16))
    s = ModeSelector((1, 4, 7, 9), (16,))
    once = embed(truncate(X, s), s)
    twice = embed(truncate(once, s), s)
    ok = np.array_equal(once, twice)
    return ok, 0.0 if ok else 1.0, 0.0, ""


@_check("layers", "dft_real_output")
def _real_output(c: Components):
    worst = 0.0
    for grid, m in (((32,), 6), ((12, 10), 3)):
        sel = lowpass_selector(m, grid, hermitian=True)
        model = build_model("t1", "dft", sel, 2, 3, seed=1)
        x = rng.normal(rng.stream(0, "verify", "real", len(grid)), (2,) + grid)
        Z, _ = model.kspace_forward(model.to_kspace(x[:, None]))
        full = model.transform.inverse(embed(Z, sel, hermitian=True))
        worst = max(worst, float(np.max(np.abs(full.imag))))
    return worst < 1e-9, worst, 1e-9, "imaginary residue of mirrored embeddings"


# -- mode selection ------------------------------------------------------------------------------

def topk_exhaustive(max_N: int = 12, max_m: int = 4, spectra: int = 100, seed: int = 0):
    """Worst excess of top-k ``R_o`` over the best subset, across all shapes and norms.

    Negative or zero means top-k attained the minimum everywhere.
    """
    worst = -math.inf
    gen = rng.stream(seed, "topk_exhaustive")
    for N in range(1, max_N + 1):
        for m in range(1, min(max_m, N) + 1):
            subsets = np.zeros((comb(N, m), N), dtype=bool)
            for i, sub in enumerate(itertools.combinations(range(N), m)):
                subsets[i, list(sub)] = True
            Y = rng.normal(gen, (spectra, N))
            for norm, p in (("l1", 1), ("l2", 2)):
                cost = np.abs(Y) ** p @ (~subsets).T  # (spectra, subsets)
                for i in range(spectra):
                    s = topk_selector(SpectrumStats(np.abs(Y[i]), 1), m)
                    r = irreducible_loss(Y[i], s, norm)
                    worst = max(worst, r - cost[i].min())
            # dataset-level statistics against the dataset-averaged L1 residual
            s = topk_selector(SpectrumStats(np.abs(Y).mean(axis=0), spectra), m)
            r = irreducible_loss(Y, s, "l1")
            worst = max(worst, r - (np.abs(Y) @ (~subsets).T).mean(axis=0).min())
    return worst


@_check("mode_selection", "topk_minimizes_irreducible_loss")
def _topk(c: Components):
    excess = topk_exhaustive()
    tol = 1e-12
    return excess <= tol, max(excess, 0.0), tol, "exhaustive over N <= 12, m <= 4, 100 spectra"


@_check("mode_selection", "monotone_spectrum_topk_is_lowpass")
def _monotone(c: Components):
    ok = True
    for N in (8, 33, 64):
        stats = SpectrumStats(np.linspace(2.0, 0.1, N), 1)
        for m in (1, N // 2, N):
            ok &= topk_selector(stats, m).indices == lowpass_selector(m, N).indices
    return ok, 0.0 if ok else 1.0, 0.0, ""


@_check("mode_selection", "loss_decomposition_identity")
def _decomp(c: Components):
    worst_id, worst_direct = 0.0, 0.0
    gen = rng.stream(0, "verify", "decomp")
    for i, kind in enumerate(("dct2", "dft")):
        sel = lowpass_selector(5, (24,), hermitian=kind == "dft")
        model = build_model("t1", kind, sel, 2, 3, seed=i)
        frames = rng.normal(gen, (50, 2, 24))
        d = decompose_loss(model, frames)
        pred = t1_predict_signal(frames[:, 0], model)
        direct = float(np.mean(np.sum((pred - frames[:, 1]) ** 2, axis=1)))
        worst_id = max(worst_id, abs(d.L - (d.J + d.R_o)))
        worst_direct = max(worst_direct, abs(d.L - direct) / direct)
    ok = worst_id <= 1e-12 and worst_direct <= 1e-9
    return ok, worst_direct, 1e-9, f"|L - (J + R_o)| = {worst_id:g}"


@_check("mode_selection", "full_reconstruction_exact")
def _full_rec(c: Components):
    worst = 0.0
    frames = rng.normal(rng.stream(0, "verify", "rec"), (20, 2, 32))
    for kind in ("dct2", "dft"):
        herm = kind == "dft"
        m = 17 if herm else 32
        worst = max(worst, reconstruction_curve(frames, "lowpass", [m], kind, hermitian=herm)[0][1])
    return worst < 1e-10, worst, 1e-10, "m = N"


# -- training ------------------------------------------------------------------------------------

@_check("training", "objective_equivalence_full_spectrum")
def _objective(c: Components):
    gen = rng.stream(0, "verify", "objective")
    worst = 0.0
    for kind, herm in (("dct2", False), ("dft", False), ("dft", True)):
        N = 32
        y = rng.normal(gen, (16, N))
        yh = y + 0.3 * rng.normal(gen, (16, N))
        op = tf.TransformOperator(kind, (N,))
        sel = lowpass_selector(N // 2 + 1 if herm else N, (N,), hermitian=herm)
        w = sel.multiplicity(herm) if herm else None
        k = relative_l2_loss(truncate(op.forward(yh), sel), truncate(op.forward(y), sel), w)
        n = relative_l2_loss(yh, y)
        worst = max(worst, abs(k - n) / n)
    return worst <= 1e-10, worst, 1e-10, "k-space vs n-space relative L2 at m = N"


def gradient_check(model, batch, config=None, h: float = 1e-6, rtol: float = 1e-5):
    """Worst entry-wise disagreement between reverse-mode and central differences.

    An entry passes when ``|fd - g| <= rtol * max(|fd|, |g|) + noise`` where
    ``noise = 100 eps (1 + |L|) / h`` is the rounding floor of the central
    difference itself. Returns the largest ``|fd - g| / (rtol * max + noise)``
    (pass iff <= 1) and the number of entries checked.
    """
    config = config or TrainConfig()
    loss, grads = backward(model, batch, config)
    noise = 100 * np.finfo(float).eps * (1 + abs(loss)) / h
    worst, count = 0.0, 0
    for name, p in model.named_parameters():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            for unit in ((1.0, 1j) if np.iscomplexobj(p) else (1.0,)):
                old = flat[i]
                flat[i] = old + h * unit
                lp = backward(model, batch, config)[0]
                flat[i] = old - h * unit
                lm = backward(model, batch, config)[0]
                flat[i] = old
                fd = (lp - lm) / (2 * h)
                an = float((g[i] * np.conj(unit)).real)
                worst = max(worst, abs(fd - an) / (rtol * max(abs(fd), abs(an)) + noise))
                count += 1
    return worst, count


def random_gradient_models(count: int = 20, seed: int = 0):
    """Small models spanning both wirings, both transforms, with and without GeLU."""
    out = []
    gen = rng.stream(seed, "gradient_models")
    combos = list(itertools.product(("t1", "fno"), ("dct2", "dft"), (True, False)))
    for i in range(count):
        wiring, kind, act = combos[i % len(combos)]
        N = int(gen.integers(8, 17))
        herm = kind == "dft"
        sel = lowpass_selector(int(gen.integers(2, 5)), (N,), hermitian=herm)
        lk = "diagonal" if i % 3 else "dense"
        depth = int(gen.integers(1, 4))
        if wiring == "fno" and act:
            depth = max(depth, 2)  # the last FNO-style layer has no activation
        model = build_model(wiring, kind, sel, depth=depth, width=int(gen.integers(2, 4)),
                            layer_kind=lk, bias=bool(i % 2), seed=i)
        for j, layer in enumerate(model.layers):
            gelu = act and wiring == "t1" and (j < model.depth - 1 or model.depth == 1)
            layer.activation = Activation.GELU if gelu else Activation.NONE
        if wiring == "fno":
            model.nspace_activation = Activation.GELU if act else Activation.NONE
        cfg = TrainConfig(rollout_order=("zero", "first", "second")[i % 3], target_steps=1 + i % 2)
        frames = rng.normal(gen, (3, cfg.history_frames + cfg.target_steps, N))
        out.append((model, frames, cfg))
    return out


@_check("training", "gradients_match_finite_differences")
def _gradients(c: Components):
    worst = 0.0
    for model, frames, cfg in random_gradient_models(8):
        worst = max(worst, gradient_check(model, frames, cfg)[0])
    return worst <= 1.0, worst, 1.0, "normalized error (<= 1 passes), 8 models"


@_check("training", "seed_determinism")
def _train_det(c: Components):
    cfg = GeneratorConfig(kind="heat2d", resolution=8, viscosity=0.05, count=20, seed=3)
    ds = generate_dataset(cfg)
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for r in range(2):
            model = build_model("t1", "dft", lowpass_selector(3, (8, 8), True), 2, 2, seed=1)
            train(model, ds.frames, TrainConfig(epochs=2, batch_size=4, learning_rate=1e-2, seed=9))
            path = os.path.join(tmp, f"m{r}.sfdm")
            save_checkpoint(model, path)
            blobs.append(open(path, "rb").read())
    ok = blobs[0] == blobs[1]
    return ok, 0.0 if ok else 1.0, 0.0, "bitwise-identical checkpoints"


@_check("training", "loss_above_truncation_bound")
def _lower_bound(c: Components):
    cfg = GeneratorConfig(kind="burgers1d", resolution=64, viscosity=0.1, count=24, seed=2)
    ds = generate_dataset(cfg)
    sel = lowpass_selector(6, (64,), hermitian=True)
    model = build_model("t1", "dft", sel, 2, 4, seed=0)
    train(model, ds.frames, TrainConfig(epochs=3, batch_size=8, learning_rate=1e-2))
    pred = t1_predict_signal(ds.x, model)
    y = ds.y
    loss = np.mean(np.sum((pred - y) ** 2, axis=1) / np.sum(y ** 2, axis=1))
    bound = reconstruction_curve(ds.frames, "lowpass", [6], "dft", hermitian=True)[0][1]
    return loss >= bound, bound - loss, 0.0, f"N-MSE {loss:.4g} vs truncation bound {bound:.4g}"


# -- data ----------------------------------------------------------------------------------------

@_check("data", "heat_oracle_matches_time_stepping")
def _heat(c: Components):
    cfg = GeneratorConfig(kind="heat2d", resolution=16, viscosity=0.1, count=1, seed=0)
    x0 = sample_initial_condition(cfg, 0).values
    nu, T, steps = 0.1, 1.0, 4000
    X = np.fft.fft2(x0)
    k = np.fft.fftfreq(16, 1 / 16)
    lam = -nu * (k[:, None] ** 2 + k[None, :] ** 2)
    h = T / steps
    for _ in range(steps):
        k1 = lam * X
        k2 = lam * (X + 0.5 * h * k1)
        k3 = lam * (X + 0.5 * h * k2)
        k4 = lam * (X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    err = _rel(heat_solution(x0, nu, T).values, np.fft.ifft2(X).real)
    return err <= 1e-8, err, 1e-8, "nu T = 0.1"


@_check("data", "burgers_energy_dissipation")
def _burgers(c: Components):
    ds = generate_dataset(GeneratorConfig(kind="burgers1d", resolution=64, viscosity=0.05, count=10, seed=4))
    ratio = max(float(np.linalg.norm(f[-1]) / np.linalg.norm(f[0])) for f in ds.frames)
    return ratio <= 1.0, ratio, 1.0, "max ||u(T)|| / ||u(0)||"


@_check("data", "file_roundtrip")
def _file(c: Components):
    ds = generate_dataset(GeneratorConfig(kind="heat2d", resolution=8, count=5, seed=1))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.sfds")
        write_dataset(ds, path)
        back = read_dataset(path)
        model = build_model("fno", "dct2", lowpass_selector(3, (8, 8)), 2, 3, bias=True, seed=2)
        save_checkpoint(model, os.path.join(tmp, "m.sfdm"))
        m2 = load_checkpoint(os.path.join(tmp, "m.sfdm"))
    ok = np.array_equal(back.frames, ds.frames) and all(
        np.array_equal(p, q) for (_, p), (_, q) in zip(model.named_parameters(), m2.named_parameters()))
    return ok, 0.0 if ok else 1.0, 0.0, "dataset and checkpoint bit-exact"


# -- bench (opt-in) --------------------------------------------------------------------------------

def _bench_stability(c: Components):
    from .bench import BenchGrid, run_speedup_grid
    grid = BenchGrid(depths=(2, 6), widths=(16,), resolutions=(32,), repetitions=7)
    a = run_speedup_grid(grid)
    b = run_speedup_grid(grid)
    worst = max(abs(a.speedup(d, 16, 32) / b.speedup(d, 16, 32) - 1) for d in (2, 6))
    return worst <= 0.2, worst, 0.2, "speedup drift between two runs"


def run_verify(select=None, overrides=None, include_bench: bool = False, progress=None) -> list:
    """Run the checks (optionally only names/modules in ``select``)."""
    comps = Components(overrides)
    checks = list(CHECKS)
    if include_bench:
        checks.append(("bench", "speedup_stability", _bench_stability))
    results = []
    for module, name, fn in checks:
        if select and not {name, module, f"{module}.{name}"} & set(select):
            continue
        try:
            passed, value, tol, detail = fn(comps)
        except Exception as exc:  # a crashing check is a failing check
            passed, value, tol, detail = False, math.nan, math.nan, f"{type(exc).__name__}: {exc}"
        res = CheckResult(module, name, bool(passed), float(value), float(tol), detail)
        results.append(res)
        if progress is not None:
            progress(res)
    return results


def report_json(results) -> str:
    body = {
        "passed": all(r.passed for r in results),
        "checks": [asdict(r) for r in results],
    }
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n"
