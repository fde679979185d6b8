"""Variance-preserving (vp) weight initialization and the Xavier baseline.

A truncating layer ``x -> T^-1(S^T A S T x)`` with orthonormal ``T`` keeps
``m`` of the ``N`` coefficients, so with Xavier-scaled ``A`` the total output
variance shrinks roughly by ``m / N``. vp sampling compensates:

    dense DCT-II         A_ij ~ N(0, N / m^2)
    dense DFT            Re A_ij, Im A_ij ~ N(0, N / (2 m^2))
    diagonal             A_ii ~ N(0, N / m)       (complex: N / (2m) per part)

Diagonal layers mix channels per mode, so their variance is further
divided by the input channel count.
For DFT models that store half of a conjugate-symmetric spectrum, ``m`` in
the denominator that counts output coefficients becomes the effective mode
count ``sum(multiplicity)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import rng
from .layers import LayerKind, ModeSelector, SpectralModel, Wiring, embed, gelu, truncate
from .transforms import TransformKind, TransformOperator

__all__ = [
    "InitFamily",
    "InitScheme",
    "KSpaceWeights",
    "sample_vp_dense_dct",
    "sample_vp_dense_dft",
    "sample_vp_diagonal",
    "sample_xavier",
    "vp_variance",
    "variance_probe",
    "ProbeReport",
    "init_model",
]


class InitFamily(str, enum.Enum):
    VP_DENSE = "vp_dense"
    VP_DIAGONAL = "vp_diagonal"
    XAVIER = "xavier"


def _check_modes(N: int, m: int) -> None:
    if int(m) < 1:
        raise ValueError(f"retained mode count must be >= 1, got m={m}")
    if int(m) > int(N):
        raise ValueError(f"cannot retain m={m} modes of an N={N} spectrum")


@dataclass(frozen=True)
class KSpaceWeights:
    """Sampled k-space weights: a dense ``(m, m)`` matrix or a length-``m`` diagonal."""

    values: np.ndarray
    variance: float  # prescribed total entry variance (Re + Im for complex)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2 and v.shape[0] != v.shape[1]:
            raise ValueError(f"dense k-space weights must be square, got {v.shape}")
        if v.ndim not in (1, 2):
            raise ValueError(f"k-space weights must be (m, m) or (m,), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("k-space weights contain non-finite entries")
        if not self.variance > 0:
            raise ValueError("prescribed sampling variance must be positive")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.values.ndim == 1

    def matrix(self) -> np.ndarray:
        return np.diag(self.values) if self.is_diagonal else self.values


def sample_vp_dense_dct(N: int, m: int, seed: int) -> KSpaceWeights:
    _check_modes(N, m)
    var = N / m**2
    return KSpaceWeights(rng.normal(rng.stream(seed, "vp_dense_dct"), (m, m), np.sqrt(var)), var)


def sample_vp_dense_dft(N: int, m: int, seed: int) -> KSpaceWeights:
    _check_modes(N, m)
    part = N / (2 * m**2)
    A = rng.complex_normal(rng.stream(seed, "vp_dense_dft"), (m, m), np.sqrt(part))
    return KSpaceWeights(A, 2 * part)


def sample_vp_diagonal(N: int, m: int, seed: int) -> KSpaceWeights:
    _check_modes(N, m)
    var = N / m
    return KSpaceWeights(rng.normal(rng.stream(seed, "vp_diagonal"), m, np.sqrt(var)), var)


def sample_xavier(N: int, m: int, c_in: int, seed: int) -> KSpaceWeights:
    _check_modes(N, m)
    if int(c_in) < 1:
        raise ValueError(f"fan-in must be >= 1, got c_in={c_in}")
    var = 1.0 / c_in
    return KSpaceWeights(rng.normal(rng.stream(seed, "xavier"), (m, m), np.sqrt(var)), var)


def vp_variance(layer_kind, N: int, m: int, m_eff: float | None = None, c_in: int = 1) -> float:
    """Total entry variance that preserves output variance for a truncating layer.

    ``m`` is the number of stored inputs summed per output coefficient and
    ``m_eff`` the number of full-spectrum coefficients the outputs occupy
    (equal to ``m`` unless modes are mirrored).
    """
    _check_modes(N, m)
    m_eff = float(m if m_eff is None else m_eff)
    if LayerKind(layer_kind) is LayerKind.DENSE:
        return N / (m * m_eff * c_in)
    return N / (m_eff * c_in)


@dataclass(frozen=True)
class InitScheme:
    family: InitFamily
    transform_kind: TransformKind
    N: int
    m: int
    seed: int = 0
    c_in: int | None = None  # Xavier fan-in; defaults to m (fan-in of the dense mode map)

    def __post_init__(self):
        object.__setattr__(self, "family", InitFamily(self.family))
        object.__setattr__(self, "transform_kind", TransformKind.parse(self.transform_kind))
        _check_modes(self.N, self.m)
        if self.c_in is not None and self.c_in < 1:
            raise ValueError("c_in must be >= 1")

    @property
    def variance(self) -> float:
        """Prescribed total entry variance."""
        if self.family is InitFamily.XAVIER:
            return 1.0 / (self.c_in or self.m)
        kind = LayerKind.DENSE if self.family is InitFamily.VP_DENSE else LayerKind.DIAGONAL
        return vp_variance(kind, self.N, self.m)

    def sample(self, draw: int = 0) -> KSpaceWeights:
        """Weights for draw number ``draw`` (independent substream per draw)."""
        seed = [self.seed, draw]
        seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
        if self.family is InitFamily.XAVIER:
            return sample_xavier(self.N, self.m, self.c_in or self.m, seed)
        if self.family is InitFamily.VP_DIAGONAL:
            if self.transform_kind is TransformKind.DFT:
                vals = rng.complex_normal(rng.stream(seed, "vp_diagonal_dft"), self.m, np.sqrt(self.variance / 2))
                return KSpaceWeights(vals, self.variance)
            return sample_vp_diagonal(self.N, self.m, seed)
        if self.transform_kind is TransformKind.DFT:
            return sample_vp_dense_dft(self.N, self.m, seed)
        return sample_vp_dense_dct(self.N, self.m, seed)


@dataclass(frozen=True)
class ProbeReport:
    ratios: np.ndarray  # total output / input variance, one per weight draw
    post_gelu_ratios: np.ndarray  # same after a GeLU on the real part (NaN unless requested)

    @property
    def mean_ratio(self) -> float:
        return float(self.ratios.mean())

    @property
    def std_ratio(self) -> float:
        return float(self.ratios.std())


def _total_variance(x: np.ndarray) -> float:
    # sum over coordinates of the per-coordinate sample variance
    if np.iscomplexobj(x):
        return float(x.real.var(axis=0).sum() + x.imag.var(axis=0).sum())
    return float(x.var(axis=0).sum())


def variance_probe(scheme: InitScheme, batch: int, weight_samples: int, post_activation: bool = False,
                   chunk: int = 2048, sampler=None, transform=None) -> ProbeReport:
    """Push standard-normal signals through ``T^-1(S^T A S T x)`` for sampled ``A``.

    Retains the lowest ``m`` coefficients; DFT outputs are kept complex
    (no conjugate mirroring) so the layer is exactly the linear map analyzed.
    With ``post_activation`` the report also holds the variance ratio after
    a GeLU on the real part of the output (measured, not corrected for).
    ``sampler(draw) -> KSpaceWeights`` and ``transform`` (an operator with
    ``forward``/``inverse``) replace the scheme's sampler and the orthonormal
    transform, e.g. to check that a wrong variance is detected.
    """
    if batch < 2 or weight_samples < 1:
        raise ValueError("variance_probe needs batch >= 2 and weight_samples >= 1")
    N, m = scheme.N, scheme.m
    op = transform or TransformOperator(scheme.transform_kind, (N,))
    sampler = sampler or scheme.sample
    sel = ModeSelector(tuple(range(m)), (N,))
    x = rng.normal(rng.stream(scheme.seed, "probe_input"), (batch, N))
    Z = truncate(op.forward(x), sel)
    var_in = _total_variance(x)
    ratios = np.empty(weight_samples)
    post = np.full(weight_samples, np.nan)
    for w in range(weight_samples):
        A = sampler(w).matrix()
        out = _Moments()
        act = _Moments()
        for lo in range(0, batch, chunk):
            xh = op.inverse(embed(Z[lo:lo + chunk] @ A.T, sel))
            out.add(xh)
            if post_activation:
                act.add(gelu(xh.real))
        ratios[w] = out.total_variance() / var_in
        if post_activation:
            post[w] = act.total_variance() / var_in
    return ProbeReport(ratios, post)


class _Moments:
    """Running per-coordinate first and second moments over batch chunks."""

    def __init__(self):
        self.n = 0
        self.s1 = 0.0
        self.s2 = 0.0

    def add(self, x: np.ndarray) -> None:
        self.n += x.shape[0]
        self.s1 = self.s1 + x.sum(axis=0)
        if np.iscomplexobj(x):
            self.s2 = self.s2 + np.einsum("ij,ij->j", x.real, x.real) + np.einsum("ij,ij->j", x.imag, x.imag)
        else:
            self.s2 = self.s2 + np.einsum("ij,ij->j", x, x)

    def total_variance(self) -> float:
        mean = self.s1 / self.n
        return float(np.sum(self.s2 / self.n - np.abs(mean) ** 2))


# -- model initialization --------------------------------------------------------------

def _draw(gen, shape, var: float, complex_: bool) -> np.ndarray:
    if complex_:
        return rng.complex_normal(gen, shape, np.sqrt(var / 2))
    return rng.normal(gen, shape, np.sqrt(var))


def _layer_variance(scheme: str, layer_kind: LayerKind, sel: ModeSelector, c_in: int, hermitian: bool) -> float:
    m = sel.m
    if scheme == "vp":
        m_eff = float(sel.multiplicity(hermitian).sum())
        return vp_variance(layer_kind, sel.size, m, m_eff, c_in)
    fan_in = m if layer_kind is LayerKind.DENSE else c_in
    if scheme == "xavier":
        return 1.0 / fan_in
    if scheme == "kaiming":
        return 2.0 / fan_in
    raise ValueError(f"unknown init scheme {scheme!r}; expected 'vp' or 'xavier'")


def init_model(model: SpectralModel, scheme: str, seed: int) -> SpectralModel:
    """Fill a model's parameters in place.

    ``scheme`` ("vp" or "xavier") initializes the first layer of a T1 stack
    and every layer of an FNO stack; remaining T1 layers use Kaiming scaling
    because they follow a GeLU. Lift and projection maps are Xavier-scaled,
    residual scalings start at one and biases at zero.
    """
    scheme = str(scheme).lower()
    if scheme not in ("vp", "xavier"):
        raise ValueError(f"unknown init scheme {scheme!r}; expected 'vp' or 'xavier'")
    sel = model.selector
    complex_ = model.kind is TransformKind.DFT
    if model.lift is not None:
        model.lift[...] = rng.normal(rng.stream(seed, "lift"), model.lift.shape, np.sqrt(1.0 / model.lift.shape[1]))
        model.proj[...] = rng.normal(rng.stream(seed, "proj"), model.proj.shape, np.sqrt(1.0 / model.proj.shape[1]))
    for i, layer in enumerate(model.layers):
        use = scheme if (model.wiring is Wiring.FNO_STYLE or i == 0) else "kaiming"
        # dense maps are shared across channels and never sum over them
        c_in = 1 if layer.kind is LayerKind.DENSE else layer.weight.shape[2]
        var = _layer_variance(use, layer.kind, sel, c_in, model.hermitian)
        layer.weight[...] = _draw(rng.stream(seed, "layer", i, "weight"), layer.weight.shape, var, complex_)
        if layer.bias is not None:
            layer.bias[...] = 0
        if layer.residual is not None:
            layer.residual[...] = 1.0
    return model
