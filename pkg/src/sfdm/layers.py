"""Reduced-order k-space layers and the two stack wirings.

Array layout used throughout: n-space tensors are ``(batch, channels, *grid)``
and reduced k-space tensors are ``(batch, channels, m)``. Public forward
functions also accept unbatched single-channel signals of shape ``grid``
and single-channel batches ``(batch, *grid)``.

Two wirings share the same layer type:

* ``FNO_STYLE``: lift to ``width`` channels in n-space, then per layer
  ``v <- act(T^-1(S^T f(S T v)) + g * v)``; one forward and one inverse
  transform per layer, GeLU after each inverse transform except the last.
* ``T1``: one forward transform of the input, truncation, lift in k-space,
  then ``f_d o ... o f_1`` entirely on the reduced coefficients with GeLU
  between k-space layers. An n-space prediction costs one extra inverse.

DFT models keep outputs real: selectors hold nonnegative-frequency modes
only and :func:`embed` mirrors each one onto its conjugate partner.
Self-conjugate modes (DC, Nyquist) take the real part of the coefficient.

Gradients use the convention ``dL/dRe(z) + i dL/dIm(z)`` for complex
tensors, so adjoints are plain conjugate transposes.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .transforms import TransformKind, TransformOperator, Spectrum

__all__ = [
    "Wiring",
    "Activation",
    "LayerKind",
    "ModeSelector",
    "KSpaceLayer",
    "SpectralModel",
    "truncate",
    "embed",
    "gelu",
    "fdm_layer_forward",
    "t1_forward",
    "t1_predict_signal",
    "fno_stack_forward",
    "build_model",
    "save_checkpoint",
    "load_checkpoint",
    "CountingTransform",
]


class Wiring(str, enum.Enum):
    T1 = "t1"
    FNO_STYLE = "fno"


class Activation(str, enum.Enum):
    NONE = "none"
    GELU = "gelu"


class LayerKind(str, enum.Enum):
    DENSE = "dense"  # m x m mode mixing, shared across channels
    DIAGONAL = "diagonal"  # per-mode channel mixing (c_out x c_in per mode)


def _parse(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).lower())
    except ValueError:
        raise ValueError(f"unknown {enum_cls.__name__} {value!r}; expected one of "
                         f"{[e.value for e in enum_cls]}") from None


# -- mode selection ----------------------------------------------------------------

@dataclass(frozen=True)
class ModeSelector:
    """Ordered set of retained k-space indices (``S_m``).

    ``indices`` holds ints for 1D spectra and ``(row, col)`` pairs for 2D.
    """

    indices: tuple
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        if len(shape) not in (1, 2) or any(s < 1 for s in shape):
            raise ValueError(f"selector shape must be 1 or 2 positive extents, got {self.shape!r}")
        if len(shape) == 1:
            idx = tuple(int(np.asarray(i).reshape(-1)[0]) if np.ndim(i) else int(i) for i in self.indices)
            coords = (np.asarray(idx, dtype=np.int64),)
        else:
            idx = tuple((int(i), int(j)) for i, j in self.indices)
            arr = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
            coords = (arr[:, 0], arr[:, 1])
        if len(idx) == 0:
            raise ValueError("selector must retain at least one mode")
        for c, n in zip(coords, shape):
            if np.any(c < 0) or np.any(c >= n):
                raise ValueError(f"selector index out of range for spectrum extent {shape}")
        flat = np.ravel_multi_index(coords, shape)
        if len(np.unique(flat)) != len(flat):
            raise ValueError("selector indices must be distinct")
        mirror = np.ravel_multi_index(tuple((-c) % n for c, n in zip(coords, shape)), shape)
        flat.setflags(write=False)
        mirror.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_mirror", mirror)

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def size(self) -> int:
        """Full spectrum extent N (product of the grid extents)."""
        return int(np.prod(self.shape))

    @property
    def flat(self) -> np.ndarray:
        return self._flat

    @property
    def mirror(self) -> np.ndarray:
        """Flat index of each retained mode's conjugate partner under the DFT."""
        return self._mirror

    @property
    def self_conjugate(self) -> np.ndarray:
        return self._mirror == self._flat

    def multiplicity(self, hermitian: bool) -> np.ndarray:
        """How many full-spectrum coefficients each retained mode stands for."""
        if not hermitian:
            return np.ones(self.m)
        return np.where(self.self_conjugate, 1.0, 2.0)

    def check_hermitian(self) -> None:
        """Reject selectors that contain a mode together with its conjugate partner."""
        chosen = set(self._flat.tolist())
        for f, mir in zip(self._flat, self._mirror):
            if f != mir and int(mir) in chosen:
                raise ValueError(f"selector holds both mode {np.unravel_index(f, self.shape)} and "
                                 f"its conjugate partner; DFT models need one half-plane")

    def matrix(self) -> np.ndarray:
        """Dense m x N selection matrix (oracle use)."""
        S = np.zeros((self.m, self.size))
        S[np.arange(self.m), self._flat] = 1.0
        return S

    def wavenumbers(self) -> np.ndarray:
        """Signed integer DFT wavenumbers of the retained modes, shape (m, ndim)."""
        coords = np.unravel_index(self._flat, self.shape)
        out = [np.where(c <= n // 2, c, c - n) for c, n in zip(coords, self.shape)]
        return np.stack(out, axis=-1)


def _coeffs(X):
    return X.coefficients if isinstance(X, Spectrum) else np.asarray(X)


def truncate(X, s: ModeSelector) -> np.ndarray:
    """Gather the retained coefficients: ``(..., *shape) -> (..., m)`` in selector order."""
    X = _coeffs(X)
    nd = len(s.shape)
    if X.shape[X.ndim - nd:] != s.shape:
        raise ValueError(f"spectrum extent {X.shape[X.ndim - nd:]} does not match selector extent {s.shape}")
    return X.reshape(X.shape[:X.ndim - nd] + (s.size,))[..., s.flat]


def embed(z, s: ModeSelector, hermitian: bool = False) -> np.ndarray:
    """Scatter ``(..., m)`` reduced coefficients into a zero spectrum ``(..., *shape)``.

    With ``hermitian=True`` each mode is mirrored onto its conjugate partner,
    so the inverse DFT of the result is real.
    """
    z = np.asarray(z)
    if z.shape[-1] != s.m:
        raise ValueError(f"reduced coefficients have length {z.shape[-1]}, selector retains {s.m}")
    lead = z.shape[:-1]
    if hermitian:
        out = np.zeros(lead + (s.size,), dtype=np.complex128)
        sc = s.self_conjugate
        out[..., s.flat[~sc]] = z[..., ~sc]
        out[..., s.mirror[~sc]] = np.conj(z[..., ~sc])
        out[..., s.flat[sc]] = z[..., sc].real
    else:
        out = np.zeros(lead + (s.size,), dtype=z.dtype if np.iscomplexobj(z) else np.float64)
        out[..., s.flat] = z
    return out.reshape(lead + s.shape)


def _truncate_adjoint(g: np.ndarray, s: ModeSelector) -> np.ndarray:
    return embed(g, s, hermitian=False)


def _embed_adjoint(g: np.ndarray, s: ModeSelector, hermitian: bool) -> np.ndarray:
    gf = g.reshape(g.shape[:g.ndim - len(s.shape)] + (s.size,))
    out = gf[..., s.flat].copy()
    if hermitian:
        sc = s.self_conjugate
        out[..., sc] = out[..., sc].real
        out[..., ~sc] += np.conj(gf[..., s.mirror[~sc]])
    return out


# -- activations -------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu_real(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_real_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf) GeLU; complex inputs are activated part-wise."""
    if np.iscomplexobj(x):
        return _gelu_real(x.real) + 1j * _gelu_real(x.imag)
    return _gelu_real(x)


def _gelu_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        return g.real * _gelu_real_grad(x.real) + 1j * (g.imag * _gelu_real_grad(x.imag))
    return g * _gelu_real_grad(x)


def _activate(act: Activation, x):
    return gelu(x) if act is Activation.GELU else x


def _activate_backward(act: Activation, x, g):
    return _gelu_backward(x, g) if act is Activation.GELU else g


def _channel_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_{batch, grid} a[:, i] * b[:, j]`` for ``(B, C, *grid)`` real arrays."""
    a2 = np.moveaxis(a, 1, 0).reshape(a.shape[1], -1)
    b2 = np.moveaxis(b, 1, 0).reshape(b.shape[1], -1)
    return a2 @ b2.T


def _like(grad: np.ndarray, param: np.ndarray) -> np.ndarray:
    return grad if np.iscomplexobj(param) else np.ascontiguousarray(grad.real)


# -- layers ------------------------------------------------------------------------

@dataclass
class KSpaceLayer:
    """One learned k-space map ``Z -> act(A Z + b)``.

    ``weight`` is ``(m, m)`` for DENSE layers and ``(m, c_out, c_in)`` for
    DIAGONAL layers. ``bias`` is ``(c_out, m)``. ``residual`` is the per-channel
    n-space scaling ``g`` used by FNO-style stacks only.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    activation: Activation = Activation.NONE
    residual: Optional[np.ndarray] = None

    def __post_init__(self):
        self.activation = _parse(Activation, self.activation)
        w = np.asarray(self.weight)
        if w.ndim == 1:  # plain diagonal A
            w = w[:, None, None]
        if w.ndim not in (2, 3):
            raise ValueError(f"layer weight must be (m, m) or (m, c_out, c_in), got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("layer weight contains non-finite entries")
        self.weight = w

    @property
    def kind(self) -> LayerKind:
        return LayerKind.DENSE if self.weight.ndim == 2 else LayerKind.DIAGONAL

    @property
    def m(self) -> int:
        return self.weight.shape[0]

    def channels(self, c_in: int) -> int:
        return c_in if self.kind is LayerKind.DENSE else self.weight.shape[1]

    def check(self, m: int, c_in: int) -> None:
        if self.m != m or (self.kind is LayerKind.DENSE and self.weight.shape[1] != m):
            raise ValueError(f"layer weight extent {self.weight.shape} inconsistent with selector m={m}")
        if self.kind is LayerKind.DIAGONAL and self.weight.shape[2] != c_in:
            raise ValueError(f"layer expects {self.weight.shape[2]} input channels, got {c_in}")
        c_out = self.channels(c_in)
        if self.bias is not None and self.bias.shape != (c_out, m):
            raise ValueError(f"bias shape {self.bias.shape} != {(c_out, m)}")

    def linear(self, Z: np.ndarray) -> np.ndarray:
        """``A Z + b`` on ``(B, c_in, m)`` reduced coefficients."""
        if self.kind is LayerKind.DENSE:
            out = Z @ self.weight.T
        else:
            out = np.matmul(self.weight, Z.transpose(2, 1, 0)).transpose(2, 1, 0)
        if self.bias is not None:
            out = out + self.bias
        return out

    def linear_backward(self, Z: np.ndarray, g: np.ndarray):
        """Return (grad weight, grad bias or None, grad input) for :meth:`linear`."""
        if self.kind is LayerKind.DENSE:
            m = self.m
            gw = g.reshape(-1, m).T @ np.conj(Z.reshape(-1, m))
            gz = g @ np.conj(self.weight)
        else:
            gt = g.transpose(2, 1, 0)  # (m, c_out, B)
            zt = Z.transpose(2, 1, 0)  # (m, c_in, B)
            gw = np.matmul(gt, np.conj(zt).transpose(0, 2, 1))
            gz = np.matmul(np.conj(self.weight).transpose(0, 2, 1), gt).transpose(2, 1, 0)
        gb = None if self.bias is None else _like(g.sum(axis=0), self.bias)
        return _like(gw, self.weight), gb, gz


class CountingTransform:
    """Wraps a transform and counts forward/inverse executions (one per call)."""

    def __init__(self, inner: TransformOperator):
        self.inner = inner
        self.forward_count = 0
        self.inverse_count = 0

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def forward(self, x):
        self.forward_count += 1
        return self.inner.forward(x)

    def inverse(self, X):
        self.inverse_count += 1
        return self.inner.inverse(X)


@dataclass
class SpectralModel:
    """A stack of k-space layers in FNO-style or T1 wiring."""

    wiring: Wiring
    kind: TransformKind
    selector: ModeSelector
    layers: list
    lift: Optional[np.ndarray] = None  # (width, c_in), real
    proj: Optional[np.ndarray] = None  # (c_out, width), real
    nspace_activation: Activation = Activation.GELU
    transform: object = field(default=None, repr=False)

    def __post_init__(self):
        self.wiring = _parse(Wiring, self.wiring)
        self.kind = TransformKind.parse(self.kind)
        self.nspace_activation = _parse(Activation, self.nspace_activation)
        if len(self.layers) < 1:
            raise ValueError("a spectral model needs depth >= 1")
        if self.transform is None:
            self.transform = TransformOperator(self.kind, self.selector.shape)
        if self.hermitian:
            self.selector.check_hermitian()
        c = self.in_channels
        if self.lift is not None:
            c = self.lift.shape[0]
        for i, layer in enumerate(self.layers):
            layer.check(self.selector.m, c)
            c = layer.channels(c)
            if self.wiring is Wiring.T1 and layer.residual is not None:
                raise ValueError("T1 wiring has no n-space residual paths")
            if layer.residual is not None and layer.residual.shape != (c,):
                raise ValueError(f"layer {i} residual shape {layer.residual.shape} != {(c,)}")
        if self.proj is not None and self.proj.shape[1] != c:
            raise ValueError(f"projection expects {self.proj.shape[1]} channels, stack produces {c}")

    @property
    def grid(self) -> tuple:
        return self.selector.shape

    @property
    def hermitian(self) -> bool:
        return self.kind is TransformKind.DFT

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_channels(self) -> int:
        if self.lift is not None:
            return self.lift.shape[1]
        first = self.layers[0]
        return first.weight.shape[2] if first.kind is LayerKind.DIAGONAL else 1

    @property
    def width(self) -> int:
        return self.lift.shape[0] if self.lift is not None else self.in_channels

    @property
    def out_channels(self) -> int:
        if self.proj is not None:
            return self.proj.shape[0]
        c = self.width
        for layer in self.layers:
            c = layer.channels(c)
        return c

    def named_parameters(self) -> list:
        params = []
        if self.lift is not None:
            params.append(("lift", self.lift))
        for i, layer in enumerate(self.layers):
            params.append((f"layers.{i}.weight", layer.weight))
            if layer.bias is not None:
                params.append((f"layers.{i}.bias", layer.bias))
            if layer.residual is not None:
                params.append((f"layers.{i}.residual", layer.residual))
        if self.proj is not None:
            params.append(("proj", self.proj))
        return params

    def parameter_count(self) -> int:
        return int(sum(p.size * (2 if np.iscomplexobj(p) else 1) for _, p in self.named_parameters()))

    def copy(self) -> "SpectralModel":
        layers = [dataclasses.replace(
            l, weight=l.weight.copy(),
            bias=None if l.bias is None else l.bias.copy(),
            residual=None if l.residual is None else l.residual.copy()) for l in self.layers]
        return dataclasses.replace(
            self, layers=layers,
            lift=None if self.lift is None else self.lift.copy(),
            proj=None if self.proj is None else self.proj.copy(),
            transform=TransformOperator(self.kind, self.selector.shape))

    # -- raw batched passes, with tapes for reverse mode ---------------------------------

    def kspace_forward(self, Z: np.ndarray):
        """T1 map on reduced inputs ``(B, c_in, m)``; returns (output, tape)."""
        tape = {"in": Z}
        if self.lift is not None:
            Z = np.einsum("ci,bik->bck", self.lift, Z)
        pre = []
        for layer in self.layers:
            pre.append((Z, layer.linear(Z)))
            Z = _activate(layer.activation, pre[-1][1])
        tape["pre"] = pre
        tape["last"] = Z
        if self.proj is not None:
            Z = np.einsum("oc,bck->bok", self.proj, Z)
        return Z, tape

    def kspace_backward(self, tape, g: np.ndarray):
        """Reverse pass of :meth:`kspace_forward`; returns (grads, grad wrt input)."""
        grads = {}
        if self.proj is not None:
            grads["proj"] = np.einsum("bok,bck->oc", g, np.conj(tape["last"])).real
            g = np.einsum("oc,bok->bck", self.proj, g)
        for i in reversed(range(self.depth)):
            layer = self.layers[i]
            z_in, lin = tape["pre"][i]
            g = _activate_backward(layer.activation, lin, g)
            gw, gb, g = layer.linear_backward(z_in, g)
            grads[f"layers.{i}.weight"] = gw
            if gb is not None:
                grads[f"layers.{i}.bias"] = gb
        if self.lift is not None:
            grads["lift"] = np.einsum("bck,bik->ci", g, np.conj(tape["in"])).real
            g = np.einsum("ci,bck->bik", self.lift, g)
        return grads, g

    def nspace_forward(self, x: np.ndarray):
        """FNO-style stack on ``(B, c_in, *grid)`` real signals; returns (output, tape)."""
        if self.wiring is not Wiring.FNO_STYLE:
            raise ValueError(f"nspace_forward requires FNO_STYLE wiring, model is {self.wiring.value}")
        sel, T = self.selector, self.transform
        nd = len(sel.shape)
        tape = {"in": x, "steps": []}
        v = x
        if self.lift is not None:
            v = np.einsum("ci,bi...->bc...", self.lift, v)
        for i, layer in enumerate(self.layers):
            Z = truncate(T.forward(v), sel)
            lin = layer.linear(Z)
            Zh = _activate(layer.activation, lin)
            vh = T.inverse(embed(Zh, sel, hermitian=self.hermitian))
            if self.hermitian:
                vh = vh.real
            u = vh
            if layer.residual is not None:
                u = u + layer.residual.reshape((1, -1) + (1,) * nd) * v
            last = i == self.depth - 1
            act = Activation.NONE if last else self.nspace_activation
            tape["steps"].append((v, Z, lin, u, act))
            v = _activate(act, u)
        tape["last"] = v
        if self.proj is not None:
            v = np.einsum("oc,bc...->bo...", self.proj, v)
        return v, tape

    def nspace_backward(self, tape, g: np.ndarray):
        sel, T = self.selector, self.transform
        nd = len(sel.shape)
        grads = {}
        if self.proj is not None:
            grads["proj"] = _channel_outer(g, tape["last"])
            g = np.einsum("oc,bo...->bc...", self.proj, g)
        for i in reversed(range(self.depth)):
            layer = self.layers[i]
            v, Z, lin, u, act = tape["steps"][i]
            g = _activate_backward(act, u, g)
            g_v = 0.0
            if layer.residual is not None:
                axes = (0,) + tuple(range(2, 2 + nd))
                grads[f"layers.{i}.residual"] = (g * v).sum(axis=axes)
                g_v = layer.residual.reshape((1, -1) + (1,) * nd) * g
            gZh = _embed_adjoint(T.forward(g), sel, self.hermitian)
            gZh = _activate_backward(layer.activation, lin, gZh)
            gw, gb, gZ = layer.linear_backward(Z, gZh)
            grads[f"layers.{i}.weight"] = gw
            if gb is not None:
                grads[f"layers.{i}.bias"] = gb
            gx = T.inverse(_truncate_adjoint(gZ, sel))
            g = gx.real + g_v
        if self.lift is not None:
            grads["lift"] = _channel_outer(g, tape["in"])
            g = np.einsum("ci,bc...->bi...", self.lift, g)
        return grads, g

    def to_kspace(self, x: np.ndarray) -> np.ndarray:
        """``S_m T(x)`` for ``(B, C, *grid)`` signals."""
        return truncate(self.transform.forward(x), self.selector)

    def from_kspace(self, Z: np.ndarray) -> np.ndarray:
        """``T^-1(S_m^T Z)`` back to real n-space signals."""
        out = self.transform.inverse(embed(Z, self.selector, hermitian=self.hermitian))
        return out.real if np.iscomplexobj(out) else out

    def predict_signal(self, x: np.ndarray) -> np.ndarray:
        """n-space prediction for either wiring (shape conventions as the input)."""
        if self.wiring is Wiring.T1:
            return t1_predict_signal(x, self)
        return fno_stack_forward(x, self)


# -- shape handling ---------------------------------------------------------------

def _to_batch(x, grid: tuple, channels: int):
    x = np.asarray(x)
    extra = x.ndim - len(grid)
    if extra < 0 or x.shape[extra:] != tuple(grid):
        raise ValueError(f"signal extent {x.shape} does not end with model grid {grid}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    if extra == 0:
        if channels != 1:
            raise ValueError(f"model expects {channels} input channels; pass (batch, channels, *grid)")
        return x[None, None], "single"
    if extra == 1:
        if channels != 1:
            raise ValueError(f"model expects {channels} input channels; pass (batch, channels, *grid)")
        return x[:, None], "batch"
    if extra == 2:
        if x.shape[1] != channels:
            raise ValueError(f"got {x.shape[1]} input channels, model expects {channels}")
        return x, "full"
    raise ValueError(f"too many leading axes in input of shape {x.shape}")


def _from_batch(y: np.ndarray, mode: str) -> np.ndarray:
    if mode == "full" or y.shape[1] != 1:
        return y if mode != "single" else y[0]
    return y[0, 0] if mode == "single" else y[:, 0]


# -- public forward passes ----------------------------------------------------------

def fdm_layer_forward(x, layer: KSpaceLayer, selector: ModeSelector, transform: TransformOperator,
                      g=None, hermitian: Optional[bool] = None) -> np.ndarray:
    """Single FDM layer ``T^-1(S^T act(A S T x + b)) + g(x)``.

    ``g`` is None, a scalar, or a per-channel vector of pointwise scalings.
    ``hermitian`` defaults to True for the DFT; with False the output of a
    DFT layer is complex in general.
    """
    if hermitian is None:
        hermitian = transform.kind is TransformKind.DFT
    if tuple(transform.resolution) != selector.shape:
        raise ValueError(f"transform resolution {transform.resolution} != selector extent {selector.shape}")
    c_in = layer.weight.shape[2] if layer.kind is LayerKind.DIAGONAL else None
    xb, mode = _to_batch(x, selector.shape, c_in or (np.asarray(x).shape[1]
                                                      if np.ndim(x) == len(selector.shape) + 2 else 1))
    layer.check(selector.m, xb.shape[1])
    Z = truncate(transform.forward(xb), selector)
    Zh = _activate(layer.activation, layer.linear(Z))
    out = transform.inverse(embed(Zh, selector, hermitian=hermitian))
    if hermitian:
        out = out.real
    if g is not None:
        gv = np.asarray(g, dtype=float)
        if gv.ndim == 1:
            gv = gv.reshape((1, -1) + (1,) * len(selector.shape))
        out = out + gv * xb
    return _from_batch(out, mode)


def _require(model: SpectralModel, wiring: Wiring) -> None:
    if model.wiring is not wiring:
        raise ValueError(f"operation requires {wiring.value} wiring, model is {model.wiring.value}")


def t1_forward(x, model: SpectralModel) -> np.ndarray:
    """Reduced k-space prediction ``gamma(S_m T(x))``; exactly one forward transform."""
    _require(model, Wiring.T1)
    xb, mode = _to_batch(x, model.grid, model.in_channels)
    out, _ = model.kspace_forward(model.to_kspace(xb))
    return _from_batch(out, mode)


def t1_predict_signal(x, model: SpectralModel) -> np.ndarray:
    """n-space prediction ``T^-1(S_m^T gamma(S_m T(x)))``; one forward, one inverse transform."""
    _require(model, Wiring.T1)
    xb, mode = _to_batch(x, model.grid, model.in_channels)
    out, _ = model.kspace_forward(model.to_kspace(xb))
    return _from_batch(model.from_kspace(out), mode)


def fno_stack_forward(x, model: SpectralModel) -> np.ndarray:
    """Depth-d FNO-style stack; one forward and one inverse transform per layer."""
    _require(model, Wiring.FNO_STYLE)
    xb, mode = _to_batch(x, model.grid, model.in_channels)
    out, _ = model.nspace_forward(xb)
    return _from_batch(out, mode)


# -- construction -------------------------------------------------------------------

def build_model(wiring, kind, selector: ModeSelector, depth: int, width: int = 1,
                in_channels: int = 1, out_channels: int = 1, layer_kind=LayerKind.DIAGONAL,
                bias: bool = False, init: str = "vp", seed: int = 0,
                residual: bool = True) -> SpectralModel:
    """Construct and initialize a model.

    ``init`` is ``"vp"`` or ``"xavier"`` and applies to the first layer of a
    T1 stack (later layers use Kaiming) and to every layer of an FNO stack.
    Lift/projection maps exist whenever ``width`` differs from the in/out
    channel counts or ``width > 1``.
    """
    from .initialization import init_model

    wiring = _parse(Wiring, wiring)
    kind = TransformKind.parse(kind)
    layer_kind = _parse(LayerKind, layer_kind)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if layer_kind is LayerKind.DENSE and (in_channels != 1 or out_channels != 1) and width == 1:
        raise ValueError("dense layers need width > 1 lift/projection for multi-channel data")
    has_maps = width > 1 or in_channels != 1 or out_channels != 1
    m = selector.m
    c = width if has_maps else in_channels
    layers = []
    for i in range(depth):
        if layer_kind is LayerKind.DENSE:
            w = np.zeros((m, m))
        else:
            w = np.zeros((m, c, c))
        if kind is TransformKind.DFT:
            w = w.astype(np.complex128)
        b = np.zeros((c, m), dtype=w.dtype) if bias else None
        last = i == depth - 1
        if wiring is Wiring.T1:
            act, res = (Activation.NONE if last else Activation.GELU), None
        else:
            act, res = Activation.NONE, (np.ones(c) if residual else None)
        layers.append(KSpaceLayer(weight=w, bias=b, activation=act, residual=res))
    lift = np.zeros((width, in_channels)) if has_maps else None
    proj = np.zeros((out_channels, width)) if has_maps else None
    model = SpectralModel(wiring=wiring, kind=kind, selector=selector, layers=layers,
                          lift=lift, proj=proj)
    init_model(model, init, seed)
    return model


# -- checkpoint format ---------------------------------------------------------------
#
# Little-endian throughout:
#   b"SFDM" | u32 version | u32 wiring (0 T1, 1 FNO) | u32 transform (0 DCT2, 1 DFT)
#   u32 ndim | u32 N[ndim] | u32 m | u32 depth | u32 width | u32 in_channels
#   u32 out_channels | u32 layer kind (0 dense, 1 diagonal)
#   u32 flags (bit0 bias, bit1 residual, bit2 lift/proj) | u32 n-space activation
#   u32 k-space activation per layer (0 none, 1 gelu)
#   u64 flat selector index[m]
#   f64 lift, proj (if flag bit2), then per layer: weight, bias, residual
#   (complex arrays as interleaved re, im pairs, C order)

_MAGIC = b"SFDM"
_VERSION = 1
_WIRING_TAGS = {Wiring.T1: 0, Wiring.FNO_STYLE: 1}
_KIND_TAGS = {TransformKind.DCT2: 0, TransformKind.DFT: 1}
_ACT_TAGS = {Activation.NONE: 0, Activation.GELU: 1}
_LAYER_TAGS = {LayerKind.DENSE: 0, LayerKind.DIAGONAL: 1}


def _inverse(d: dict) -> dict:
    return {v: k for k, v in d.items()}


def save_checkpoint(model: SpectralModel, path) -> None:
    layers = model.layers
    flags = (int(layers[0].bias is not None)
             | int(layers[0].residual is not None) << 1
             | int(model.lift is not None) << 2)
    head = [_MAGIC, struct.pack("<I", _VERSION),
            struct.pack("<II", _WIRING_TAGS[model.wiring], _KIND_TAGS[model.kind]),
            struct.pack("<I", len(model.grid)), struct.pack(f"<{len(model.grid)}I", *model.grid),
            struct.pack("<IIIIII", model.selector.m, model.depth, model.width,
                        model.in_channels, model.out_channels, _LAYER_TAGS[layers[0].kind]),
            struct.pack("<II", flags, _ACT_TAGS[model.nspace_activation]),
            struct.pack(f"<{model.depth}I", *[_ACT_TAGS[l.activation] for l in layers]),
            np.asarray(model.selector.flat, dtype="<u8").tobytes()]
    body = []
    if model.lift is not None:
        body += [model.lift, model.proj]
    for l in layers:
        body.append(l.weight)
        if l.bias is not None:
            body.append(l.bias)
        if l.residual is not None:
            body.append(l.residual)
    for arr in body:
        a = np.ascontiguousarray(arr)
        if np.iscomplexobj(a):
            a = a.view(np.float64)
        head.append(a.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(head))


def load_checkpoint(path) -> SpectralModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an SFDM checkpoint")
    off = 4

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, data, off)
        off += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    wiring_tag, kind_tag = take("<II")
    (ndim,) = take("<I")
    grid = take(f"<{ndim}I")
    m, depth, width, c_in, c_out, layer_tag = take("<IIIIII")
    flags, nact = take("<II")
    acts = take(f"<{depth}I")
    flat = np.frombuffer(data, dtype="<u8", count=m, offset=off).astype(np.int64)
    off += 8 * m
    wiring = _inverse(_WIRING_TAGS)[wiring_tag]
    kind = _inverse(_KIND_TAGS)[kind_tag]
    layer_kind = _inverse(_LAYER_TAGS)[layer_tag]
    coords = np.unravel_index(flat, grid)
    indices = list(zip(*[c.tolist() for c in coords])) if ndim == 2 else coords[0].tolist()
    selector = ModeSelector(tuple(indices), tuple(grid))
    complex_ = kind is TransformKind.DFT

    def read(shape, cplx):
        nonlocal off
        n = int(np.prod(shape)) * (2 if cplx else 1)
        a = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        if cplx:
            a = a.view(np.complex128)
        return a.reshape(shape).copy()

    lift = proj = None
    c = c_in
    if flags & 4:
        lift = read((width, c_in), False)
        proj = read((c_out, width), False)
        c = width
    layers = []
    for i in range(depth):
        wshape = (m, m) if layer_kind is LayerKind.DENSE else (m, c, c)
        w = read(wshape, complex_)
        b = read((c, m), complex_) if flags & 1 else None
        r = read((c,), False) if flags & 2 else None
        layers.append(KSpaceLayer(weight=w, bias=b, activation=_inverse(_ACT_TAGS)[acts[i]], residual=r))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return SpectralModel(wiring=wiring, kind=kind, selector=selector, layers=layers, lift=lift, proj=proj,
                         nspace_activation=_inverse(_ACT_TAGS)[nact])
