"""Single-transform spectral operator models on reduced k-space coefficients."""

from .transforms import (
    Signal,
    Spectrum,
    TransformKind,
    TransformOperator,
    dct2_forward,
    dct2_inverse,
    dft_forward,
    dft_inverse,
    inverse_2d,
    transform,
    transform_2d,
)
from .layers import (
    Activation,
    KSpaceLayer,
    LayerKind,
    ModeSelector,
    SpectralModel,
    Wiring,
    build_model,
    embed,
    fdm_layer_forward,
    fno_stack_forward,
    load_checkpoint,
    save_checkpoint,
    t1_forward,
    t1_predict_signal,
    truncate,
)

__version__ = "0.1.0"
