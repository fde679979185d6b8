import json

import numpy as np
import pytest

from sfdm import initialization as init
from sfdm import transforms as tf
from sfdm.initialization import KSpaceWeights
from sfdm.verify import (CHECKS, Components, gradient_check, random_gradient_models, report_json, run_verify,
                         topk_exhaustive)


@pytest.fixture(scope="module")
def full_run():
    return run_verify()


def test_full_suite_passes(full_run):
    failed = [(r.module, r.name, r.detail) for r in full_run if not r.passed]
    assert not failed
    assert len(full_run) == len(CHECKS)
    assert {r.module for r in full_run} == {"transforms", "initialization", "layers", "mode_selection",
                                            "training", "data"}


def test_report_is_deterministic_json(full_run):
    body = json.loads(report_json(full_run))
    assert body["passed"] is True
    assert [c["name"] for c in body["checks"]] == [r.name for r in full_run]


def _wrong_vp(N, m, seed):
    # fan-in N/m instead of N/m^2
    v = N / m
    return KSpaceWeights(init.rng.normal(init.rng.stream(seed, "bad"), (m, m), np.sqrt(v)), v)


def test_wrong_vp_variance_is_caught():
    res = run_verify(select=["initialization"], overrides={"vp_dense_dct": _wrong_vp})
    failed = {r.name for r in res if not r.passed}
    assert {"vp_entry_variances", "vp_variance_probe"} <= failed


def test_unnormalized_dft_is_caught():
    res = run_verify(select=["transforms"], overrides={
        "dft_forward": lambda x, axis=-1: np.fft.fft(x, axis=axis),
        "dft_inverse": lambda X, axis=-1: np.fft.ifft(X, axis=axis).real,
    })
    failed = {r.name for r in res if not r.passed}
    assert {"roundtrip_and_parseval_1d", "normalization_convention_probe"} <= failed


def test_wrong_dct_scaling_is_caught():
    res = run_verify(select=["transforms"], overrides={"dct_forward": lambda x, axis=-1: 2 * tf.dct(x, axis=axis)})
    assert any(not r.passed for r in res)


def test_crashing_component_counts_as_failure():
    def boom(x, axis=-1):
        raise RuntimeError("broken")
    res = run_verify(select=["transforms.linearity"], overrides={"dct_forward": boom})
    assert len(res) == 1 and not res[0].passed and "broken" in res[0].detail


def test_unknown_component_rejected():
    with pytest.raises(KeyError):
        Components({"fft": None})


def test_gradient_check_flags_wrong_gradient():
    model, frames, cfg = random_gradient_models(1, seed=3)[0]
    worst, count = gradient_check(model, frames, cfg)
    assert worst <= 1 and count == sum(p.size * (2 if np.iscomplexobj(p) else 1)
                                       for _, p in model.named_parameters())
    import sfdm.verify as v
    real = v.backward

    def skewed(m, b, c=None):
        loss, g = real(m, b, c)
        return loss, {k: 1.01 * x for k, x in g.items()}
    v.backward = skewed
    try:
        assert gradient_check(model, frames, cfg)[0] > 1
    finally:
        v.backward = real


def test_topk_exhaustive_helper():
    assert topk_exhaustive(max_N=8, max_m=3, spectra=20) <= 1e-12
