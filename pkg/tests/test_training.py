import numpy as np
import pytest

from oracles import central_difference, dct_matrix
from sfdm.data import GeneratorConfig, generate_dataset
from sfdm.layers import KSpaceLayer, SpectralModel, build_model
from sfdm.mode_selection import lowpass_selector
from sfdm.training import (AdamW, DivergenceError, TrainConfig, backward, dataset_loss, evaluate_nspace,
                           relative_l2_loss, rollout, squared_error_loss, train)


def fd_gradients(model, batch, config, h=1e-6):
    """Central differences of the loss over every real degree of freedom."""
    out = {}
    for name, p in model.named_parameters():
        if np.iscomplexobj(p):
            re = p.view(np.float64)

            def f(_):
                return backward(model, batch, config)[0]
            g = central_difference(f, re, h)  # perturbs p through its real view
            out[name] = g[..., 0::2] + 1j * g[..., 1::2] if g.ndim else g
            out[name] = out[name].reshape(p.shape)
        else:
            out[name] = central_difference(lambda _: backward(model, batch, config)[0], p, h)
    return out


def assert_grads_match(model, batch, config, h=1e-6):
    loss, grads = backward(model, batch, config)
    fd = fd_gradients(model, batch, config, h)
    noise = 100 * np.finfo(float).eps * (1 + abs(loss)) / h
    for name, g in grads.items():
        for an, num in ((g.real, fd[name].real), (g.imag, fd[name].imag)):
            tol = 1e-5 * np.maximum(np.abs(an), np.abs(num)) + noise
            assert np.all(np.abs(an - num) <= tol), name


def identity_t1(N, kind="dct2"):
    herm = kind == "dft"
    s = lowpass_selector(N // 2 + 1 if herm else N, N, hermitian=herm)
    w = np.ones((s.m, 1, 1), dtype=complex if herm else float)
    return SpectralModel("t1", kind, s, [KSpaceLayer(w)])


# -- losses ----------------------------------------------------------------------------

def test_relative_l2_values():
    assert relative_l2_loss([3.0, 4.0], [0.0, 5.0]) == pytest.approx(np.sqrt(10) / 5)
    assert relative_l2_loss(np.ones((2, 3)), np.ones((2, 3))) == 0.0
    pred = np.array([[1.0, 0.0], [0.0, 0.0]])
    targ = np.array([[2.0, 0.0], [0.0, 4.0]])
    assert relative_l2_loss(pred, targ) == pytest.approx((0.5 + 1.0) / 2)
    with pytest.raises(ValueError, match="zero norm"):
        relative_l2_loss(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError, match="extent"):
        relative_l2_loss(np.ones(3), np.ones(4))


def test_squared_error_values():
    assert squared_error_loss([1.0, 2.0], [0.0, 0.0]) == 5.0
    assert squared_error_loss(np.ones((4, 2)), np.zeros((4, 2))) == 2.0


@pytest.mark.parametrize("fn", [relative_l2_loss, squared_error_loss])
def test_loss_gradients_fd(fn, gen):
    p, t = gen.standard_normal((3, 7)), gen.standard_normal((3, 7))
    w = gen.uniform(0.5, 2, 7)
    for weights in (None, w):
        _, g = fn(p, t, weights, return_grad=True)
        fd = central_difference(lambda x: fn(x, t, weights), p.copy(), 1e-6)
        np.testing.assert_allclose(g, fd, atol=1e-8)


def test_weighted_loss_equals_mirrored_expansion(gen):
    # weight 2 on a coefficient equals counting it twice
    p, t = gen.standard_normal((4, 3)), gen.standard_normal((4, 3))
    w = np.array([1.0, 2.0, 1.0])
    expand = lambda a: np.concatenate([a, a[:, 1:2]], axis=1)  # noqa: E731
    assert relative_l2_loss(p, t, w) == pytest.approx(relative_l2_loss(expand(p), expand(t)), rel=1e-14)
    assert squared_error_loss(p, t, w) == pytest.approx(squared_error_loss(expand(p), expand(t)), rel=1e-14)


# -- optimizer ----------------------------------------------------------------------------

def test_adamw_matches_reference_formulas(gen):
    p = gen.standard_normal(5)
    q = gen.standard_normal(3) + 1j * gen.standard_normal(3)
    ref_p, ref_q = p.copy(), q.view(np.float64).copy()
    opt = AdamW([p, q], lr=0.01, weight_decay=0.1)
    b1, b2, eps, lr, wd = 0.9, 0.999, 1e-8, 0.01, 0.1
    state = [[np.zeros(5), np.zeros(5)], [np.zeros(6), np.zeros(6)]]
    for t in range(1, 8):
        gp = gen.standard_normal(5)
        gq = gen.standard_normal(3) + 1j * gen.standard_normal(3)
        opt.step([gp, gq])
        for ref, g, (m, v) in ((ref_p, gp, state[0]), (ref_q, gq.view(np.float64), state[1])):
            for i in range(ref.size):
                ref[i] *= 1 - lr * wd
                m[i] = b1 * m[i] + (1 - b1) * g[i]
                v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
                mh = m[i] / (1 - b1 ** t)
                vh = v[i] / (1 - b2 ** t)
                ref[i] -= lr * mh / (np.sqrt(vh) + eps)
    np.testing.assert_allclose(p, ref_p, rtol=1e-13)
    np.testing.assert_allclose(q.view(np.float64), ref_q, rtol=1e-13)


def test_adamw_rejects_non_contiguous():
    with pytest.raises(ValueError):
        AdamW([np.zeros((4, 4))[:, ::2]])


# -- configuration ----------------------------------------------------------------------------

def test_step_schedule():
    c = TrainConfig(learning_rate=1e-2, step_size=10, gamma=0.5)
    assert [c.learning_rate_at(e) for e in (0, 9, 10, 25)] == [1e-2, 1e-2, 5e-3, 2.5e-3]
    assert TrainConfig().learning_rate_at(1000) == 1e-3


def test_config_validation():
    for bad in (dict(learning_rate=0), dict(batch_size=0), dict(weight_decay=-1), dict(epochs=-1),
                dict(step_size=0, gamma=0.5), dict(step_size=5, gamma=1.5), dict(target_steps=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig(rollout_order="second").history_frames == 2
    assert TrainConfig(history_size=3).history_frames == 4


# -- gradients ------------------------------------------------------------------------------

MODEL_CASES = [
    ("t1", "dct2", "diagonal", False, 1, "zero", 0, 1),
    ("t1", "dct2", "dense", True, 1, "first", 0, 2),
    ("t1", "dft", "diagonal", True, 3, "second", 1, 2),
    ("t1", "dft", "dense", False, 2, "zero", 0, 1),
    ("fno", "dct2", "diagonal", True, 3, "zero", 1, 1),
    ("fno", "dct2", "dense", False, 2, "first", 0, 2),
    ("fno", "dft", "diagonal", False, 2, "second", 0, 1),
    ("fno", "dft", "dense", True, 2, "zero", 0, 2),
]


@pytest.mark.parametrize("wiring,kind,lk,bias,width,order,hist,steps", MODEL_CASES)
@pytest.mark.parametrize("loss", ["rel_l2", "mse"])
def test_gradients_match_central_differences(wiring, kind, lk, bias, width, order, hist, steps, loss):
    N = 12
    sel = lowpass_selector(3, N, hermitian=kind == "dft")
    model = build_model(wiring, kind, sel, 2, width, in_channels=hist + 1, layer_kind=lk, bias=bias,
                        seed=N + width)
    cfg = TrainConfig(rollout_order=order, history_size=hist, target_steps=steps, loss=loss)
    window = np.random.default_rng(7).standard_normal((3, cfg.history_frames + steps, N))
    assert_grads_match(model, window, cfg)


def test_gradients_2d_grid():
    sel = lowpass_selector(2, (6, 6), hermitian=True)
    model = build_model("fno", "dft", sel, 2, 2, seed=1)
    batch = tuple(np.random.default_rng(3).standard_normal((2, 2, 6, 6)))
    assert_grads_match(model, batch, TrainConfig())


def test_linear_least_squares_gradient(gen):
    # one dense layer, squared error on reduced coefficients: grad = 2/B (A Z - Y) Z^T
    N, m, B = 16, 5, 7
    A = gen.standard_normal((m, m))
    model = SpectralModel("t1", "dct2", lowpass_selector(m, N), [KSpaceLayer(A.copy())])
    x, y = gen.standard_normal((B, N)), gen.standard_normal((B, N))
    C = dct_matrix(N)[:m]
    Z, Y = x @ C.T, y @ C.T
    loss, grads = backward(model, (x, y), TrainConfig(loss="mse"))
    R = Z @ A.T - Y
    assert loss == pytest.approx(np.mean(np.sum(R ** 2, axis=1)), rel=1e-12)
    np.testing.assert_allclose(grads["layers.0.weight"], 2 / B * R.T @ Z, rtol=1e-10, atol=1e-12)


# -- training loop ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def burgers():
    cfg = GeneratorConfig(kind="burgers1d", resolution=32, count=40, frames=3, viscosity=0.05, horizon=0.5, seed=3)
    return generate_dataset(cfg)


def _model(seed=0, kind="dct2"):
    return build_model("t1", kind, lowpass_selector(8, 32, hermitian=kind == "dft"), 1, seed=seed)


def test_training_reduces_loss(burgers):
    model = _model()
    rep = train(model, burgers.subset("train"), TrainConfig(epochs=30, learning_rate=0.05, batch_size=8),
                val=burgers.subset("val"))
    assert rep.final_loss < 0.5 * rep.initial_loss
    assert rep.epochs_run == 30 and len(rep.val_nmse) == 30
    assert rep.val_nmse[-1] < rep.val_nmse[0]


def test_tiny_learning_rate_leaves_parameters_unchanged(burgers):
    model = _model(1)
    before = [p.copy() for _, p in model.named_parameters()]
    train(model, burgers.subset("train"), TrainConfig(epochs=2, learning_rate=1e-300))
    for b, (_, p) in zip(before, model.named_parameters()):
        np.testing.assert_array_equal(b, p)


def test_training_is_deterministic(burgers):
    cfg = TrainConfig(epochs=3, learning_rate=0.01, batch_size=4, seed=5)
    a, b, c = _model(2, "dft"), _model(2, "dft"), _model(2, "dft")
    ra = train(a, burgers.subset("train"), cfg)
    rb = train(b, burgers.subset("train"), cfg)
    train(c, burgers.subset("train"), TrainConfig(epochs=3, learning_rate=0.01, batch_size=4, seed=6))
    assert ra.train_loss == rb.train_loss
    for (_, p), (_, q), (_, r) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(p, q)
    assert not np.array_equal(a.layers[0].weight, c.layers[0].weight)


def test_divergence_raises(burgers):
    model = build_model("fno", "dct2", lowpass_selector(8, 32), 3, 8, seed=0)
    with pytest.raises(DivergenceError, match="learning rate"):
        train(model, burgers.subset("train"), TrainConfig(epochs=50, learning_rate=1e4, loss="mse"))


def test_early_stop_and_epochs_to(burgers):
    model = _model(3)
    cfg = TrainConfig(epochs=200, learning_rate=0.05, batch_size=8, stop_at_val_nmse=0.05)
    rep = train(model, burgers.subset("train"), cfg, val=burgers.subset("val"))
    assert rep.epochs_run < 200 and rep.val_nmse[-1] < 0.05
    assert rep.epochs_to(0.05) == rep.epochs_run


def test_log_callback_and_channel_check(burgers):
    seen = []
    train(_model(), burgers.subset("train"), TrainConfig(epochs=2), log=lambda e, r: seen.append((e, r.epochs_run)))
    assert seen == [(1, 1), (2, 2)]
    with pytest.raises(ValueError, match="input channels"):
        train(_model(), burgers.subset("train"), TrainConfig(epochs=1, history_size=1))
    with pytest.raises(ValueError, match="frames"):
        train(_model(), burgers.subset("train"), TrainConfig(epochs=1, target_steps=5))


def test_dataset_loss_averages_windows(gen):
    frames = gen.standard_normal((3, 4, 16))
    model = build_model("fno", "dct2", lowpass_selector(4, 16), 1, seed=0)
    cfg = TrainConfig()
    windows = [frames[s, t:t + 2] for s in range(3) for t in range(3)]
    direct = np.mean([backward(model, w[None], cfg)[0] for w in windows])
    assert dataset_loss(model, frames, cfg) == pytest.approx(direct, rel=1e-12)


# -- rollouts and evaluation -----------------------------------------------------------------

@pytest.mark.parametrize("kind", ["dct2", "dft"])
def test_rollout_orders_with_identity_map(kind, gen):
    model = identity_t1(16, kind)
    x0, x1 = gen.standard_normal(16), gen.standard_normal(16)
    np.testing.assert_allclose(rollout(model, x1[None], 3, "zero"), np.stack([x1] * 3), atol=1e-12)
    np.testing.assert_allclose(rollout(model, x1[None], 3, "first"), np.stack([2 * x1, 4 * x1, 8 * x1]), atol=1e-11)
    seq = [x0, x1]
    for _ in range(3):
        seq.append(3 * seq[-1] - seq[-2])
    np.testing.assert_allclose(rollout(model, np.stack([x0, x1]), 3, "second"), np.stack(seq[2:]), atol=1e-10)
    with pytest.raises(ValueError, match="history frames"):
        rollout(model, x1[None], 1, "second")


def test_rollout_with_history_channels(gen):
    sel = lowpass_selector(16, 16)
    w = np.zeros((16, 1, 2))
    w[:, 0, 1] = 1.0  # output the older frame
    model = SpectralModel("t1", "dct2", sel, [KSpaceLayer(w)])
    a, b = gen.standard_normal(16), gen.standard_normal(16)
    out = rollout(model, np.stack([a, b]), 3, "zero", history_size=1)
    np.testing.assert_allclose(out, np.stack([a, b, a]), atol=1e-12)
    with pytest.raises(ValueError, match="history_size"):
        rollout(model, np.stack([a, b]), 1, history_size=0)


def test_evaluate_nspace(gen):
    x = gen.standard_normal((5, 16))
    frames = np.stack([x, x, x], axis=1)
    assert evaluate_nspace(identity_t1(16), frames) < 1e-24
    zero = SpectralModel("t1", "dct2", lowpass_selector(4, 16), [KSpaceLayer(np.zeros((4, 1, 1)))])
    assert evaluate_nspace(zero, frames) == pytest.approx(1.0)
    two = evaluate_nspace(identity_t1(16), frames, TrainConfig(rollout_order="first", target_steps=2))
    assert two == pytest.approx((1 + 9) / 2)
    with pytest.raises(ValueError, match="all-zero"):
        evaluate_nspace(identity_t1(16), np.zeros((1, 2, 16)))
