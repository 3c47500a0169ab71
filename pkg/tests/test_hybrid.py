import numpy as np
import pytest

from shippcc import plant
from shippcc.datagen import Scenario, build_dataset, split_and_normalize
from shippcc.hybrid import (
    HybridModel, Z_LOWER, Z_UPPER, blackbox_rollout, clip_state, hybrid_rollout, hybrid_step,
    imperfect_rollout, infer_algebraic, rollout_mse, state_mse,
)
from shippcc.integrator import step_batch
from shippcc.neural import (
    COMPENSATION_SIZES, INFERENCE_SIZES, Mlp, TrainConfig, features, train_compensation_net, train_inference_net,
)
from shippcc.params import load_params

TRUTH = load_params()
IMPERFECT = load_params(param_set="imperfect")


@pytest.fixture(scope="module")
def data():
    sc = Scenario(load_hold=100, input_hold=25, seed=5)
    return split_and_normalize(build_dataset(sc, 600, TRUTH, IMPERFECT))


@pytest.fixture(scope="module")
def trained(data):
    cfg = TrainConfig(batch_size=20, epochs=100, lr=1e-3, patience=1000, seed=0)
    inf = train_inference_net(data, cfg).model
    comp = train_compensation_net(data, cfg).model
    return HybridModel(IMPERFECT, inf, comp, data.stats)


@pytest.fixture(scope="module")
def zeroed(data):
    return HybridModel(IMPERFECT, Mlp.init(INFERENCE_SIZES, seed=0), Mlp.zeros(COMPENSATION_SIZES), data.stats)


def test_model_validation(data):
    with pytest.raises(ValueError):
        HybridModel(TRUTH, Mlp.zeros(INFERENCE_SIZES), Mlp.zeros(COMPENSATION_SIZES), data.stats)
    with pytest.raises(ValueError):
        HybridModel(IMPERFECT, Mlp.zeros((107, 5, 6)), Mlp.zeros(COMPENSATION_SIZES), data.stats)


def test_inference_deterministic_and_in_range(data):
    # a random net drives some outputs outside their physical range
    rng = np.random.default_rng(0)
    net = Mlp.init(INFERENCE_SIZES, rng)
    for W in net.W:
        W *= 20
    m = HybridModel(IMPERFECT, net, Mlp.zeros(COMPENSATION_SIZES), data.stats)
    x, u, p = data.x[:50], data.u[:50], data.p[:50]
    a = infer_algebraic(m, x, u, p)
    np.testing.assert_array_equal(a, infer_algebraic(m, x, u, p))
    assert a.shape == (50, plant.NZ)
    assert np.all(a >= Z_LOWER) and np.all(a <= Z_UPPER)
    assert np.all((a[:, 4] >= 0) & (a[:, 4] <= 1))


def test_inference_error_at_training_scale(data, trained):
    tr = data.part("train")
    te = data.part("test")
    err_tr = state_mse(data.stats, "z", infer_algebraic(trained, data.x[tr], data.u[tr], data.p[tr]), data.z[tr])
    err_te = state_mse(data.stats, "z", infer_algebraic(trained, data.x[te], data.u[te], data.p[te]), data.z[te])
    assert err_tr < 0.1
    assert np.isfinite(err_te)


def test_zero_compensation_reduces_to_imperfect_step(data, zeroed):
    x, u, p = data.x[:3], data.u[:3], data.p[:3]
    z_hat = infer_algebraic(zeroed, x, u, p)
    x_fp, _, ok = step_batch(IMPERFECT, x, z_hat, u, p)
    assert np.all(ok)
    out = hybrid_step(zeroed, x, u, p)
    assert out.shape == (3, plant.NX)
    expected = x_fp + data.stats.denormalize_active("x_e", np.zeros((3, plant.NX)))
    np.testing.assert_array_equal(out, expected)


def test_zero_net_and_zero_stats_mean_gives_first_principles(data):
    stats = data.stats
    saved = stats.mean["x_e"].copy()
    stats.mean["x_e"][:] = 0.0
    try:
        m = HybridModel(IMPERFECT, Mlp.init(INFERENCE_SIZES, seed=1), Mlp.zeros(COMPENSATION_SIZES), stats)
        x, u, p = data.x[5], data.u[5], data.p[5]
        z_hat = infer_algebraic(m, x[None], u, p)
        x_fp, _, _ = step_batch(IMPERFECT, x[None], z_hat, u[None], np.array([p]))
        np.testing.assert_array_equal(hybrid_step(m, x, u, p), x_fp[0])
    finally:
        stats.mean["x_e"][:] = saved


def test_hybrid_improves_median_training_record(data, trained):
    tr = data.part("train")
    x_hat = hybrid_step(trained, data.x[tr], data.u[tr], data.p[tr])
    e_h = np.linalg.norm(data.stats.normalize("x", x_hat) - data.stats.normalize("x", data.x_next[tr]), axis=1)
    e_fp = np.linalg.norm(data.stats.normalize("x", data.x_fp[tr]) - data.stats.normalize("x", data.x_next[tr]), axis=1)
    assert np.median(e_h) < np.median(e_fp)


def test_single_step_rollout_matches_step(data, trained):
    x0, u, p = data.x[10], data.u[10:11], data.p[10:11]
    r = hybrid_rollout(trained, x0, u, p)
    assert r.x.shape == (2, plant.NX) and r.z.shape == (2, plant.NZ) and r.y.shape == (2, plant.NY)
    np.testing.assert_array_equal(r.x[0], x0)
    np.testing.assert_allclose(r.x[1], clip_state(hybrid_step(trained, x0, u[0], p[0])), rtol=1e-12, atol=1e-12)


def test_rollout_deterministic(data, trained):
    u, p = data.u[:5], data.p[:5]
    a = hybrid_rollout(trained, data.x[0], u, p)
    b = hybrid_rollout(trained, data.x[0], u, p)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.z, b.z)


def test_rollout_length_checked(data, trained):
    with pytest.raises(ValueError):
        hybrid_rollout(trained, data.x[0], data.u[:2], data.p[:2], N=3)


def test_imperfect_rollout_matches_dataset_first_principles(data):
    r = imperfect_rollout(IMPERFECT, data.x[0], data.u[:1], data.p[:1], z0=data.z[0])
    np.testing.assert_allclose(r.x[1], data.x_fp[0], rtol=1e-9, atol=1e-9)


def test_blackbox_single_step_is_one_forward_pass(data):
    net = Mlp.init((114, 20, 110), seed=2)
    x0, z0, u, p = data.x[3], data.z[3], data.u[3:4], data.p[3:4]
    r = blackbox_rollout(net, data.stats, x0, z0, u, p)
    out = net(features(data.stats, x0, z0, u[0], p[0]))
    np.testing.assert_array_equal(r.x[1], clip_state(data.stats.denormalize_active("x", out[:plant.NX])))
    again = blackbox_rollout(net, data.stats, x0, z0, u, p)
    np.testing.assert_array_equal(r.x, again.x)
    np.testing.assert_array_equal(r.z, again.z)


def test_rollout_mse_zero_on_truth(data):
    r = imperfect_rollout(TRUTH, data.x[0], data.u[:4], data.p[:4], z0=data.z[0])
    err = rollout_mse(data.stats, r, r.x, r.z)
    assert err == {"x": 0.0, "z": 0.0}


def test_clip_state_bounds():
    x = np.full(plant.NX, -5.0)
    c = clip_state(x)
    assert np.all(c[plant.concentration_indices()] == 0)
    assert np.all(c[plant.temperature_indices()] == plant.T_MIN + 1.0)
