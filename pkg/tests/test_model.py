import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmts import model as cm
from cmts import numeric as nm
from cmts import scenario_data as sd
from cmts.errors import ShapeError, ValidationError


def _jitter(store, seed, scale=1e-2):
    # move biases off exact zero so ReLU kinks do not sit at the check point
    rng = np.random.default_rng(seed)
    store.set_flat(store.flat() + scale * rng.standard_normal(store.size()))
    return store


def test_config_invariants():
    with pytest.raises(ValidationError):
        cm.ModelConfig(D=30, C=8)
    with pytest.raises(ValidationError):
        cm.ModelConfig(T=1)


# -- encoders ------------------------------------------------------------------

def test_zero_params_encoder_is_prior(tiny_config, tiny_pairs):
    zp = cm.zero_params(tiny_config)
    g = cm.encode_trajectory(tiny_pairs[0][0], zp, tiny_config)
    assert np.array_equal(g.mu, np.zeros(8)) and np.array_equal(g.sigma, np.ones(8))
    s = cm.encode_map_condition(tiny_pairs[0][0].map, zp, tiny_config)
    assert np.array_equal(s.mu, np.zeros(4)) and np.array_equal(s.sigma, np.ones(4))


def test_encoder_deterministic_and_shape_checked(tiny_config, tiny_pairs, safe_small):
    p = cm.init_params(tiny_config, 1)
    a = cm.encode_trajectory(tiny_pairs[0][1], p, tiny_config)
    b = cm.encode_trajectory(tiny_pairs[0][1], p, tiny_config)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)
    with pytest.raises(ShapeError):
        cm.encode_trajectory(safe_small[0], p, tiny_config)


def test_encoder_gradient_check(tiny_config, tiny_pairs):
    store = _jitter(cm.init_params(tiny_config, 2), 3)
    X, _ = cm.prepare_inputs(tiny_pairs[0], tiny_config, with_maps=False)
    enc = [n for n in store.names() if n.startswith("enc.")]
    sl = store.slices()
    coords = np.concatenate([np.arange(sl[n].start, sl[n].stop) for n in enc])

    def fn(theta):
        store.set_flat(theta)
        store.zero_grad()
        mu, _, cache = cm.encode_forward(store, X)
        cm.encode_backward(store, cache, 2 * mu, None, store.grads)
        return float((mu ** 2).sum()), store.flat_grad()

    assert nm.check_gradients(fn, store.flat(), coords=coords) < 1e-5


def test_map_styles_distinct_and_positive(tiny_config):
    p = _jitter(cm.init_params(tiny_config, 4), 5, scale=0.1)
    rng = np.random.default_rng(0)
    seen = []
    for i in range(100):
        cells = (rng.random((32, 32)) < 0.5).astype(np.uint8)
        gm = sd.GridMap(32, 32, 1.0, (0.0, 0.0), cells)
        s = cm.encode_map_condition(gm, p, tiny_config)
        assert np.all(s.sigma > 0)
        seen.append(np.concatenate([s.mu, s.sigma]))
    seen = np.array(seen)
    d = np.linalg.norm(seen[:, None] - seen[None], axis=2)
    assert np.all(d[np.triu_indices(100, 1)] > 0)


def test_map_shape_error(tiny_config):
    p = cm.init_params(tiny_config, 0)
    with pytest.raises(ShapeError):
        cm.encode_map_condition(sd.GridMap(16, 16, 1.0, (0, 0), np.ones(256, dtype=np.uint8)), p, tiny_config)


# -- AdaIN ---------------------------------------------------------------------

def test_adain_worked_example():
    out = cm.adain_merge(np.array([1.0, 3.0]), cm.StyleStats([0.0], [2.0]))
    assert np.allclose(out, [-2 / (1 + 1e-5), 2 / (1 + 1e-5)], atol=1e-15)


def test_adain_identity_style(rng):
    z = rng.normal(size=16) * 3
    g = z.reshape(4, 4)
    out = cm.adain_merge(z, cm.StyleStats(g.mean(1), g.std(1)))
    assert np.allclose(out, z, atol=1e-4)


def test_adain_degenerate_style(rng):
    out = cm.adain_merge(rng.normal(size=8), cm.StyleStats([1.5, -2.0], [0.0, 0.0]))
    assert np.array_equal(out, [1.5] * 4 + [-2.0] * 4)


def test_adain_group_stats(rng):
    for _ in range(1000):
        z = rng.normal(size=32) * rng.uniform(0.1, 10)
        mu, sig = rng.normal(size=8) * 5, rng.uniform(0.01, 5, 8)
        out = cm.adain_merge(z, cm.StyleStats(mu, sig)).reshape(8, 4)
        assert np.max(np.abs(out.mean(1) - mu)) < 1e-9
        s = z.reshape(8, 4).std(1)
        assert np.allclose(out.std(1), sig * s / (s + 1e-5), rtol=1e-9)


def test_adain_shape_error():
    with pytest.raises(ShapeError):
        cm.adain_merge(np.zeros(10), cm.StyleStats(np.zeros(3), np.ones(3)))


def test_adain_gradient_check(rng):
    z0, m0, s0 = rng.normal(size=(3, 8)), rng.normal(size=(3, 4)), rng.uniform(0.5, 2, (3, 4))
    w = rng.normal(size=(3, 8))

    def fn(theta):
        z, m, s = theta[:24].reshape(3, 8), theta[24:36].reshape(3, 4), theta[36:].reshape(3, 4)
        out, cache = cm.adain_forward(z, m, s)
        dz, dm, ds = cm.adain_backward(cache, w)
        return float((w * out).sum()), np.concatenate([dz.ravel(), dm.ravel(), ds.ravel()])

    assert nm.check_gradients(fn, np.concatenate([z0.ravel(), m0.ravel(), s0.ravel()])) < 1e-6


# -- decoder -------------------------------------------------------------------

def test_zero_params_decoder_is_zero(tiny_config):
    zp = cm.zero_params(tiny_config)
    Y = cm.decode_trajectory(np.ones(8), cm.StyleStats(np.zeros(4), np.ones(4)), zp, tiny_config)
    assert Y.shape == (12, 4) and not np.any(Y)


def test_decoder_deterministic(tiny_config, rng):
    p = cm.init_params(tiny_config, 6)
    z, st_ = rng.normal(size=8), cm.StyleStats(rng.normal(size=4), np.ones(4))
    assert np.array_equal(cm.decode_trajectory(z, st_, p, tiny_config), cm.decode_trajectory(z, st_, p, tiny_config))
    with pytest.raises(ShapeError):
        cm.decode_trajectory(np.zeros(7), st_, p, tiny_config)


def test_decoder_gradient_wrt_latent(tiny_config, rng):
    p = cm.init_params(tiny_config, 7)
    smu, ssig = rng.normal(size=(1, 4)), rng.uniform(0.5, 2, (1, 4))

    def fn(z):
        Y, cache = cm.decode_forward(p, tiny_config, z[None], smu, ssig)
        dz, _, _ = cm.decode_backward(p, tiny_config, cache, np.ones_like(Y), p.grads)
        p.zero_grad()
        return float(Y.sum()), dz[0]

    assert nm.check_gradients(fn, rng.normal(size=8)) < 1e-5


def test_mtg_ablation_ignores_map(tiny_config, tiny_pairs):
    mc = cm.ModelConfig(**{**tiny_config.to_dict(), "use_adain": False, "use_fusion_loss": False})
    p = cm.init_params(mc, 8)
    assert not any(n.startswith("map") for n in p.names())
    rec = tiny_pairs[0][0]
    other = sd.ScenarioRecord(rec.id, rec.traj_a, rec.traj_b, sd.GridMap.all_drivable(), rec.label)
    za = cm.encode_trajectory(rec, p, mc).mu
    zb = cm.encode_trajectory(other, p, mc).mu
    assert np.array_equal(cm.decode_trajectory(za, None, p, mc), cm.decode_trajectory(zb, None, p, mc))


# -- normalization -------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.integers(0, 5))
def test_normalization_roundtrip(dx, dy, k):
    rec = sd.generate_safe_corpus(6, seed=3)[k]
    wa, wb = rec.traj_a.waypoints + [dx, dy], rec.traj_b.waypoints + [dx, dy]
    r2 = sd.ScenarioRecord("x", sd.Trajectory(wa), sd.Trajectory(wb), rec.map, "safe")
    X, c = cm.normalize_record(r2, 0.05)
    a, b = cm.denormalize(X, c, 0.05)
    assert np.max(np.abs(a - wa)) < 1e-9 and np.max(np.abs(b - wb)) < 1e-9
    assert np.allclose(np.concatenate([X[:, :2], X[:, 2:]]).mean(0), 0, atol=1e-12)
