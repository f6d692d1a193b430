import numpy as np
import pytest

from cmts import numeric as nm
from cmts import predictor as pr
from cmts import scenario_data as sd
from cmts.errors import InputError, ShapeError

SMALL = pr.PredictorConfig(hidden=8, steps=0, seed=1)


@pytest.fixture(scope="module")
def risky():
    return sd.generate_risky_scenarios(2, seed=3)


def _truth(rec, cfg):
    h, f = cfg.history, cfg.future
    return rec.traj_a.waypoints[h:h + f], rec.traj_b.waypoints[h:h + f]


def test_zero_params_predict_zero(safe_small):
    p = pr.init_predictor(SMALL)
    p.set_flat(np.zeros(p.size()))
    hist, _, _ = pr.stack_records(safe_small, SMALL)
    assert not np.any(pr.predict_future(hist[0], p))


def test_predict_shape_and_determinism(safe_small):
    p = pr.init_predictor(SMALL)
    hist, _, _ = pr.stack_records(safe_small, SMALL)
    a, b = pr.predict_future(hist[2], p), pr.predict_future(hist[2], p)
    assert a.shape == (30, 4) and np.array_equal(a, b)
    with pytest.raises(ShapeError):
        pr.predict_future(np.zeros((20, 3)), p)
    with pytest.raises(ShapeError):
        pr.predict_future(np.zeros(20), p)


def test_short_records_rejected(safe_small):
    short = sd.ScenarioRecord("s", sd.Trajectory(safe_small[0].traj_a.waypoints[:40]),
                              sd.Trajectory(safe_small[0].traj_b.waypoints[:40]), safe_small[0].map, "safe")
    with pytest.raises(InputError):
        pr.train_predictor([short], SMALL)
    with pytest.raises(InputError):
        pr.train_predictor([], SMALL)


def test_rollout_mse_gradient_check(safe_small):
    p = pr.init_predictor(SMALL)
    hist, fut, _ = pr.stack_records(safe_small[:3], SMALL)

    def fn(theta):
        p.set_flat(theta)
        p.zero_grad()
        val = pr.loss_and_grad(p, hist, fut)
        return val, p.flat_grad()

    coords = np.random.default_rng(0).choice(p.size(), 150, replace=False)
    assert nm.check_gradients(fn, p.flat(), coords=coords) < 1e-5


def test_training_halves_loss():
    data = sd.generate_safe_corpus(32, seed=8)
    log = []
    pr.train_predictor(data, pr.PredictorConfig(steps=300, seed=0), log=log)
    assert log[-1]["loss"] <= 0.5 * log[0]["loss"]


def test_training_deterministic(tmp_path, safe_small):
    cfg = pr.PredictorConfig(hidden=8, steps=20, seed=4)
    for k in range(2):
        nm.save_checkpoint(tmp_path / f"p{k}", pr.train_predictor(safe_small, cfg), {"predictor": cfg.to_dict()})
    assert (tmp_path / "p0").read_bytes() == (tmp_path / "p1").read_bytes()


def test_oracle_predictor_has_zero_mse(safe_small, risky):
    rep = pr.evaluate_predictor(None, safe_small, risky, SMALL,
                                predict=lambda recs: [_truth(r, SMALL) for r in recs])
    assert rep.summaries["MSE"]["mean"] == 0.0
    assert rep.summaries["MSE"]["n"] == len(safe_small) and rep.summaries["MDV"]["n"] == len(risky)


def test_parallel_lines_predictor_mdv_one(safe_small, risky):
    line = np.stack([np.arange(30.0), np.zeros(30)], axis=1)
    rep = pr.evaluate_predictor(None, safe_small, risky, SMALL,
                                predict=lambda recs: [(line, line + [0, 1]) for _ in recs])
    assert np.all(rep.arrays["MDV"] == 1.0) and np.all(rep.arrays["MDN"] == 1.0)


def test_evaluate_empty_sets(safe_small):
    with pytest.raises(InputError):
        pr.evaluate_predictor(pr.init_predictor(SMALL), safe_small, [], SMALL)


def test_evaluate_pure_and_translation_invariant(safe_small, risky):
    p = pr.init_predictor(SMALL)
    a = pr.evaluate_predictor(p, safe_small, risky, SMALL)
    b = pr.evaluate_predictor(p, safe_small, risky, SMALL)
    assert a.to_json() == b.to_json()
    off = np.array([123.4, -56.7])
    moved = [sd.ScenarioRecord(r.id, r.traj_a.translated(off), r.traj_b.translated(off), r.map, r.label,
                               r.template) for r in risky]
    c = pr.evaluate_predictor(p, safe_small, moved, SMALL)
    assert np.allclose(c.arrays["MDV"], a.arrays["MDV"], atol=1e-9)


def test_config_roundtrip_and_validation():
    cfg = pr.PredictorConfig(hidden=5, steps=7)
    assert pr.PredictorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InputError):
        pr.PredictorConfig(steps=-1)
