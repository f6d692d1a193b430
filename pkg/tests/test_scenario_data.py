import json
import math

import numpy as np
import pytest
from scipy import stats

from cmts import scenario_data as sd
from cmts.errors import InputError, ParseError, ShapeError, ValidationError, VersionError


def _mdv_scan(a, b):
    # independent min-over-timesteps scan
    best = math.inf
    for p, q in zip(a, b):
        best = min(best, math.hypot(p[0] - q[0], p[1] - q[1]))
    return best


def _dump(records):
    return [sd.dumps_record(r) for r in records]


# -- safe corpus ---------------------------------------------------------------

def test_safe_corpus_deterministic():
    a = sd.generate_safe_corpus(1, {"straight": 1.0}, seed=7)
    b = sd.generate_safe_corpus(1, {"straight": 1.0}, seed=7)
    assert _dump(a) == _dump(b)


@pytest.fixture(scope="module")
def safe100():
    return sd.generate_safe_corpus(100, seed=1)


def test_safe_speeds_in_band(safe100):
    for r in safe100:
        for traj in (r.traj_a, r.traj_b):
            w = traj.waypoints
            for t in range(len(w) - 1):
                v = math.hypot(*(w[t + 1] - w[t])) / traj.dt
                assert 2.0 - 1e-9 <= v <= 15.0 + 1e-9


def test_safe_records_keep_distance_and_road(safe100):
    for r in safe100:
        assert r.label == "safe" and r.T == 50
        assert _mdv_scan(r.traj_a.waypoints, r.traj_b.waypoints) >= 2.0
        assert r.map.drivable(r.traj_a.waypoints).all()
        assert r.map.drivable(r.traj_b.waypoints).all()
        assert r.map.width == r.map.height == 32


def test_safe_corpus_layouts_and_bad_mix():
    recs = sd.generate_safe_corpus(3, {"curve": 1.0}, seed=2)
    assert all(r.template == "curve" for r in recs)
    with pytest.raises(InputError):
        sd.generate_safe_corpus(2, {"straight": 0.0}, seed=0)
    with pytest.raises(InputError):
        sd.generate_safe_corpus(0, seed=0)


# -- collision corpus ----------------------------------------------------------

def test_collision_pair_meets_at_t_star(safe_small):
    r = safe_small[0]
    cp = r.traj_a.waypoints[35]
    c = sd.synthesize_collision_pair(r, cp, 35)
    assert np.array_equal(c.traj_a.waypoints[35], c.traj_b.waypoints[35])
    assert c.label == "collision" and c.map == r.map
    for new, old in ((c.traj_a, r.traj_a), (c.traj_b, r.traj_b)):
        assert np.allclose(np.diff(new.waypoints, axis=0), np.diff(old.waypoints, axis=0), atol=1e-12)


def test_collision_pair_errors(safe_small):
    r = safe_small[0]
    with pytest.raises(IndexError):
        sd.synthesize_collision_pair(r, r.traj_a.waypoints[0], r.T)
    with pytest.raises(IndexError):
        sd.synthesize_collision_pair(r, r.traj_a.waypoints[0], -1)


def test_collision_corpus_mdv_zero():
    safe = sd.generate_safe_corpus(200, seed=4)
    col = sd.generate_collision_corpus(safe, seed=4)
    assert len(col) == 200
    for r, s in zip(col, safe):
        assert _mdv_scan(r.traj_a.waypoints, r.traj_b.waypoints) == 0.0
        sd.check_label_invariants(r)
        d = np.linalg.norm(r.traj_a.waypoints - r.traj_b.waypoints, axis=1)
        t = int(np.argmin(d))
        assert 30 <= t <= 45


# -- lines corpus --------------------------------------------------------------

def test_line_angle_zero():
    w = sd.line_waypoints(0.0, 16)
    assert np.allclose(w, np.stack([np.arange(16) / 15, np.zeros(16)], axis=1), atol=1e-15)


def test_lines_unit_length_and_duplicate_agent():
    for r in sd.generate_lines_corpus(50, seed=3):
        w = r.traj_a.waypoints
        assert abs(np.linalg.norm(w[-1] - w[0]) - 1.0) < 1e-9
        assert np.array_equal(w, r.traj_b.waypoints)
        assert r.map.cells.all() and r.label == "safe"


def test_lines_angles_uniform():
    recs = sd.generate_lines_corpus(1000, seed=11)
    ang = np.array([math.atan2(r.traj_a.waypoints[-1, 1], r.traj_a.waypoints[-1, 0]) % (2 * math.pi)
                    for r in recs])
    counts = np.histogram(ang, bins=8, range=(0, 2 * math.pi))[0]
    exp, sd_ = 1000 / 8, math.sqrt(1000 * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - exp) <= 3 * sd_)
    assert stats.chisquare(counts).pvalue > 1e-3


# -- risky scenarios -----------------------------------------------------------

@pytest.fixture(scope="module")
def risky():
    return sd.generate_risky_scenarios(3, seed=9)


def test_risky_cardinality(risky):
    assert len(risky) == 18
    names = [r.template for r in risky]
    assert sorted(set(names)) == sorted(sd.RISKY_TEMPLATES)
    assert all(names.count(t) == 3 for t in sd.RISKY_TEMPLATES)


def test_risky_near_miss_band(risky):
    for r in risky:
        d = _mdv_scan(r.traj_a.waypoints, r.traj_b.waypoints)
        assert 0.2 < d < 1.5 and r.label == "risky"


def test_head_on_headings(risky):
    for r in sd.generate_risky_scenarios(5, seed=2):
        if r.template != "head_on":
            continue
        ha = np.subtract(*r.traj_a.waypoints[[1, 0]])
        hb = np.subtract(*r.traj_b.waypoints[[1, 0]])
        diff = abs(math.degrees(math.atan2(ha[1], ha[0]) - math.atan2(hb[1], hb[0]))) % 360
        assert abs(diff - 180) <= 20


# -- perturbation --------------------------------------------------------------

def test_perturb_zero_magnitude_is_identity(safe_small):
    t = safe_small[0].traj_a
    assert np.allclose(sd.perturb_trajectory(t, 0.0, seed=1).waypoints, t.waypoints, atol=1e-9)


def test_perturb_pins_endpoints_and_hits_midpoint(safe_small):
    for s in range(20):
        t = safe_small[s % len(safe_small)].traj_b
        p = sd.perturb_trajectory(t, 1.0, seed=s)
        assert np.array_equal(p.waypoints[0], t.waypoints[0])
        assert np.array_equal(p.waypoints[-1], t.waypoints[-1])
        mid = t.T // 2
        assert np.linalg.norm(p.waypoints[mid] - t.waypoints[mid]) <= 1.0 + 1e-12
        # the displacement curve is a cubic in arc-length fraction through the three poses
        u = sd.arclength_fractions(t.waypoints)
        disp = p.waypoints - t.waypoints
        coef = np.polyfit(u, disp, 3)
        fit = np.stack([np.polyval(coef[:, k], u[mid]) for k in range(2)])
        assert np.linalg.norm(fit - disp[mid]) < 1e-6


def test_perturb_needs_three_points():
    with pytest.raises(ShapeError):
        sd.perturb_trajectory(sd.Trajectory(np.zeros((2, 2)) + [[0, 0], [1, 0]]), 1.0)


# -- types ---------------------------------------------------------------------

def test_type_invariants():
    with pytest.raises(ValidationError):
        sd.Trajectory(np.zeros((1, 2)))
    with pytest.raises(ValidationError):
        sd.Trajectory(np.array([[0.0, np.nan], [1.0, 0.0]]))
    with pytest.raises(ValidationError):
        sd.Trajectory(np.zeros((3, 2)), dt=0.0)
    with pytest.raises(ValidationError):
        sd.GridMap(2, 2, 1.0, (0, 0), np.array([1, 0, 1]))
    with pytest.raises(ValidationError):
        sd.GridMap(2, 2, 1.0, (0, 0), np.array([1, 0, 2, 1]))


# -- file format ---------------------------------------------------------------

def test_store_load_roundtrip(tmp_path):
    recs = sd.generate_safe_corpus(25, seed=5)
    recs += sd.generate_collision_corpus(recs, seed=5)
    p = tmp_path / "d.jsonl"
    sd.store_dataset(recs, p)
    back = sd.load_dataset(p)
    assert len(back) == 50
    for a, b in zip(recs, back):
        assert a == b and a.id == b.id and a.label == b.label and a.template == b.template
        assert np.array_equal(a.traj_a.waypoints, b.traj_a.waypoints)


def _write(tmp_path, lines):
    p = tmp_path / "x.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_missing_field_names_line(tmp_path, safe_small):
    d = sd.record_to_dict(safe_small[0])
    del d["traj_a"]
    p = _write(tmp_path, [json.dumps(sd.FORMAT_HEADER), sd.dumps_record(safe_small[1]), json.dumps(d)])
    with pytest.raises(ParseError, match="line 3") as ei:
        sd.load_dataset(p)
    assert "traj_a" in str(ei.value) and ei.value.line == 3


def test_length_mismatch_rejected(tmp_path, safe_small):
    d = sd.record_to_dict(safe_small[0])
    d["traj_a"] = d["traj_a"][:30]
    d["traj_b"] = d["traj_b"][:31]
    p = _write(tmp_path, [json.dumps(sd.FORMAT_HEADER), json.dumps(d)])
    with pytest.raises(ValidationError, match="line 2"):
        sd.load_dataset(p)


def test_version_and_header_errors(tmp_path):
    with pytest.raises(VersionError):
        sd.load_dataset(_write(tmp_path, [json.dumps({"format": "cmts-dataset", "version": 99})]))
    with pytest.raises(ParseError):
        sd.load_dataset(_write(tmp_path, ["{not json"]))
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ParseError):
        sd.load_dataset(empty)
