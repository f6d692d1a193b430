import math

import numpy as np
import pytest
from sklearn.mixture import GaussianMixture

from cmts import metrics as me
from cmts.errors import InputError, ShapeError


def mdv_oracle(a, b):
    return min(math.hypot(a[t][0] - b[t][0], a[t][1] - b[t][1]) for t in range(len(a)))


def mdn_oracle(p):
    return sum(math.hypot(p[t + 1][0] - p[t][0], p[t + 1][1] - p[t][1]) for t in range(len(p) - 1)) / (len(p) - 1)


def mse_oracle(p, q):
    return sum((p[t][k] - q[t][k]) ** 2 for t in range(len(p)) for k in range(2)) / (2 * len(p))


def bic_oracle(X, kmax=10, seed=0):
    """Number of components picked by EM with the Bayesian information criterion."""
    bics = [GaussianMixture(k, covariance_type="diag", n_init=3, random_state=seed).fit(X).bic(X)
            for k in range(1, kmax + 1)]
    return int(np.argmin(bics)) + 1


def blobs(k, n_per, dim, sep, sigma, seed):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, dim))
    centers = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    if k > 1:
        # put centers on a scaled simplex-like spread and check the minimum gap
        centers = np.stack([np.eye(dim)[i % dim] * sep * (1 + i // dim) for i in range(k)])
    return np.concatenate([c + sigma * rng.standard_normal((n_per, dim)) for c in centers])


# -- MDV / MDN / MSE ---------------------------------------------------------------

def test_mdv_examples():
    a = np.stack([np.arange(10.0), np.zeros(10)], axis=1)
    assert me.mdv(a, a + [0, 1]) == 1.0
    b = a + [0, 3]
    b[4] = a[4]
    assert me.mdv(a, b) == 0.0
    with pytest.raises(ShapeError):
        me.mdv(a, a[:-1])


def test_mdn_examples():
    line = np.stack([0.5 * np.arange(8), np.zeros(8)], axis=1)
    assert me.mdn(line) == 0.5
    assert me.mdn(np.ones((5, 2))) == 0.0
    with pytest.raises(ShapeError):
        me.mdn(np.ones((1, 2)))


def test_mse_examples():
    a = np.random.default_rng(0).normal(size=(12, 2))
    assert me.mse_trajectory(a, a) == 0.0
    assert me.mse_trajectory(a + [1, 0], a) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ShapeError):
        me.mse_trajectory(a, a[:5])


def test_metrics_agree_with_scans(rng):
    for _ in range(100):
        a, b = rng.normal(size=(50, 2)) * 5, rng.normal(size=(50, 2)) * 5
        assert abs(me.mdv(a, b) - mdv_oracle(a, b)) < 1e-12
        assert abs(me.mdn(a) - mdn_oracle(a)) < 1e-12
        assert abs(me.mse_trajectory(a, b) - mse_oracle(a, b)) < 1e-12


def test_mdv_mdn_invariances(rng):
    a, b = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    off = rng.normal(size=2) * 100
    assert me.mdv(a, b) == me.mdv(b, a)
    assert abs(me.mdv(a + off, b + off) - me.mdv(a, b)) < 1e-9
    assert abs(me.mdn(a + off) - me.mdn(a)) < 1e-9


# -- lines metrics -----------------------------------------------------------------

def _lines(angles, T=16):
    k = np.arange(T) / (T - 1)
    return np.stack([np.stack([k * math.cos(t), k * math.sin(t)], axis=1) for t in angles])


def test_lines_metrics_membership_and_ramp():
    ref = _lines(np.linspace(0, 2, 40))
    md, sm = me.lines_interpolation_metrics(ref[5:15], ref)
    assert md == 0.0
    assert sm < 1e-12


def test_lines_smoothness_detects_jump():
    ang = np.concatenate([np.zeros(5), np.ones(5)])
    _, sm = me.lines_interpolation_metrics(_lines(ang), _lines(ang))
    # normalized sequence (0,...,0,1,...,1) against the ramp
    assert sm == pytest.approx(4 / 9, abs=1e-12)


def test_lines_smoothness_unwraps():
    ang = np.linspace(3.0, 3.5, 6)  # crosses the +-pi branch cut
    _, sm = me.lines_interpolation_metrics(_lines(ang), _lines(ang))
    assert sm < 1e-9


def test_lines_metrics_errors():
    with pytest.raises(InputError):
        me.lines_interpolation_metrics(_lines([0.0]), _lines([0.0]))
    with pytest.raises(ShapeError):
        me.lines_interpolation_metrics(_lines([0.0, 1.0]), _lines([0.0], T=8))


# -- projection --------------------------------------------------------------------

def test_projection_of_2d_input_preserves_distances(rng):
    X = rng.normal(size=(30, 2)) * [3, 1]
    P = me.project_2d(X)
    d0 = np.linalg.norm(X[:, None] - X[None], axis=2)
    d1 = np.linalg.norm(P.points[:, None] - P.points[None], axis=2)
    assert np.allclose(d0, d1, atol=1e-9)
    assert not P.degenerate


def test_projection_rank2_variance_and_duplicates(rng):
    basis = rng.normal(size=(2, 10))
    X = rng.normal(size=(50, 2)) @ basis
    X[7] = X[3]
    P = me.project_2d(X)
    assert abs(P.explained_variance_ratio.sum() - 1.0) < 1e-9
    assert np.array_equal(P.points[7], P.points[3])
    for c in P.components:
        assert c[np.argmax(np.abs(c))] > 0


def test_projection_degenerate():
    assert me.project_2d(np.ones((5, 3))).degenerate
    with pytest.raises(InputError):
        me.project_2d(np.ones((1, 3)))


# -- DPGMM -------------------------------------------------------------------------

def test_dpgmm_three_clusters_matches_oracle():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    X = np.concatenate([c + 0.1 * rng.standard_normal((100, 2)) for c in centers])
    res = me.dpgmm_cluster_count(X, seed=0)
    assert res.K == 3 == bic_oracle(X)
    assert sorted(np.round(res.counts[res.counts > 1]).astype(int)) == [100, 100, 100]


def test_dpgmm_one_gaussian():
    X = np.random.default_rng(1).standard_normal((300, 2))
    assert me.dpgmm_cluster_count(X, seed=0).K == 1 == bic_oracle(X)


def test_dpgmm_elbo_non_decreasing():
    X = blobs(5, 60, 4, 8.0, 0.5, 2)
    res = me.dpgmm_cluster_count(X, seed=3)
    for tr in res.elbo_runs:
        tr = np.asarray(tr)
        assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[1:]))
    # each accepted move ends above the run before it
    finals = [t[-1] for t in res.elbo_runs]
    assert finals == sorted(finals) and res.elbo_trace[-1] == finals[-1]
    assert res.converged and res.warning is None
    assert res.K <= me.DpgmmConfig().truncation


def test_dpgmm_scale_consistent():
    rng = np.random.default_rng(4)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    X = np.concatenate([c + 0.1 * rng.standard_normal((100, 2)) for c in centers])
    for c in (1e-3, 1.0, 1e3):
        assert me.dpgmm_cluster_count(c * X, seed=1).K == 3


def test_dpgmm_high_dimensional_blobs():
    X = blobs(4, 80, 32, 6.0, 0.3, 5)
    assert me.dpgmm_cluster_count(X, seed=0).K == 4


def test_dpgmm_input_errors():
    with pytest.raises(InputError):
        me.dpgmm_cluster_count(np.zeros((1, 3)))
    with pytest.raises(InputError):
        me.dpgmm_cluster_count(np.zeros((0, 3)))
    with pytest.raises(InputError):
        me.dpgmm_cluster_count(np.array([[0.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(InputError):
        me.DpgmmConfig(concentration=0.0)


def test_dpgmm_non_convergence_warns():
    X = blobs(3, 50, 2, 10.0, 0.2, 6)
    with pytest.warns(UserWarning, match="no convergence"):
        res = me.dpgmm_cluster_count(X, me.DpgmmConfig(max_iter=1, tol=0.0), seed=0)
    assert not res.converged and res.warning


def test_dpgmm_deterministic():
    X = blobs(3, 40, 3, 5.0, 0.5, 7)
    a, b = me.dpgmm_cluster_count(X, seed=9), me.dpgmm_cluster_count(X, seed=9)
    assert a.K == b.K and np.array_equal(a.counts, b.counts)


# -- report ------------------------------------------------------------------------

def test_report_roundtrip_and_recompute():
    rep = me.MetricReport(datasets=["a", "b"])
    rep.add("MSE", [1.0, 2.0, 3.0])
    back = me.MetricReport.from_json(rep.to_json())
    assert back.summaries == rep.summaries and back.datasets == ["a", "b"]
    assert back.summaries["MSE"]["mean"] == 2.0
    assert "MSE" in rep.table()
