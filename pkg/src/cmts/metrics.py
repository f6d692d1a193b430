"""Evaluation metrics: trajectory risk measures, lines-interpolation scores,
PCA projection and Dirichlet-process mixture cluster counting."""
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, betaln

from .errors import InputError, ShapeError


def _points(traj):
    return np.asarray(getattr(traj, "waypoints", traj), dtype=np.float64)


def mdv(traj_a, traj_b):
    """Minimal distance between two vehicles over time (meters)."""
    a, b = _points(traj_a), _points(traj_b)
    if a.shape != b.shape:
        raise ShapeError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum(axis=1)).min())


def mdn(traj):
    """Mean distance between neighbouring waypoints (meters)."""
    p = _points(traj)
    if p.shape[0] < 2:
        raise ShapeError("need at least 2 waypoints")
    return float(np.sqrt((np.diff(p, axis=0) ** 2).sum(axis=1)).mean())


def mse_trajectory(pred, truth):
    """Mean over time steps and both coordinates of the squared error."""
    p, t = _points(pred), _points(truth)
    if p.shape != t.shape:
        raise ShapeError(f"shapes differ: {p.shape} vs {t.shape}")
    return float(((p - t) ** 2).mean())


# ---------------------------------------------------------------------------
# lines

def endpoint_angles(sequences):
    s = np.asarray(sequences, dtype=np.float64)
    v = s[:, -1, :2] - s[:, 0, :2]
    return np.arctan2(v[:, 1], v[:, 0])


def lines_interpolation_metrics(interpolants, reference_corpus):
    """(mean_distance, smoothness) of a λ-ordered sequence of decoded lines.

    Mean distance: for each interpolant, the smallest mean per-waypoint L2
    distance to any reference line, averaged. Smoothness: the largest
    deviation of the unwrapped, affinely normalized endpoint-angle sequence
    from a uniform ramp.
    """
    seqs = np.asarray(interpolants, dtype=np.float64)
    ref = np.asarray(reference_corpus, dtype=np.float64)
    if seqs.ndim != 3 or seqs.shape[0] < 2:
        raise InputError("need at least 2 interpolants of shape (T, 2)")
    if ref.ndim != 3 or ref.shape[1:] != seqs.shape[1:]:
        raise ShapeError("reference lines must match interpolant shape")
    d = np.sqrt(((seqs[:, None] - ref[None]) ** 2).sum(axis=3)).mean(axis=2)
    mean_distance = float(d.min(axis=1).mean())
    ang = np.unwrap(endpoint_angles(seqs))
    span = ang[-1] - ang[0]
    n = len(ang)
    ramp = np.arange(n) / (n - 1)
    if span == 0.0:
        smooth = 0.0 if np.all(ang == ang[0]) else 1.0
    else:
        smooth = float(np.abs((ang - ang[0]) / span - ramp).max())
    return mean_distance, smooth


# ---------------------------------------------------------------------------
# projection

@dataclass
class Projection:
    points: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    degenerate: bool


def project_2d(codes):
    """Principal-component projection onto the top two directions.

    Each component's sign is fixed so its largest-magnitude entry is positive.
    """
    X = np.asarray(codes, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("need at least 2 codes")
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    total = float((s ** 2).sum())
    degenerate = total <= 0.0 or s[0] <= 1e-12 * max(1.0, np.abs(X).max())
    comps = np.zeros((2, X.shape[1]))
    k = min(2, Vt.shape[0])
    comps[:k] = Vt[:k]
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    var = np.zeros(2)
    var[:k] = s[:k] ** 2
    ratio = var / total if total > 0 else np.zeros(2)
    return Projection(Xc @ comps.T, comps, ratio, bool(degenerate))


# ---------------------------------------------------------------------------
# DPGMM

@dataclass
class DpgmmConfig:
    concentration: float = 1.0
    truncation: int = 150
    max_iter: int = 1000
    tol: float = 1e-7
    threshold: float = 1.0
    init_clusters: int = None
    prior_kappa: float = 1.0
    prior_shape: float = 1.0
    prior_scale: float = 1.0
    n_init: int = 4

    def __post_init__(self):
        if not self.concentration > 0:
            raise InputError("concentration must be positive")
        if self.truncation < 1:
            raise InputError("truncation must be >= 1")
        if not self.threshold > 0:
            raise InputError("threshold must be positive")
        if self.n_init < 1:
            raise InputError("n_init must be >= 1")


@dataclass
class DpgmmResult:
    K: int
    counts: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    elbo_trace: list
    n_iter: int
    converged: bool
    warning: str = None
    # one bound trace per accepted inference run (initial fit, then delete moves)
    elbo_runs: list = None


def _kmeanspp(X, k, rng, iters=20):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        if d2.sum() <= 0:
            break
        centers.append(X[rng.choice(n, p=d2 / d2.sum())])
        d2 = np.minimum(d2, ((X - centers[-1]) ** 2).sum(axis=1))
    C = np.array(centers)
    for _ in range(iters):
        lab = ((X[:, None] - C[None]) ** 2).sum(axis=2).argmin(axis=1)
        newC = np.array([X[lab == j].mean(axis=0) if np.any(lab == j) else C[j] for j in range(len(C))])
        if np.allclose(newC, C):
            break
        C = newC
    return ((X[:, None] - C[None]) ** 2).sum(axis=2).argmin(axis=1), len(C)


class _VariationalDP:
    """Truncated stick-breaking mean-field inference with diagonal
    Normal-Gamma component posteriors."""

    def __init__(self, X, cfg):
        self.X = X
        self.cfg = cfg
        n, d = X.shape
        self.K = cfg.truncation
        self.alpha = cfg.concentration
        self.m0 = X.mean(axis=0)
        var = X.var(axis=0)
        var = np.where(var > 0, var, max(float(var.max()), 1.0) if var.max() > 0 else 1.0)
        self.k0 = cfg.prior_kappa
        self.a0 = cfg.prior_shape
        self.b0 = cfg.prior_shape * cfg.prior_scale * var

    def m_step(self, r):
        X = self.X
        Nk = r.sum(axis=0)
        safeN = np.where(Nk > 0, Nk, 1.0)
        xbar = (r.T @ X) / safeN[:, None]
        xbar = np.where(Nk[:, None] > 0, xbar, self.m0)
        S = r.T @ (X * X) - Nk[:, None] * xbar * xbar
        S = np.maximum(S, 0.0)
        self.g1 = 1.0 + Nk
        tail = np.concatenate([np.cumsum(Nk[::-1])[::-1][1:], [0.0]])
        self.g2 = self.alpha + tail
        self.kap = self.k0 + Nk
        self.m = (self.k0 * self.m0 + Nk[:, None] * xbar) / self.kap[:, None]
        self.a = self.a0 + Nk / 2.0
        self.b = self.b0 + S / 2.0 + (self.k0 * Nk / (2.0 * self.kap))[:, None] * (xbar - self.m0) ** 2

    def expectations(self):
        dsum = digamma(self.g1 + self.g2)
        elv = digamma(self.g1) - dsum
        el1v = digamma(self.g2) - dsum
        elv[-1] = 0.0
        el1v[-1] = 0.0
        elog_pi = elv + np.concatenate([[0.0], np.cumsum(el1v[:-1])])
        X = self.X
        d = X.shape[1]
        eprec = self.a[:, None] / self.b
        elog_tau = digamma(self.a)[:, None] - np.log(self.b)
        quad = ((X * X) @ eprec.T - 2.0 * X @ (eprec * self.m).T + (eprec * self.m ** 2).sum(axis=1))
        ell = (0.5 * elog_tau.sum(axis=1) - 0.5 * d * math.log(2 * math.pi)
               - 0.5 * d / self.kap)[None] - 0.5 * quad
        return elog_pi, ell

    def e_step(self):
        elog_pi, ell = self.expectations()
        logits = elog_pi[None] + ell
        logits -= logits.max(axis=1, keepdims=True)
        r = np.exp(logits)
        r /= r.sum(axis=1, keepdims=True)
        return r

    def elbo(self, r):
        elog_pi, ell = self.expectations()
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.where(r > 0, r * np.log(r), 0.0).sum()
        val = float((r * (elog_pi[None] + ell)).sum()) + ent
        g1, g2 = self.g1[:-1], self.g2[:-1]
        kl_beta = (betaln(1.0, self.alpha) - betaln(g1, g2) + (g1 - 1.0) * digamma(g1)
                   + (g2 - self.alpha) * digamma(g2) + (1.0 + self.alpha - g1 - g2) * digamma(g1 + g2))
        a = self.a[:, None]
        kl_gamma = ((a - self.a0) * digamma(a) - gammaln(a) + gammaln(self.a0)
                    + self.a0 * (np.log(self.b) - np.log(self.b0)) + a * (self.b0 - self.b) / self.b)
        kap = self.kap[:, None]
        kl_norm = 0.5 * (np.log(kap / self.k0) + self.k0 / kap - 1.0
                         + self.k0 * (a / self.b) * (self.m - self.m0) ** 2)
        return val - float(kl_beta.sum()) - float((kl_gamma + kl_norm).sum())


def _run_vi(vi, r, max_iter, tol):
    trace = []
    converged = False
    it = 0
    vi.m_step(r)
    for it in range(1, max_iter + 1):
        r = vi.e_step()
        vi.m_step(r)
        L = vi.elbo(r)
        if trace and L < trace[-1] - 1e-9 * max(1.0, abs(trace[-1])):
            raise ArithmeticError(f"evidence bound decreased at iteration {it}: {trace[-1]} -> {L}")
        trace.append(L)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    return r, trace, it, converged


def _fit_once(X, cfg, rng):
    n = X.shape[0]
    k_init = cfg.init_clusters or min(cfg.truncation, max(1, int(math.ceil(n / 10))))
    k_init = min(k_init, cfg.truncation, n)
    labels, k_found = _kmeanspp(X, k_init, rng)
    sizes = np.bincount(labels, minlength=k_found)
    order = np.argsort(-sizes, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    r = np.zeros((n, cfg.truncation))
    r[np.arange(n), remap[labels]] = 1.0

    vi = _VariationalDP(X, cfg)
    r, trace, it, converged = _run_vi(vi, r, cfg.max_iter, cfg.tol)
    runs = [trace]
    # delete moves: try emptying each small component and re-running inference;
    # keep the result only when the evidence bound improves
    for _ in range(cfg.truncation):
        counts = r.sum(axis=0)
        live = [k for k in np.argsort(counts, kind="stable") if counts[k] > 1e-8]
        if len(live) < 2:
            break
        accepted = False
        for k in live[:-1]:
            elog_pi, ell = vi.expectations()
            logits = elog_pi[None] + ell
            logits[:, k] = -np.inf
            logits -= logits.max(axis=1, keepdims=True)
            r_try = np.exp(logits)
            r_try /= r_try.sum(axis=1, keepdims=True)
            trial = _VariationalDP(X, cfg)
            r2, t2, it2, conv2 = _run_vi(trial, r_try, cfg.max_iter, cfg.tol)
            it += it2
            if t2[-1] > trace[-1] + 1e-9 * abs(trace[-1]):
                vi, r, converged = trial, r2, conv2
                trace = t2
                runs.append(t2)
                accepted = True
                break
        if not accepted:
            break
    return vi, r, trace, it, converged, runs


def dpgmm_cluster_count(codes, config=None, seed=0):
    """Fit a truncated Dirichlet-process Gaussian mixture; K counts components
    whose expected membership exceeds ``config.threshold``.

    ``config.n_init`` k-means++ initializations are refined independently and
    the one with the highest evidence bound is reported.
    """
    cfg = config or DpgmmConfig()
    X = np.asarray(codes, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("need at least 2 codes")
    if not np.all(np.isfinite(X)):
        raise InputError("codes must be finite")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(cfg.n_init):
        fit = _fit_once(X, cfg, rng)
        if best is None or fit[2][-1] > best[2][-1]:
            best = fit
    vi, r, trace, it, converged, runs = best
    warning = None
    if not converged:
        warning = f"no convergence after {cfg.max_iter} iterations"
        warnings.warn(warning)
    counts = r.sum(axis=0)
    weights = vi.g1 / (vi.g1 + vi.g2)
    weights = weights * np.concatenate([[1.0], np.cumprod(1.0 - weights[:-1])])
    K = int((counts > cfg.threshold).sum())
    return DpgmmResult(K, counts, weights, vi.m, trace, it, converged, warning, runs)


# ---------------------------------------------------------------------------
# report

@dataclass
class MetricReport:
    summaries: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    datasets: list = field(default_factory=list)

    def add(self, name, values):
        values = np.asarray(values, dtype=np.float64)
        self.arrays[name] = values
        self.summaries[name] = {"mean": float(values.mean()) if values.size else float("nan"),
                                "std": float(values.std()) if values.size else float("nan"),
                                "n": int(values.size)}

    def to_json(self):
        return json.dumps({"format": "cmts-metrics", "version": 1, "datasets": self.datasets,
                           "summaries": self.summaries,
                           "arrays": {k: v.tolist() for k, v in self.arrays.items()}})

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        rep = cls(datasets=d.get("datasets", []))
        for k, v in d["arrays"].items():
            rep.add(k, v)
        return rep

    def table(self):
        rows = [f"{'metric':<24}{'mean':>14}{'std':>14}{'n':>8}"]
        for k, s in self.summaries.items():
            rows.append(f"{k:<24}{s['mean']:>14.6g}{s['std']:>14.6g}{s['n']:>8d}")
        return "\n".join(rows)
