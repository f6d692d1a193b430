"""Recurrent two-vehicle trajectory predictor and its evaluation harness.

A single GRU reads the first ``history - 1`` normalized steps; its last
history step seeds a 30-step autoregressive rollout through a dense head.
"""
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numeric as nm
from .errors import InputError, NumericError, ShapeError
from .metrics import MetricReport, mdn, mdv, mse_trajectory


@dataclass
class PredictorConfig:
    hidden: int = 64
    history: int = 20
    future: int = 30
    steps: int = 4000
    batch_size: int = 16
    lr: float = 3e-3
    scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.history < 2 or self.future < 1:
            raise InputError("need history >= 2 and future >= 1")
        if self.steps < 0 or self.batch_size < 1:
            raise InputError("steps must be >= 0 and batch_size >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def init_predictor(config, seed=None):
    rng = np.random.default_rng(config.seed if seed is None else seed)
    store = nm.ParameterStore()
    nm.init_gru(store, "pred.gru", 4, config.hidden, rng)
    nm.init_dense(store, "pred.out", config.hidden, 4, rng)
    return store


def split_record(record, config):
    """(history (h, 4), future (f, 4), centroid) with the history's joint
    centroid subtracted and coordinates scaled."""
    need = config.history + config.future
    if record.T < need:
        raise InputError(f"{record.id}: record has T={record.T}, predictor needs {need}")
    wa = record.traj_a.waypoints[:need]
    wb = record.traj_b.waypoints[:need]
    h = config.history
    c = np.concatenate([wa[:h], wb[:h]]).mean(axis=0)
    seq = np.concatenate([wa - c, wb - c], axis=1) * config.scale
    return seq[:h], seq[h:], c


def stack_records(records, config):
    hs, fs, cs = zip(*(split_record(r, config) for r in records))
    return np.stack(hs), np.stack(fs), np.stack(cs)


def _forward(store, hist, future):
    """hist (B, h, 4) -> predictions (B, future, 4)."""
    B = hist.shape[0]
    H = store["pred.gru.Uz"].shape[0]
    Xs = hist[:, :-1].transpose(1, 0, 2)
    Hs, scache = nm.gru_sequence(store, "pred.gru", Xs, np.zeros((B, H)))
    Y, rcache = nm.gru_rollout(store, "pred.gru", "pred.out", hist[:, -1], Hs[-1], future)
    return Y.transpose(1, 0, 2), (scache, rcache, Hs)


def loss_and_grad(store, hist, fut, backward=True):
    """Mean squared error in the normalized frame; accumulates gradients."""
    Y, (scache, rcache, Hs) = _forward(store, hist, fut.shape[1])
    diff = Y - fut
    loss = float((diff * diff).mean())
    if backward:
        dY = (2.0 / diff.size) * diff
        grads = store.grads
        _, dh = nm.gru_rollout_backward(store, "pred.gru", "pred.out", rcache, dY.transpose(1, 0, 2), grads)
        dHs = np.zeros_like(Hs)
        dHs[-1] = dh
        nm.gru_sequence_backward(store, "pred.gru", scache, dHs, grads)
    return loss


def predict_future(history, params, future=30):
    """Deterministic rollout from a normalized (h, 4) history; returns (future, 4)."""
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim != 2 or hist.shape[1] != 4 or hist.shape[0] < 2:
        raise ShapeError(f"history must have shape (h >= 2, 4), got {hist.shape}")
    Y, _ = _forward(params, hist[None], future)
    return Y[0]


def predict_records(records, params, config):
    """World-frame predicted futures: list of (traj_a (f, 2), traj_b (f, 2))."""
    hist, _, cents = stack_records(records, config)
    Y, _ = _forward(params, hist, config.future)
    out = []
    for y, c in zip(Y, cents):
        out.append((y[:, :2] / config.scale + c, y[:, 2:] / config.scale + c))
    return out


def train_predictor(dataset, config, log=None):
    """Fixed step budget of minibatch Adam on the mean squared error."""
    if len(dataset) == 0:
        raise InputError("training set is empty")
    hist, fut, _ = stack_records(dataset, config)
    store = init_predictor(config)
    rng = np.random.default_rng([config.seed, 1])
    n = len(dataset)
    B = min(config.batch_size, n)
    order = rng.permutation(n)
    pos = 0
    t0 = time.perf_counter()
    for step in range(config.steps):
        if pos + B > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + B]
        pos += B
        loss = loss_and_grad(store, hist[idx], fut[idx])
        if not np.isfinite(loss):
            raise NumericError(f"non-finite predictor loss at step {step}")
        nm.optimizer_step(store, lr=config.lr)
        if log is not None:
            log.append({"step": step, "loss": loss, "wall_seconds": time.perf_counter() - t0})
    return store


def evaluate_predictor(params, safe_test, risky_test, config=None, predict=None):
    """MSE on ``safe_test`` futures; MDV and MDN of predicted futures on ``risky_test``.

    ``predict(records) -> [(traj_a, traj_b)]`` replaces the GRU rollout, e.g.
    with an oracle; by default the rollout of ``params`` is used.
    """
    config = config or PredictorConfig()
    if predict is None:
        predict = lambda recs: predict_records(recs, params, config)
    if len(safe_test) == 0 or len(risky_test) == 0:
        raise InputError("both test sets must be non-empty")
    h, f = config.history, config.future
    mses = []
    for rec, (pa, pb) in zip(safe_test, predict(safe_test)):
        truth = np.concatenate([rec.traj_a.waypoints[h:h + f], rec.traj_b.waypoints[h:h + f]], axis=1)
        mses.append(mse_trajectory(np.concatenate([pa, pb], axis=1), truth))
    mdvs, mdns = [], []
    for pa, pb in predict(risky_test):
        mdvs.append(mdv(pa, pb))
        mdns.append(0.5 * (mdn(pa) + mdn(pb)))
    rep = MetricReport(datasets=[f"safe:{len(safe_test)}", f"risky:{len(risky_test)}"])
    rep.add("MSE", mses)
    rep.add("MDV", mdvs)
    rep.add("MDN", mdns)
    return rep
