"""Training objective and loop.

The objective per batch of paired safe/collision records is

    alpha * (Lr_s + Lr_c) + beta * (KL_s + KL_c) + gamma * Lf

with mean-squared reconstruction error, closed-form KL to N(0, I) and the
fusion-consistency term on a latent drawn from the interpolated Gaussian.
"""
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model as cm
from . import numeric as nm
from .errors import DomainError, InputError, NumericError, ShapeError

TERMS = ("Lr_s", "Lr_c", "KL_s", "KL_c", "Lf")


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1e-4
    gamma: float = 0.1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise DomainError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    warmup_epochs: int = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch size must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    @property
    def warmup(self):
        if self.warmup_epochs is None:
            return int(round(0.2 * self.epochs))
        return int(self.warmup_epochs)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def kl_to_standard_normal(g):
    """Closed-form KL(N(mu, sigma^2) || N(0, I)), summed over the last axis."""
    mu = np.asarray(g.mu, dtype=np.float64)
    sigma = np.asarray(g.sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    kl = 0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma)).sum(axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def interpolate_latent(gs, gc, lam):
    """Law of ``lam * z_s + (1 - lam) * z_c`` for independent Gaussian endpoints."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    if np.shape(gs.mu) != np.shape(gc.mu):
        raise ShapeError("latent widths differ")
    if lam == 1.0:
        return cm.LatentGaussian(np.array(gs.mu, copy=True), np.array(gs.sigma, copy=True))
    if lam == 0.0:
        return cm.LatentGaussian(np.array(gc.mu, copy=True), np.array(gc.sigma, copy=True))
    mu = lam * gs.mu + (1.0 - lam) * gc.mu
    sigma = np.sqrt(lam ** 2 * gs.sigma ** 2 + (1.0 - lam) ** 2 * gc.sigma ** 2)
    return cm.LatentGaussian(mu, sigma)


def fusion_consistency_loss(z_f, style, params, config):
    """Squared distance between ``z_f`` and the re-encoded mean of its decoding, over D."""
    z = np.atleast_2d(np.asarray(z_f, dtype=np.float64))
    if config.use_adain:
        Y, _ = cm.decode_forward(params, config, z, np.atleast_2d(style.mu), np.atleast_2d(style.sigma))
    else:
        Y, _ = cm.decode_forward(params, config, z)
    mu_hat, _, _ = cm.encode_forward(params, Y)
    loss = ((z - mu_hat) ** 2).sum(axis=1) / z.shape[1]
    return float(loss.mean())


@dataclass
class Batch:
    X: np.ndarray
    maps: np.ndarray


def make_batch(records, config):
    X, maps = cm.prepare_inputs(records, config, with_maps=config.use_adain)
    return Batch(X, maps)


def _as_batch(b, config):
    return b if isinstance(b, Batch) else make_batch(b, config)


def loss_and_grad(batch_s, batch_c, store, weights, rng, config, backward=True):
    """Evaluate the objective and accumulate parameter gradients into ``store``.

    Random draws, in order: safe noise, collision noise, then (with the
    fusion term) interpolation weights, fused-style choices, fused noise.
    """
    bs = _as_batch(batch_s, config)
    bc = _as_batch(batch_c, config)
    B = bs.X.shape[0]
    if bc.X.shape[0] != B:
        raise InputError(f"batch sizes differ: {B} safe vs {bc.X.shape[0]} collision")
    D = config.D
    grads = store.grads
    a, b, g = weights.alpha, weights.beta, weights.gamma

    mu_s, ls_s, ce_s = cm.encode_forward(store, bs.X)
    mu_c, ls_c, ce_c = cm.encode_forward(store, bc.X)
    sig_s, sig_c = np.exp(ls_s), np.exp(ls_c)
    if config.use_adain:
        smu_s, sls_s, cm_s = cm.map_forward(store, config, bs.maps)
        smu_c, sls_c, cm_c = cm.map_forward(store, config, bc.maps)
        ssig_s, ssig_c = np.exp(sls_s), np.exp(sls_c)
    else:
        smu_s = ssig_s = smu_c = ssig_c = None

    eps_s = rng.standard_normal((B, D))
    eps_c = rng.standard_normal((B, D))
    z_s = mu_s + sig_s * eps_s
    z_c = mu_c + sig_c * eps_c
    Y_s, cd_s = cm.decode_forward(store, config, z_s, smu_s, ssig_s)
    Y_c, cd_c = cm.decode_forward(store, config, z_c, smu_c, ssig_c)
    n_el = Y_s.size
    terms = {
        "Lr_s": float(((Y_s - bs.X) ** 2).mean()),
        "Lr_c": float(((Y_c - bc.X) ** 2).mean()),
        "KL_s": float(0.5 * (mu_s ** 2 + sig_s ** 2 - 1.0 - 2.0 * ls_s).sum(axis=1).mean()),
        "KL_c": float(0.5 * (mu_c ** 2 + sig_c ** 2 - 1.0 - 2.0 * ls_c).sum(axis=1).mean()),
        "Lf": 0.0,
    }

    if config.use_fusion_loss:
        lam = rng.uniform(0.0, 1.0, size=B)
        pick_c = rng.integers(0, 2, size=B).astype(bool)
        eps_f = rng.standard_normal((B, D))
        l2 = lam[:, None]
        mu_f = l2 * mu_s + (1.0 - l2) * mu_c
        sig_f = np.sqrt(l2 ** 2 * sig_s ** 2 + (1.0 - l2) ** 2 * sig_c ** 2)
        z_f = mu_f + sig_f * eps_f
        if config.use_adain:
            sel = pick_c[:, None]
            smu_f = np.where(sel, smu_c, smu_s)
            ssig_f = np.where(sel, ssig_c, ssig_s)
        else:
            smu_f = ssig_f = None
        Y_f, cd_f = cm.decode_forward(store, config, z_f, smu_f, ssig_f)
        mu_hat, _, ce_f = cm.encode_forward(store, Y_f)
        diff = z_f - mu_hat
        terms["Lf"] = float((diff ** 2).sum(axis=1).mean() / D)

    total = a * (terms["Lr_s"] + terms["Lr_c"]) + b * (terms["KL_s"] + terms["KL_c"]) + g * terms["Lf"]
    if not backward:
        return total, terms

    dmu_s = b * mu_s / B
    dmu_c = b * mu_c / B
    dsig_s = np.zeros_like(sig_s)
    dsig_c = np.zeros_like(sig_c)
    dls_s = b * (sig_s ** 2 - 1.0) / B
    dls_c = b * (sig_c ** 2 - 1.0) / B
    dsmu_s = dssig_s = dsmu_c = dssig_c = None
    if config.use_adain:
        dsmu_s, dssig_s = np.zeros_like(smu_s), np.zeros_like(ssig_s)
        dsmu_c, dssig_c = np.zeros_like(smu_c), np.zeros_like(ssig_c)

    if config.use_fusion_loss:
        coef = 2.0 * g / (B * D)
        dz_f = coef * diff
        dX_f = cm.encode_backward(store, ce_f, -coef * diff, None, grads)
        dz_dec, dsmu_f, dssig_f = cm.decode_backward(store, config, cd_f, dX_f, grads)
        dz_f = dz_f + dz_dec
        dsig_f = dz_f * eps_f
        dmu_s += l2 * dz_f
        dmu_c += (1.0 - l2) * dz_f
        dsig_s += dsig_f * l2 ** 2 * sig_s / sig_f
        dsig_c += dsig_f * (1.0 - l2) ** 2 * sig_c / sig_f
        if config.use_adain:
            sel = pick_c[:, None]
            dsmu_s += np.where(sel, 0.0, dsmu_f)
            dssig_s += np.where(sel, 0.0, dssig_f)
            dsmu_c += np.where(sel, dsmu_f, 0.0)
            dssig_c += np.where(sel, dssig_f, 0.0)

    for Y, X, cd, eps, dmu, dsig, dsmu, dssig in (
            (Y_s, bs.X, cd_s, eps_s, dmu_s, dsig_s, dsmu_s, dssig_s),
            (Y_c, bc.X, cd_c, eps_c, dmu_c, dsig_c, dsmu_c, dssig_c)):
        dY = (2.0 * a / n_el) * (Y - X)
        dz, dsm, dss = cm.decode_backward(store, config, cd, dY, grads)
        dmu += dz
        dsig += dz * eps
        if config.use_adain:
            dsmu += dsm
            dssig += dss

    cm.encode_backward(store, ce_s, dmu_s, dls_s + dsig_s * sig_s, grads)
    cm.encode_backward(store, ce_c, dmu_c, dls_c + dsig_c * sig_c, grads)
    if config.use_adain:
        cm.map_backward(store, cm_s, dsmu_s, dssig_s * ssig_s, grads)
        cm.map_backward(store, cm_c, dsmu_c, dssig_c * ssig_c, grads)
    return total, terms


def total_loss(batch_s, batch_c, params, weights, rng, config):
    """Objective value and per-term breakdown; gradients land in ``params.grads``."""
    return loss_and_grad(batch_s, batch_c, params, weights, rng, config, backward=True)


def flat_loss_fn(store, batch_s, batch_c, weights, config, seed):
    """``f(theta) -> (loss, grad)`` over the flattened parameters, fixed noise."""
    bs = _as_batch(batch_s, config)
    bc = _as_batch(batch_c, config)

    def fn(theta):
        store.set_flat(theta)
        store.zero_grad()
        val, _ = loss_and_grad(bs, bc, store, weights, np.random.default_rng(seed), config)
        g = store.flat_grad()
        store.zero_grad()
        return val, g

    return fn


def sample_coords(store, per_tensor, seed):
    """Pick up to ``per_tensor`` flat indices from every parameter tensor."""
    rng = np.random.default_rng(seed)
    out = []
    for name, sl in store.slices().items():
        n = sl.stop - sl.start
        k = min(per_tensor, n)
        out.extend(sl.start + rng.choice(n, size=k, replace=False))
    return np.sort(np.asarray(out, dtype=int))


# ---------------------------------------------------------------------------
# loop

def _check_dataset(records, name, config):
    if not records:
        raise InputError(f"{name} dataset is empty")
    for r in records:
        if r.T != config.T:
            raise InputError(f"{name} record {r.id} has T={r.T}, model expects T={config.T}")


def train(dataset_s, dataset_c, config, model_config, log_path=None, checkpoint_path=None, progress=None):
    """Train from scratch; returns (ParameterStore, list of per-epoch log dicts).

    Each epoch pairs independent shuffles of the two datasets and makes
    ``ceil(min(len_s, len_c) / batch_size)`` optimizer steps.
    """
    _check_dataset(dataset_s, "safe", model_config)
    _check_dataset(dataset_c, "collision", model_config)
    rng = np.random.default_rng(config.seed)
    store = cm.init_params(model_config, config.seed)
    bs_all = make_batch(dataset_s, model_config)
    bc_all = make_batch(dataset_c, model_config)
    n_pairs = min(len(dataset_s), len(dataset_c))
    w = config.weights
    warm = config.warmup
    log = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    # wall-clock time goes to a sidecar so the log itself stays reproducible
    time_fh = open(log_path + ".timing", "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            beta_eff = w.beta * min(1.0, epoch / warm) if warm > 0 else w.beta
            ew = LossWeights(w.alpha, beta_eff, w.gamma)
            ps = rng.permutation(len(dataset_s))[:n_pairs]
            pc = rng.permutation(len(dataset_c))[:n_pairs]
            sums = dict.fromkeys(TERMS, 0.0)
            tot = 0.0
            for start in range(0, n_pairs, config.batch_size):
                i_s = ps[start:start + config.batch_size]
                i_c = pc[start:start + config.batch_size]
                b_s = Batch(bs_all.X[i_s], None if bs_all.maps is None else bs_all.maps[i_s])
                b_c = Batch(bc_all.X[i_c], None if bc_all.maps is None else bc_all.maps[i_c])
                val, terms = loss_and_grad(b_s, b_c, store, ew, rng, model_config)
                if not math.isfinite(val):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch starting {start}: {terms}")
                nm.optimizer_step(store, config.lr)
                k = len(i_s)
                tot += val * k
                for t in TERMS:
                    sums[t] += terms[t] * k
            entry = {"epoch": epoch}
            entry.update({t: sums[t] / n_pairs for t in TERMS})
            entry["total"] = tot / n_pairs
            entry["beta_effective"] = beta_eff
            entry["wall_seconds"] = time.perf_counter() - t0
            log.append(entry)
            if log_fh:
                det = {k: v for k, v in entry.items() if k != "wall_seconds"}
                log_fh.write(json.dumps(det) + "\n")
                log_fh.flush()
                time_fh.write(json.dumps({"epoch": epoch, "wall_seconds": entry["wall_seconds"]}) + "\n")
            if progress:
                progress(entry)
            if checkpoint_path and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_model(f"{checkpoint_path}.epoch{epoch + 1}", store, model_config, config)
    finally:
        if log_fh:
            log_fh.close()
            time_fh.close()
    if checkpoint_path:
        save_model(checkpoint_path, store, model_config, config)
    return store, log


def save_model(path, store, model_config, train_config=None):
    meta = {"kind": "cmts-model", "model": model_config.to_dict()}
    if train_config is not None:
        meta["train"] = train_config.to_dict()
    nm.save_checkpoint(path, store, meta)


def load_model(path):
    store, meta = nm.load_checkpoint(path)
    if meta.get("kind") != "cmts-model":
        raise InputError(f"{path} is not a CMTS model checkpoint")
    return store, cm.ModelConfig.from_dict(meta["model"])
