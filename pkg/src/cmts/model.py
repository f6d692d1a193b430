"""The conditional trajectory VAE: joint GRU trajectory encoder, convolutional
map encoder producing per-group style statistics, AdaIN merge and an
autoregressive GRU decoder.

Batched ``*_forward`` functions return a cache consumed by the matching
``*_backward``; the single-record helpers (``encode_trajectory`` etc.) wrap
them for callers that do not need gradients.
"""
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numeric as nm
from .errors import ShapeError, ValidationError

ADAIN_EPS = 1e-5


@dataclass
class ModelConfig:
    D: int = 32
    H: int = 64
    C: int = 8
    T: int = 50
    input_width: int = 4
    scale: float = 0.05
    feature_width: int = 32
    use_adain: bool = True
    use_fusion_loss: bool = True

    def __post_init__(self):
        if self.C < 1 or self.D % self.C != 0:
            raise ValidationError(f"style groups C={self.C} must divide latent width D={self.D}")
        if self.T < 2:
            raise ValidationError("T must be >= 2")
        if self.input_width != 4:
            raise ValidationError("input width is fixed at 4 (x_a, y_a, x_b, y_b)")
        if not self.scale > 0:
            raise ValidationError("scale must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LatentGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}")


@dataclass
class StyleStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ShapeError("style mu and sigma differ in shape")


def init_params(config, seed=0):
    rng = np.random.default_rng(seed)
    store = nm.ParameterStore()
    nm.init_gru(store, "enc.gru", config.input_width, config.H, rng)
    nm.init_dense(store, "enc.mu", config.H, config.D, rng)
    nm.init_dense(store, "enc.logsig", config.H, config.D, rng, scale=1e-3)
    if config.use_adain:
        nm.init_conv_features(store, "map", config.feature_width, rng)
        nm.init_dense(store, "map.style", config.feature_width, 2 * config.C, rng, scale=1e-2)
    nm.init_dense(store, "dec.init", config.D, config.H, rng)
    nm.init_gru(store, "dec.gru", config.input_width, config.H, rng)
    nm.init_dense(store, "dec.out", config.H, config.input_width, rng)
    return store


def zero_params(config):
    store = init_params(config, 0)
    store.set_flat(np.zeros(store.size()))
    return store


# ---------------------------------------------------------------------------
# normalization

def normalize_record(record, scale):
    """Joint-centroid frame scaled by ``scale``: returns ((T, 4), centroid)."""
    wa = record.traj_a.waypoints
    wb = record.traj_b.waypoints
    c = np.concatenate([wa, wb]).mean(axis=0)
    return np.concatenate([(wa - c) * scale, (wb - c) * scale], axis=1), c


def denormalize(X, centroid, scale):
    X = np.asarray(X)
    c = np.asarray(centroid)
    return X[:, :2] / scale + c, X[:, 2:] / scale + c


def prepare_inputs(records, config, with_maps=True):
    """Stack normalized sequences (B, T, 4) and map rasters (B, 32, 32)."""
    X = np.empty((len(records), config.T, config.input_width))
    for i, r in enumerate(records):
        if r.T != config.T:
            raise ShapeError(f"{r.id}: record has T={r.T}, model expects T={config.T}")
        X[i] = normalize_record(r, config.scale)[0]
    maps = np.stack([r.map.cells for r in records]).astype(np.float64) if with_maps else None
    return X, maps


# ---------------------------------------------------------------------------
# encoders

def encode_forward(store, X):
    X = np.asarray(X, dtype=np.float64)
    B = X.shape[0]
    H = store["enc.gru.Uz"].shape[0]
    Hs, gcache = nm.gru_sequence(store, "enc.gru", X.transpose(1, 0, 2), np.zeros((B, H)))
    h = Hs[-1]
    mu = nm.dense(store, "enc.mu", h)
    logsig = nm.dense(store, "enc.logsig", h)
    return mu, logsig, (gcache, h)


def encode_backward(store, cache, dmu, dlogsig, grads):
    gcache, h = cache
    dh = nm.dense_backward(store, "enc.mu", h, dmu, grads)
    if dlogsig is not None:
        dh = dh + nm.dense_backward(store, "enc.logsig", h, dlogsig, grads)
    Hs = gcache[1]
    dHs = np.zeros_like(Hs)
    dHs[-1] = dh
    dX, _ = nm.gru_sequence_backward(store, "enc.gru", gcache, dHs, grads)
    return dX.transpose(1, 0, 2)


def encode_trajectory(record, params, config):
    X, _ = prepare_inputs([record], config, with_maps=False)
    mu, logsig, _ = encode_forward(params, X)
    return LatentGaussian(mu[0], np.exp(logsig[0]))


def map_forward(store, config, maps):
    feats, fcache = nm.conv_grid_features(maps, store, "map")
    feats = np.atleast_2d(feats)
    out = nm.dense(store, "map.style", feats)
    C = config.C
    return out[:, :C], out[:, C:], (fcache, feats)


def map_backward(store, cache, dsmu, dslogsig, grads):
    fcache, feats = cache
    dout = np.concatenate([dsmu, dslogsig], axis=1)
    dfeats = nm.dense_backward(store, "map.style", feats, dout, grads)
    nm.conv_grid_features_backward(store, "map", fcache, dfeats, grads)


def encode_map_condition(grid_map, params, config):
    cells = np.asarray(grid_map.cells, dtype=np.float64)
    if cells.shape != (32, 32):
        raise ShapeError(f"map raster must be 32x32, got {cells.shape}")
    smu, sls, _ = map_forward(params, config, cells[None])
    return StyleStats(smu[0], np.exp(sls[0]))


# ---------------------------------------------------------------------------
# AdaIN

def adain_forward(z, smu, ssig, eps=ADAIN_EPS):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    smu = np.atleast_2d(smu)
    ssig = np.atleast_2d(ssig)
    B, D = z.shape
    C = smu.shape[1]
    if D % C != 0:
        raise ShapeError(f"{C} style groups do not divide latent width {D}")
    g = z.reshape(B, C, D // C)
    m = g.mean(axis=2, keepdims=True)
    c = g - m
    s = np.sqrt((c * c).mean(axis=2, keepdims=True))
    n = c / (s + eps)
    out = ssig[:, :, None] * n + smu[:, :, None]
    return out.reshape(B, D), (c, s, n, ssig, eps)


def adain_backward(cache, dout):
    c, s, n, ssig, eps = cache
    B, C, k = c.shape
    d = dout.reshape(B, C, k)
    dsmu = d.sum(axis=2)
    dssig = (d * n).sum(axis=2)
    dn = d * ssig[:, :, None]
    dc = dn / (s + eps)
    ds = -(dn * c).sum(axis=2, keepdims=True) / (s + eps) ** 2
    safe_s = np.where(s > 0, s, 1.0)
    dz = dc - dc.mean(axis=2, keepdims=True) + np.where(s > 0, ds * c / (k * safe_s), 0.0)
    return dz.reshape(B, C * k), dsmu, dssig


def adain_merge(z, style, eps=ADAIN_EPS):
    """Re-standardize each contiguous group of ``z`` to the style's mean and scale."""
    z = np.asarray(z, dtype=np.float64)
    out, _ = adain_forward(z, style.mu, style.sigma, eps)
    return out[0] if z.ndim == 1 else out


# ---------------------------------------------------------------------------
# decoder

def decode_forward(store, config, z, smu=None, ssig=None):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    B = z.shape[0]
    acache = None
    zin = z
    if config.use_adain:
        if smu is None or ssig is None:
            raise ShapeError("decoder with AdaIN needs style statistics")
        zin, acache = adain_forward(z, smu, ssig)
    pre = nm.dense(store, "dec.init", zin)
    h0 = np.tanh(pre)
    Y, rcache = nm.gru_rollout(store, "dec.gru", "dec.out", np.zeros((B, config.input_width)), h0, config.T)
    return Y.transpose(1, 0, 2), (acache, zin, h0, rcache)


def decode_backward(store, config, cache, dY, grads):
    """Returns (dz, dsmu, dssig); the style terms are None without AdaIN."""
    acache, zin, h0, rcache = cache
    _, dh0 = nm.gru_rollout_backward(store, "dec.gru", "dec.out", rcache, dY.transpose(1, 0, 2), grads)
    dpre = dh0 * (1.0 - h0 * h0)
    dzin = nm.dense_backward(store, "dec.init", zin, dpre, grads)
    if acache is None:
        return dzin, None, None
    return adain_backward(acache, dzin)


def decode_trajectory(z, style, params, config):
    """Decode one latent vector to a (T, 4) sequence in normalized coordinates."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != config.D:
        raise ShapeError(f"latent width {z.shape[-1]} != D={config.D}")
    if config.use_adain:
        Y, _ = decode_forward(params, config, z, np.atleast_2d(style.mu), np.atleast_2d(style.sigma))
    else:
        Y, _ = decode_forward(params, config, z)
    return Y[0] if z.ndim == 1 else Y
