"""Parameter storage, layer forward/backward passes, Adam, gradient checks
and the binary checkpoint format.

Everything is float64. Backward functions accumulate into ``grads`` (a
name -> array mapping, normally ``store.grads``) and return gradients with
respect to their inputs.
"""
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, DataError, VersionError

GRU_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")
CHECKPOINT_MAGIC = b"CMTS1\n"


@dataclass
class Entry:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParameterStore:
    """Named float64 tensors with gradient accumulators and Adam moments."""

    def __init__(self):
        self.entries = {}
        self.step = 0

    def add(self, name, value):
        value = np.array(value, dtype=np.float64)
        self.entries[name] = Entry(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        return value

    def __getitem__(self, name):
        return self.entries[name].value

    def __contains__(self, name):
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self, prefix=""):
        return [n for n in self.entries if n.startswith(prefix)]

    @property
    def grads(self):
        return {n: e.grad for n, e in self.entries.items()}

    def zero_grad(self):
        for e in self.entries.values():
            e.grad[...] = 0.0

    def size(self):
        return sum(e.value.size for e in self.entries.values())

    def flat(self):
        return np.concatenate([e.value.ravel() for e in self.entries.values()])

    def flat_grad(self):
        return np.concatenate([e.grad.ravel() for e in self.entries.values()])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size():
            raise ShapeError(f"flat vector has {vec.size} values, store holds {self.size()}")
        i = 0
        for e in self.entries.values():
            n = e.value.size
            e.value[...] = vec[i:i + n].reshape(e.value.shape)
            i += n

    def slices(self):
        """Map each name to its slice in :meth:`flat` order."""
        out, i = {}, 0
        for n, e in self.entries.items():
            out[n] = slice(i, i + e.value.size)
            i += e.value.size
        return out

    def copy(self):
        other = ParameterStore()
        for n, e in self.entries.items():
            other.entries[n] = Entry(e.value.copy(), e.grad.copy(), e.m.copy(), e.v.copy())
        other.step = self.step
        return other

    def all_zero(self):
        return all(not np.any(e.value) for e in self.entries.values())


# ---------------------------------------------------------------------------
# dense

def init_dense(store, prefix, n_in, n_out, rng, scale=None):
    if scale is None:
        scale = np.sqrt(6.0 / (n_in + n_out))
    store.add(prefix + ".W", rng.uniform(-scale, scale, size=(n_out, n_in)))
    store.add(prefix + ".b", np.zeros(n_out))


def dense(store, prefix, x):
    return x @ store[prefix + ".W"].T + store[prefix + ".b"]


def dense_backward(store, prefix, x, dy, grads):
    W = store[prefix + ".W"]
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads[prefix + ".W"] += dy2.T @ x2
    grads[prefix + ".b"] += dy2.sum(axis=0)
    return dy @ W


# ---------------------------------------------------------------------------
# GRU

def init_gru(store, prefix, n_in, n_hidden, rng):
    s_in = np.sqrt(6.0 / (n_in + n_hidden))
    s_h = np.sqrt(3.0 / n_hidden)
    for gate in "zrh":
        store.add(f"{prefix}.W{gate}", rng.uniform(-s_in, s_in, size=(n_hidden, n_in)))
        store.add(f"{prefix}.U{gate}", rng.uniform(-s_h, s_h, size=(n_hidden, n_hidden)))
        store.add(f"{prefix}.b{gate}", np.zeros(n_hidden))


def _gru_pack(store, prefix):
    p = {n: store[f"{prefix}.{n}"] for n in GRU_NAMES}
    W = np.concatenate([p["Wz"], p["Wr"], p["Wh"]])
    Uzr = np.concatenate([p["Uz"], p["Ur"]])
    b = np.concatenate([p["bz"], p["br"], p["bh"]])
    return W, Uzr, np.ascontiguousarray(p["Uh"]), b


def _gru_accumulate(prefix, X, Hs, R, dA, grads):
    T, B, H3 = dA.shape
    H = H3 // 3
    dA2 = dA.reshape(T * B, H3)
    dW = dA2.T @ X.reshape(T * B, -1)
    hprev = Hs[:-1].reshape(T * B, H)
    dUzr = dA2[:, :2 * H].T @ hprev
    dUh = dA2[:, 2 * H:].T @ (R.reshape(T * B, H) * hprev)
    db = dA2.sum(axis=0)
    for k, gate in enumerate("zrh"):
        grads[f"{prefix}.W{gate}"] += dW[k * H:(k + 1) * H]
        grads[f"{prefix}.b{gate}"] += db[k * H:(k + 1) * H]
    grads[f"{prefix}.Uz"] += dUzr[:H]
    grads[f"{prefix}.Ur"] += dUzr[H:]
    grads[f"{prefix}.Uh"] += dUh


def _gru_check(store, prefix, n_in, h):
    Wz = store[prefix + ".Wz"]
    if Wz.shape[1] != n_in or h.shape[-1] != Wz.shape[0]:
        raise ShapeError(
            f"{prefix}: expected input width {Wz.shape[1]} and state width {Wz.shape[0]}, "
            f"got {n_in} and {h.shape[-1]}")


def gru_sequence(store, prefix, X, h0):
    """Run the GRU over ``X`` of shape (T, B, I). Returns states (T+1, B, H)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    _gru_check(store, prefix, X.shape[2], h0)
    W, Uzr, Uh, b = _gru_pack(store, prefix)
    Hs, Z, R, HH = kernels.gru_seq_forward(X, h0, np.ascontiguousarray(W.T), b,
                                           np.ascontiguousarray(Uzr.T), np.ascontiguousarray(Uh.T))
    return Hs, (X, Hs, Z, R, HH)


def gru_sequence_backward(store, prefix, cache, dHs, grads):
    """``dHs`` has shape (T+1, B, H); returns (dX, dh0)."""
    X, Hs, Z, R, HH = cache
    W, Uzr, Uh, _ = _gru_pack(store, prefix)
    dA, dh0 = kernels.gru_seq_backward(Hs, Z, R, HH, np.ascontiguousarray(dHs), W, Uzr, Uh)
    _gru_accumulate(prefix, X, Hs, R, dA, grads)
    dX = (dA.reshape(-1, dA.shape[2]) @ W).reshape(X.shape)
    return dX, dh0


def gru_rollout(store, prefix, head, x0, h0, steps):
    """Autoregressive unroll: output ``t`` (dense ``head`` on the new state)
    is the input of step ``t + 1``. Returns outputs (steps, B, O)."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    _gru_check(store, prefix, x0.shape[1], h0)
    if store[head + ".W"].shape[0] != x0.shape[1]:
        raise ShapeError(f"{head}: output width must equal GRU input width for feedback")
    W, Uzr, Uh, b = _gru_pack(store, prefix)
    Wo = np.ascontiguousarray(store[head + ".W"])
    Inp, Hs, Z, R, HH, Y = kernels.gru_rollout_forward(
        x0, h0, int(steps), np.ascontiguousarray(W.T), b, np.ascontiguousarray(Uzr.T),
        np.ascontiguousarray(Uh.T), np.ascontiguousarray(Wo.T), store[head + ".b"])
    return Y, (Inp, Hs, Z, R, HH)


def gru_rollout_backward(store, prefix, head, cache, dY, grads):
    """Returns (dx0, dh0)."""
    Inp, Hs, Z, R, HH = cache
    W, Uzr, Uh, _ = _gru_pack(store, prefix)
    Wo = np.ascontiguousarray(store[head + ".W"])
    dA, dYe, dh0, dx0 = kernels.gru_rollout_backward(Hs, Z, R, HH, np.ascontiguousarray(dY), W, Uzr, Uh, Wo)
    _gru_accumulate(prefix, Inp, Hs, R, dA, grads)
    T, B, O = dYe.shape
    grads[head + ".W"] += dYe.reshape(T * B, O).T @ Hs[1:].reshape(T * B, -1)
    grads[head + ".b"] += dYe.reshape(T * B, O).sum(axis=0)
    return dx0, dh0


def gru_step(x, h, store, prefix):
    """Single GRU update for one vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    single = x.ndim == 1
    xb, hb = np.atleast_2d(x), np.atleast_2d(h)
    if xb.shape[0] != hb.shape[0]:
        raise ShapeError("batch sizes of x and h differ")
    Hs, cache = gru_sequence(store, prefix, xb[None], hb)
    out = Hs[1]
    return (out[0] if single else out), cache


def gru_step_backward(store, prefix, cache, dh_new, grads):
    """Returns (dx, dh) for a step computed by :func:`gru_step`."""
    dh_new = np.asarray(dh_new, dtype=np.float64)
    single = dh_new.ndim == 1
    dh2 = np.atleast_2d(dh_new)
    dHs = np.zeros((2,) + dh2.shape)
    dHs[1] = dh2
    dX, dh = gru_sequence_backward(store, prefix, cache, dHs, grads)
    dx = dX[0]
    return (dx[0], dh[0]) if single else (dx, dh)


# ---------------------------------------------------------------------------
# convolutional grid features

CONV_CHANNELS = (8, 16, 32)


def init_conv_features(store, prefix, n_out, rng):
    c_in = 1
    for i, c_out in enumerate(CONV_CHANNELS, 1):
        s = np.sqrt(6.0 / (c_in * 9 + c_out * 9))
        store.add(f"{prefix}.conv{i}.W", rng.uniform(-s, s, size=(c_out, c_in, 3, 3)))
        store.add(f"{prefix}.conv{i}.b", np.zeros(c_out))
        c_in = c_out
    init_dense(store, prefix + ".fc", CONV_CHANNELS[-1], n_out, rng)


def conv_grid_features(maps, store, prefix):
    """Three stride-2 3x3 conv layers with ReLU, global average pool, dense.

    ``maps`` is (B, 32, 32) or a single (32, 32) raster.
    """
    maps = np.asarray(maps, dtype=np.float64)
    single = maps.ndim == 2
    if single:
        maps = maps[None]
    if maps.shape[1:] != (32, 32):
        raise ShapeError(f"grid map must be 32x32, got {maps.shape[1:]}")
    x = maps[:, None]
    acts = [x]
    for i in range(1, len(CONV_CHANNELS) + 1):
        pre = kernels.conv_forward(np.ascontiguousarray(x), store[f"{prefix}.conv{i}.W"], store[f"{prefix}.conv{i}.b"])
        x = np.maximum(pre, 0.0)
        acts.append(x)
    pooled = x.mean(axis=(2, 3))
    feats = dense(store, prefix + ".fc", pooled)
    cache = (acts, pooled, single)
    return (feats[0] if single else feats), cache


def conv_grid_features_backward(store, prefix, cache, dfeats, grads):
    acts, pooled, single = cache
    dfeats = np.atleast_2d(dfeats)
    dpooled = dense_backward(store, prefix + ".fc", pooled, dfeats, grads)
    last = acts[-1]
    dx = np.broadcast_to(dpooled[:, :, None, None] / (last.shape[2] * last.shape[3]), last.shape).copy()
    for i in range(len(CONV_CHANNELS), 0, -1):
        dpre = dx * (acts[i] > 0.0)
        dxin, dW, db = kernels.conv_backward(np.ascontiguousarray(acts[i - 1]), store[f"{prefix}.conv{i}.W"],
                                             np.ascontiguousarray(dpre))
        grads[f"{prefix}.conv{i}.W"] += dW
        grads[f"{prefix}.conv{i}.b"] += db
        dx = dxin
    return dx[:, 0]


# ---------------------------------------------------------------------------
# sampling

def reparameterize(g, noise):
    """Return ``mu + sigma * noise``; d/dmu = 1, d/dsigma = noise."""
    mu = np.asarray(g.mu, dtype=np.float64)
    sigma = np.asarray(g.sigma, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu.shape or sigma.shape != mu.shape:
        raise ShapeError(f"noise shape {noise.shape} does not match latent shape {mu.shape}")
    if np.any(sigma < 0):
        raise ShapeError("sigma must be non-negative")
    return mu + sigma * noise


# ---------------------------------------------------------------------------
# optimizer

def optimizer_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; clears gradients afterwards."""
    for name, e in store.entries.items():
        if not np.all(np.isfinite(e.grad)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for e in store.entries.values():
        g = e.grad
        e.m *= beta1
        e.m += (1.0 - beta1) * g
        e.v *= beta2
        e.v += (1.0 - beta2) * g * g
        e.value -= lr * (e.m / c1) / (np.sqrt(e.v / c2) + eps)
        g[...] = 0.0
    return store


# ---------------------------------------------------------------------------
# gradient checking

def check_gradients(fn, point, h=1e-5, coords=None):
    """Max relative error between the analytic gradient and central differences.

    ``fn(point) -> (value, grad)``. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. ``coords`` restricts the
    finite-difference sweep to a subset of indices.
    """
    point = np.array(point, dtype=np.float64).ravel()
    value, grad = fn(point.copy())
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite value or gradient at the check point")
    idx = np.arange(point.size) if coords is None else np.asarray(coords, dtype=int)
    worst = 0.0
    for i in idx:
        p = point.copy()
        p[i] += h
        fp = fn(p)[0]
        p[i] = point[i] - h
        fm = fn(p)[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        num = (fp - fm) / (2.0 * h)
        err = abs(grad[i] - num) / max(1.0, abs(grad[i]))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, store, meta=None):
    """Write ``CMTS1`` magic, a JSON-lines manifest, then raw little-endian float64."""
    entries = []
    offset = 0
    blobs = []
    for name, e in store.entries.items():
        for kind, arr in (("value", e.value), ("m", e.m), ("v", e.v)):
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            blobs.append(blob)
            offset += len(blob)
    header = {"format": "cmts-checkpoint", "version": 1, "step": store.step,
              "tensors": len(entries), "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for rec in entries:
            fh.write((json.dumps(rec, sort_keys=True) + "\n").encode())
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a CMTS checkpoint (bad magic)")
        header = json.loads(fh.readline())
        if header.get("format") != "cmts-checkpoint":
            raise DataError(f"{path}: unexpected header {header!r}")
        if header.get("version") != 1:
            raise VersionError(f"{path}: unsupported checkpoint version {header.get('version')}")
        manifest = [json.loads(fh.readline()) for _ in range(header["tensors"])]
        payload = fh.read()
    store = ParameterStore()
    store.step = int(header["step"])
    for rec in manifest:
        n = int(np.prod(rec["shape"])) if rec["shape"] else 1
        start = rec["offset"]
        end = start + 8 * n
        if end > len(payload):
            raise DataError(f"{path}: truncated tensor {rec['name']}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").astype(np.float64).reshape(rec["shape"])
        if rec["kind"] == "value":
            store.add(rec["name"], arr)
        else:
            setattr(store.entries[rec["name"]], rec["kind"], arr.copy())
    return store, header["meta"]

