"""Generation: decode fused latents under a chosen map condition into
near-miss records, and assemble augmented corpora."""
import numpy as np

from . import model as cm
from .errors import DomainError, GenerationError, InputError
from .scenario_data import ScenarioRecord, Trajectory
from .training import interpolate_latent

STYLE_SOURCES = ("safe_map", "collision_map")


def _check_params(params):
    if params.all_zero():
        raise GenerationError("parameters are all zero; train or load a model before synthesizing")


def _style(grid_map, params, config):
    if not config.use_adain:
        return None
    return cm.encode_map_condition(grid_map, params, config)


def _decode_to_record(z, style, grid_map, params, config, dt, rec_id, label):
    Y = cm.decode_trajectory(z, style, params, config)
    wa, wb = cm.denormalize(Y, grid_map.center, config.scale)
    return ScenarioRecord(rec_id, Trajectory(wa, dt), Trajectory(wb, dt), grid_map, label)


def reconstruct(record, params, config, rng):
    """Encode, sample one latent from ``rng`` and decode under the record's own map."""
    _check_params(params)
    g = cm.encode_trajectory(record, params, config)
    z = g.mu + g.sigma * rng.standard_normal(config.D)
    return _decode_to_record(z, _style(record.map, params, config), record.map, params, config,
                             record.dt, f"{record.id}-rec", record.label)


def synthesize_near_miss(record_s, record_c, lam, style_source, params, config, rng):
    """Sample the interpolated latent at ``lam`` and decode it in the style map's frame."""
    if style_source not in STYLE_SOURCES:
        raise InputError(f"style_source must be one of {STYLE_SOURCES}, got {style_source!r}")
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    _check_params(params)
    gs = cm.encode_trajectory(record_s, params, config)
    gc = cm.encode_trajectory(record_c, params, config)
    gf = interpolate_latent(gs, gc, lam)
    z = gf.mu + gf.sigma * rng.standard_normal(config.D)
    grid_map = record_s.map if style_source == "safe_map" else record_c.map
    rec_id = f"syn|{record_s.id}|{record_c.id}|{lam:g}|{style_source}"
    return _decode_to_record(z, _style(grid_map, params, config), grid_map, params, config,
                             record_s.dt, rec_id, "synthetic")


def _encode_all(records, params, config, chunk=256):
    mus, sigs = [], []
    for i in range(0, len(records), chunk):
        X, _ = cm.prepare_inputs(records[i:i + chunk], config, with_maps=False)
        mu, ls, _ = cm.encode_forward(params, X)
        mus.append(mu)
        sigs.append(np.exp(ls))
    return np.concatenate(mus), np.concatenate(sigs)


def augment_dataset(dataset_s, dataset_c, lam, n, params, config, seed=0, chunk=256):
    """``n`` synthetic records from uniformly drawn (safe, collision, style) triples.

    Choices come from one stream seeded by ``seed``; each record's latent
    noise comes from its own stream, so the output does not depend on ``chunk``.
    """
    if len(dataset_s) == 0 or len(dataset_c) == 0:
        raise InputError("source datasets must be non-empty")
    if n < 1:
        raise InputError("n must be >= 1")
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    _check_params(params)
    rng = np.random.default_rng(seed)
    si = rng.integers(len(dataset_s), size=n)
    ci = rng.integers(len(dataset_c), size=n)
    st = rng.integers(2, size=n)
    mu_s, sig_s = _encode_all(dataset_s, params, config)
    mu_c, sig_c = _encode_all(dataset_c, params, config)
    noise = np.stack([np.random.default_rng([seed, i]).standard_normal(config.D) for i in range(n)])
    gf = interpolate_latent(cm.LatentGaussian(mu_s[si], sig_s[si]), cm.LatentGaussian(mu_c[ci], sig_c[ci]), lam)
    Z = gf.mu + gf.sigma * noise
    maps = [dataset_s[a].map if s == 0 else dataset_c[b].map for a, b, s in zip(si, ci, st)]

    out = []
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        if config.use_adain:
            cells = np.stack([m.cells for m in maps[lo:hi]]).astype(np.float64)
            smu, sls, _ = cm.map_forward(params, config, cells)
            Y, _ = cm.decode_forward(params, config, Z[lo:hi], smu, np.exp(sls))
        else:
            Y, _ = cm.decode_forward(params, config, Z[lo:hi])
        for j in range(hi - lo):
            k = lo + j
            rs, rc = dataset_s[si[k]], dataset_c[ci[k]]
            wa, wb = cm.denormalize(Y[j], maps[k].center, config.scale)
            rid = f"syn|{rs.id}|{rc.id}|{lam:g}|{STYLE_SOURCES[st[k]]}|{k}"
            out.append(ScenarioRecord(rid, Trajectory(wa, rs.dt), Trajectory(wb, rs.dt), maps[k], "synthetic"))
    return out


def provenance(record):
    """Source ids, λ and style source parsed from a synthetic record id."""
    parts = record.id.split("|")
    if len(parts) < 5 or parts[0] != "syn":
        raise InputError(f"{record.id!r} is not a synthetic record id")
    return {"safe_id": parts[1], "collision_id": parts[2], "lambda": float(parts[3]), "style_source": parts[4]}
