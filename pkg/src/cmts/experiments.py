"""End-to-end evaluation protocols shared by the CLI and the acceptance suite:
lines interpolation quality, dataset complexity and downstream prediction."""
import math

import numpy as np

from . import model as cm
from . import predictor as pr
from .metrics import DpgmmConfig, dpgmm_cluster_count, lines_interpolation_metrics
from .scenario_data import generate_lines_corpus
from .synthesis import augment_dataset
from .training import LossWeights, TrainConfig, train


def encode_means(records, params, config, chunk=256):
    out = []
    for i in range(0, len(records), chunk):
        X, _ = cm.prepare_inputs(records[i:i + chunk], config, with_maps=False)
        mu, _, _ = cm.encode_forward(params, X)
        out.append(mu)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# lines

def lines_model_config(use_fusion_loss, T=16):
    # unit-length lines: scale 1 keeps normalized coordinates O(0.5)
    return cm.ModelConfig(T=T, scale=1.0, use_adain=False, use_fusion_loss=use_fusion_loss)


def centered_lines(records, config):
    return np.stack([cm.normalize_record(r, config.scale)[0][:, :2] / config.scale for r in records])


def interpolate_pair(params, config, rec_a, rec_b, n_steps=10):
    """Decode the latent-mean path from ``rec_a`` to ``rec_b``; (n_steps, T, 2), centered frame."""
    X, _ = cm.prepare_inputs([rec_a, rec_b], config, with_maps=False)
    mu, _, _ = cm.encode_forward(params, X)
    lam = np.linspace(0.0, 1.0, n_steps)[:, None]
    Z = (1.0 - lam) * mu[0] + lam * mu[1]
    Y, _ = cm.decode_forward(params, config, Z)
    return Y[:, :, :2] / config.scale


def pick_pairs(records, n_pairs, seed, min_sep=math.pi / 6, max_sep=5 * math.pi / 6):
    """Random index pairs whose endpoint angles differ by an unambiguous amount."""
    ang = np.array([math.atan2(r.traj_a.waypoints[-1, 1], r.traj_a.waypoints[-1, 0]) for r in records])
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n_pairs:
        i, j = rng.integers(len(records), size=2)
        sep = abs((ang[i] - ang[j] + math.pi) % (2 * math.pi) - math.pi)
        if min_sep <= sep <= max_sep:
            pairs.append((int(i), int(j)))
    return pairs


def evaluate_lines(params, config, corpus, n_pairs=50, n_steps=10, seed=0):
    ref = centered_lines(corpus, config)
    md, sm = [], []
    for i, j in pick_pairs(corpus, n_pairs, seed):
        seq = interpolate_pair(params, config, corpus[i], corpus[j], n_steps)
        d, s = lines_interpolation_metrics(seq, ref)
        md.append(d)
        sm.append(s)
    return {"mean_distance": float(np.mean(md)), "smoothness": float(np.mean(sm)),
            "mean_distance_all": md, "smoothness_all": sm}


def lines_experiment(n_lines=2000, epochs=30, seed=0, n_pairs=50, n_steps=10, weights=None, progress=None):
    """Train the vanilla ablation and the fusion-regularized model (both
    without AdaIN) on one lines corpus with the same budget and score both."""
    corpus = generate_lines_corpus(n_lines, seed=seed)
    results = {}
    for name, fusion in (("vanilla", False), ("cmts_no_adain", True)):
        mc = lines_model_config(fusion)
        tc = TrainConfig(epochs=epochs, seed=seed, weights=weights or LossWeights())
        store, log = train(corpus, corpus, tc, mc, progress=progress)
        res = evaluate_lines(store, mc, corpus, n_pairs, n_steps, seed + 1)
        res["final_loss"] = log[-1]["total"]
        res["train_seconds"] = float(sum(e["wall_seconds"] for e in log))
        results[name] = res
    return results


# ---------------------------------------------------------------------------
# complexity

def complexity_experiment(params, config, safe, collision, seeds=range(5), n_syn=256, lam=0.3,
                          control=None, dpgmm=None):
    """Cluster counts of OD, CD, CMTS and OD + CMTS codes (the union) per seed.

    ``control`` is an extra safe corpus of the synthetic set's size; its union
    with OD separates new structure from the growth of K with sample count.
    """
    dp = dpgmm or DpgmmConfig()
    od = encode_means(safe, params, config)
    cd = encode_means(collision, params, config)
    ctl = encode_means(control, params, config) if control else None
    rows = []
    for s in seeds:
        syn = augment_dataset(safe, collision, lam, n_syn, params, config, seed=s)
        sc = encode_means(syn, params, config)
        row = {"seed": int(s),
               "OD": dpgmm_cluster_count(od, dp, seed=s).K,
               "CD": dpgmm_cluster_count(cd, dp, seed=s).K,
               "CMTS": dpgmm_cluster_count(sc, dp, seed=s).K,
               "OD+CMTS": dpgmm_cluster_count(np.concatenate([od, sc]), dp, seed=s).K}
        if ctl is not None:
            row["OD+OD'"] = dpgmm_cluster_count(np.concatenate([od, ctl]), dp, seed=s).K
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# prediction

def prediction_experiment(params, config, safe, collision, safe_test, risky_test, seeds=range(5),
                          n_syn=256, lam=0.3, pconfig=None):
    """Predictors on OD and on OD + synthesized records under one step budget."""
    base = pconfig or pr.PredictorConfig()
    rows = []
    for s in seeds:
        syn = augment_dataset(safe, collision, lam, n_syn, params, config, seed=s)
        pc = pr.PredictorConfig(**{**base.to_dict(), "seed": int(s)})
        row = {"seed": int(s)}
        for name, data in (("OD", list(safe)), ("OD+CMTS", list(safe) + syn)):
            p = pr.train_predictor(data, pc)
            rep = pr.evaluate_predictor(p, safe_test, risky_test, pc)
            row[name] = {k: v["mean"] for k, v in rep.summaries.items()}
        rows.append(row)
    return rows
