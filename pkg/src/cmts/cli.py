"""Command-line entry point: ``cmts <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric error.
"""
import argparse
import json
import sys

import numpy as np

from . import _accel
from . import config as cfgmod
from . import experiments as ex
from . import model as cm
from . import numeric as nm
from . import predictor as pr
from . import scenario_data as sd
from . import synthesis as sy
from . import training as tr
from .errors import CMTSError, DataError, InputError, NumericError
from .metrics import MetricReport
from .plot import plot as plot_svg

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, out_required=True, out_help="output path"):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--config", default=None, help="sectioned key=value config file")
    p.add_argument("--out", required=out_required, default=None, help=out_help)


def _load(path, what):
    try:
        return sd.load_dataset(path)
    except FileNotFoundError:
        raise InputError(f"{what} file not found: {path}") from None


def _report_out(args, payload):
    text = json.dumps(payload, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_safe(args, st):
    mix = None
    if args.layout_mix:
        mix = {}
        for part in args.layout_mix.split(","):
            k, _, v = part.partition("=")
            mix[k.strip()] = float(v) if v else 1.0
    recs = sd.generate_safe_corpus(args.n, mix, seed=args.seed, T=st.data.T, dt=st.data.dt)
    sd.store_dataset(recs, args.out)
    print(f"wrote {len(recs)} safe records to {args.out}")


def cmd_gen_collision(args, st):
    safe = _load(args.safe, "safe dataset")
    if not safe:
        raise InputError("safe dataset is empty")
    recs = sd.generate_collision_corpus(safe, seed=args.seed)
    sd.store_dataset(recs, args.out)
    print(f"wrote {len(recs)} collision records to {args.out}")


def cmd_gen_lines(args, st):
    recs = sd.generate_lines_corpus(args.n, T=args.T or st.data.lines_T, seed=args.seed)
    sd.store_dataset(recs, args.out)
    print(f"wrote {len(recs)} line records to {args.out}")


def cmd_gen_risky(args, st):
    recs = sd.generate_risky_scenarios(args.per_template, seed=args.seed, T=st.data.T, dt=st.data.dt)
    sd.store_dataset(recs, args.out)
    print(f"wrote {len(recs)} risky records to {args.out}")


def cmd_perturb(args, st):
    src = _load(args.input, "input dataset")
    if not src:
        raise InputError("input dataset is empty")
    mag = st.data.perturb_magnitude if args.magnitude is None else args.magnitude
    recs = [sd.perturb_record(r, mag, args.seed, i) for i, r in enumerate(src)]
    sd.store_dataset(recs, args.out)
    print(f"wrote {len(recs)} perturbed records to {args.out}")


def cmd_train(args, st):
    safe = _load(args.safe, "safe dataset")
    col = _load(args.collision, "collision dataset")
    mc = st.model
    if args.no_adain or args.no_fusion:
        mc = cm.ModelConfig(**{**mc.to_dict(), "use_adain": mc.use_adain and not args.no_adain,
                               "use_fusion_loss": mc.use_fusion_loss and not args.no_fusion})
    if safe and safe[0].T != mc.T:
        mc = cm.ModelConfig(**{**mc.to_dict(), "T": safe[0].T})
    tc = st.train
    over = {"seed": args.seed}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    tc = tr.TrainConfig(**{**tc.to_dict(), **over})
    quiet = args.quiet

    def progress(e):
        if not quiet:
            print(f"epoch {e['epoch']:4d}  total {e['total']:.6f}  Lr {e['Lr_s']:.5f}/{e['Lr_c']:.5f}  "
                  f"KL {e['KL_s']:.3f}/{e['KL_c']:.3f}  Lf {e['Lf']:.5f}", flush=True)

    tr.train(safe, col, tc, mc, log_path=args.log, checkpoint_path=args.out, progress=progress)
    print(f"saved model to {args.out}")


def cmd_synthesize(args, st):
    params, mc = tr.load_model(args.model)
    safe = _load(args.safe, "safe dataset")
    col = _load(args.collision, "collision dataset")
    lam = st.synthesize.lam if args.lam is None else args.lam
    n = st.synthesize.n if args.n is None else args.n
    style = args.style or st.synthesize.style_source
    if style == "random":
        recs = sy.augment_dataset(safe, col, lam, n, params, mc, seed=args.seed)
    else:
        if not safe or not col:
            raise InputError("source datasets must be non-empty")
        rng = np.random.default_rng(args.seed)
        recs = []
        for i in range(n):
            rs = safe[int(rng.integers(len(safe)))]
            rc = col[int(rng.integers(len(col)))]
            recs.append(sy.synthesize_near_miss(rs, rc, lam, style, params, mc,
                                                np.random.default_rng([args.seed, i])))
    sd.store_dataset(recs, args.out)
    print(f"wrote {len(recs)} synthetic records to {args.out}")


def _parse_named(specs):
    out = []
    for s in specs:
        name, sep, paths = s.partition("=")
        if not sep:
            raise UsageError(f"--dataset expects NAME=path[,path...], got {s!r}")
        out.append((name, paths.split(",")))
    return out


def cmd_eval_complexity(args, st):
    from .metrics import dpgmm_cluster_count
    params, mc = tr.load_model(args.model)
    named = _parse_named(args.dataset)
    seeds = range(args.seed, args.seed + args.repeats)
    result = {}
    for name, paths in named:
        recs = [r for p in paths for r in _load(p, name)]
        if len(recs) < 2:
            raise InputError(f"dataset {name!r} needs at least 2 records")
        codes = ex.encode_means(recs, params, mc)
        ks = [dpgmm_cluster_count(codes, st.metrics, seed=s).K for s in seeds]
        result[name] = {"K": ks, "mean": float(np.mean(ks)), "std": float(np.std(ks)), "n": len(recs)}
        print(f"{name:<24} K = {np.mean(ks):7.2f} +- {np.std(ks):5.2f}   (n = {len(recs)}, runs = {len(ks)})")
    _report_out(args, {"format": "cmts-complexity", "version": 1, "results": result})


def cmd_eval_lines(args, st):
    params, mc = tr.load_model(args.model)
    corpus = _load(args.lines, "lines corpus")
    if len(corpus) < 2:
        raise InputError("lines corpus needs at least 2 records")
    res = ex.evaluate_lines(params, mc, corpus, args.pairs, args.steps, args.seed)
    rep = MetricReport(datasets=[args.lines])
    rep.add("mean_distance", res["mean_distance_all"])
    rep.add("smoothness", res["smoothness_all"])
    print(rep.table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json() + "\n")


def cmd_predict_train(args, st):
    recs = [r for p in args.train for r in _load(p, "training dataset")]
    pc = st.predictor
    over = {"seed": args.seed}
    if args.steps is not None:
        over["steps"] = args.steps
    pc = pr.PredictorConfig(**{**pc.to_dict(), **over})
    params = pr.train_predictor(recs, pc)
    nm.save_checkpoint(args.out, params, {"kind": "cmts-predictor", "predictor": pc.to_dict()})
    print(f"saved predictor ({len(recs)} training records, {pc.steps} steps) to {args.out}")


def cmd_predict_eval(args, st):
    params, meta = nm.load_checkpoint(args.model)
    if meta.get("kind") != "cmts-predictor":
        raise DataError(f"{args.model} is not a predictor checkpoint")
    pc = pr.PredictorConfig.from_dict(meta["predictor"])
    rep = pr.evaluate_predictor(params, _load(args.safe_test, "safe test set"),
                                _load(args.risky_test, "risky test set"), pc)
    print(rep.table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json() + "\n")


def cmd_plot(args, st):
    recs = _load(args.input, "input dataset")
    if args.limit is not None:
        recs = recs[:args.limit]
    plot_svg(recs, args.out, ncols=args.cols)
    print(f"wrote {len(recs)} panel(s) to {args.out}")


def cmd_gradcheck(args, st):
    mc = cm.ModelConfig(**{**st.model.to_dict(), "D": args.D})
    safe = sd.generate_safe_corpus(args.pairs, seed=args.seed, T=mc.T)
    col = sd.generate_collision_corpus(safe, seed=args.seed)
    store = cm.init_params(mc, args.seed)
    # zero-initialized conv biases put ReLU inputs exactly on the kink over blank
    # map regions; jitter moves the check point to where the loss is smooth
    point = store.flat() + args.jitter * np.random.default_rng([args.seed, 7]).standard_normal(store.size())
    fn = tr.flat_loss_fn(store, safe, col, st.train.weights, mc, args.seed)
    coords = tr.sample_coords(store, args.per_tensor, args.seed)
    err = nm.check_gradients(fn, point, coords=coords)
    verdict = "PASS" if err < args.tol else "FAIL"
    print(f"max relative gradient error {err:.3e} over {len(coords)} coordinates "
          f"({store.size()} parameters): {verdict}")
    _report_out(args, {"max_relative_error": err, "coordinates": int(len(coords)), "tolerance": args.tol})
    if err >= args.tol:
        raise NumericError(f"gradient error {err:.3e} exceeds {args.tol:g}")


# ---------------------------------------------------------------------------

def build_parser():
    p = Parser(prog="cmts", description="Near-miss trajectory synthesis pipeline.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("gen-safe", help="generate a safe two-vehicle corpus")
    _common(s)
    s.add_argument("--n", type=int, default=256, help="number of records")
    s.add_argument("--layout-mix", default=None, help="e.g. straight=1,intersection=2,curve=1")
    s.set_defaults(func=cmd_gen_safe)

    s = sub.add_parser("gen-collision", help="translate safe pairs onto shared collision points")
    _common(s)
    s.add_argument("--safe", required=True, help="safe dataset")
    s.set_defaults(func=cmd_gen_collision)

    s = sub.add_parser("gen-lines", help="generate the unit-line corpus")
    _common(s)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--T", type=int, default=None, help="waypoints per line (default from config, 16)")
    s.set_defaults(func=cmd_gen_lines)

    s = sub.add_parser("gen-risky", help="generate near-miss test scenarios for every template")
    _common(s)
    s.add_argument("--per-template", type=int, default=20)
    s.set_defaults(func=cmd_gen_risky)

    s = sub.add_parser("perturb", help="midpoint-perturbation baseline")
    _common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--magnitude", type=float, default=None, help="max midpoint displacement (m)")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("train", help="train the conditional model")
    _common(s, out_help="checkpoint path")
    s.add_argument("--safe", required=True)
    s.add_argument("--collision", required=True)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--log", default=None, help="per-epoch log (JSON lines)")
    s.add_argument("--no-adain", action="store_true", help="drop the map condition")
    s.add_argument("--no-fusion", action="store_true", help="drop the fusion-consistency term")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", help="generate near-miss records from a trained model")
    _common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--safe", required=True)
    s.add_argument("--collision", required=True)
    s.add_argument("--lam", type=float, default=None, help="interpolation weight (default 0.3)")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--style", choices=("random", "safe_map", "collision_map"), default=None)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("eval-complexity", help="DPGMM cluster counts of encoded datasets")
    _common(s, out_required=False, out_help="optional JSON report")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", action="append", required=True, help="NAME=path[,path...] (repeatable)")
    s.add_argument("--repeats", type=int, default=5)
    s.set_defaults(func=cmd_eval_complexity)

    s = sub.add_parser("eval-lines", help="interpolation Mean Distance and Smoothness on lines")
    _common(s, out_required=False, out_help="optional JSON report")
    s.add_argument("--model", required=True)
    s.add_argument("--lines", required=True)
    s.add_argument("--pairs", type=int, default=50)
    s.add_argument("--steps", type=int, default=10)
    s.set_defaults(func=cmd_eval_lines)

    s = sub.add_parser("predict-train", help="train the recurrent predictor")
    _common(s, out_help="checkpoint path")
    s.add_argument("--train", action="append", required=True, help="dataset (repeatable)")
    s.add_argument("--steps", type=int, default=None)
    s.set_defaults(func=cmd_predict_train)

    s = sub.add_parser("predict-eval", help="MSE on safe data, MDV/MDN on risky scenarios")
    _common(s, out_required=False, out_help="optional JSON report")
    s.add_argument("--model", required=True)
    s.add_argument("--safe-test", required=True)
    s.add_argument("--risky-test", required=True)
    s.set_defaults(func=cmd_predict_eval)

    s = sub.add_parser("plot", help="render records to SVG")
    _common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--limit", type=int, default=None)
    s.add_argument("--cols", type=int, default=4)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    _common(s, out_required=False, out_help="optional JSON report")
    s.add_argument("--pairs", type=int, default=4)
    s.add_argument("--D", type=int, default=32)
    s.add_argument("--per-tensor", type=int, default=4, help="coordinates sampled per tensor")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--jitter", type=float, default=1e-2, help="std of the random offset added to initial parameters")
    s.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _accel.apply_thread_cap()
        st = cfgmod.load_settings(args.config)
        args.func(args, st)
    except UsageError as exc:
        print(f"cmts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"cmts: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CMTSError, OSError, ValueError) as exc:
        print(f"cmts: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
