"""Command-line interface: ``tensordict {decompose,learn-filters,embed,benchmark}``.

Exit codes: 0 success, 1 usage or configuration error, 2 non-convergence,
3 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONCONVERGED = 2
EXIT_ACCEPTANCE = 3

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

_INT = {"type": "integer"}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _INT,
        "input": {"type": "string"},
        "output": {"type": "string"},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "sgd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": {"type": "number", "minimum": 0},
                "iters": {"type": "integer", "minimum": 1},
                "noise_scale": {"type": "number", "minimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "schedule": {"enum": ["constant", "inverse-t"]},
                "t_burn": {"type": "integer", "minimum": 0},
                "t_scale": {"type": "number", "exclusiveMinimum": 0},
                "per_column_noise": {"type": "boolean"},
                "record_every": {"type": "integer", "minimum": 1},
                "stop_at": {"type": ["number", "null"]},
            },
        },
        "als": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iters": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "pinv_cutoff": {"type": "number", "exclusiveMinimum": 0},
                "ridge": {"type": "number", "minimum": 0},
            },
        },
        "embed": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 2},
                "L": {"type": "integer", "minimum": 1},
                "kpool": {"type": "integer", "minimum": 1},
                "oov": {"enum": ["skip", "error"]},
                "restarts": {"type": "integer", "minimum": 1},
            },
        },
    },
}


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def load_config(path):
    """Read and schema-validate a RunConfig JSON file (``None`` gives ``{}``)."""
    import jsonschema

    if path is None:
        return {}
    if not os.path.isfile(path):
        raise UsageError("config file not found: %s" % path)
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError("config is not valid JSON: %s" % exc) from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise UsageError("invalid config at %s: %s" % (where, exc.message)) from None
    return cfg


def _seed(args, cfg):
    return args.seed if args.seed is not None else cfg.get("seed", 0)


def _out_dir(args, cfg):
    out = args.out or cfg.get("output")
    if not out:
        raise UsageError("an output path is required (--out)")
    return out


def _write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r.get(c, "") for c in columns])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- decompose -------------------------------------------------------------------

def cmd_decompose(args):
    import numpy as np

    from .benchmark import ICA_DECAY, SIMPLE_CONFIG
    from .saddle import SgdConfig, decompose, random_orthonormal

    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    seed = _seed(args, cfg)
    base = dict(SIMPLE_CONFIG if args.mode == "simple" else ICA_DECAY)
    base.update(cfg.get("sgd", {}))
    tolerance = cfg.get("tolerance", base.get("stop_at") or (0.05 if args.mode == "simple" else 0.1))
    try:
        config = SgdConfig(seed=seed, **base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rng = np.random.default_rng(seed)
    A = random_orthonormal(args.d, rng)
    res = decompose(A, args.mode, config, rng)
    converged = res.final_error is not None and res.final_error <= tolerance
    os.makedirs(out, exist_ok=True)
    np.savetxt(os.path.join(out, "components.csv"), res.U, delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(out, "truth.csv"), A, delimiter=",", fmt="%.17g")
    _write_rows(os.path.join(out, "trace.csv"), res.trace, ["iter", "objective", "recon_error"])
    _write_json(os.path.join(out, "report.json"), {
        "mode": args.mode, "d": args.d, "seed": seed, "iterations": res.iterations,
        "final_recon_error": res.final_error, "tolerance": tolerance, "converged": converged,
        "config": base,
    })
    print("iterations=%d final_recon_error=%.6g converged=%s"
          % (res.iterations, res.final_error, converged))
    return EXIT_OK if converged else EXIT_NONCONVERGED


# --- learn-filters ---------------------------------------------------------------

def parse_plant(text):
    """``"n=8,L=2,act=poisson:0.5,N=100000"`` -> dict."""
    spec = {"n": 8, "L": 2, "act": "poisson:0.5", "N": 100000}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise UsageError("bad --plant item %r (expected key=value)" % item)
        key, val = item.split("=", 1)
        if key not in spec:
            raise UsageError("unknown --plant key %r" % key)
        spec[key] = val if key == "act" else int(float(val))
    return spec


def cmd_learn_filters(args):
    import numpy as np

    from .baseline import alt_min_baseline
    from .convals import AlsConfig, FilterBank, ct_als, filter_recovery_error
    from .cumulant import ActivationSpec, SampleSet, synth_conv_ica, third_cumulant

    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    seed = _seed(args, cfg)
    rng = np.random.default_rng(seed)
    truth = None
    plant = parse_plant(args.plant) if args.plant else None
    n = args.n if args.n is not None else (plant["n"] if plant else None)
    L = args.L if args.L is not None else (plant["L"] if plant else None)
    if L is not None and n is not None and L >= n:
        raise UsageError("requires nL<n² or L<n (got n=%d, L=%d)" % (n, L))
    inp = args.input or cfg.get("input")
    if plant:
        if plant["L"] >= plant["n"]:
            raise UsageError("requires nL<n² or L<n (got n=%d, L=%d)" % (plant["n"], plant["L"]))
        truth = FilterBank.random(plant["L"], plant["n"], rng)
        try:
            act = ActivationSpec.parse(plant["act"])
        except (ValueError, IndexError) as exc:
            raise UsageError("bad activation spec: %s" % exc) from None
        samples, _ = synth_conv_ica(truth, act, plant["N"], rng)
        n, L = plant["n"], plant["L"]
    elif inp:
        if not os.path.isfile(inp):
            raise UsageError("input not found: %s" % inp)
        samples = SampleSet.load(inp)
        if n is not None and samples.n != n:
            raise UsageError("--n %d does not match input length %d" % (n, samples.n))
        n = samples.n
    else:
        raise UsageError("need --input or --plant")
    if L is None:
        raise UsageError("--L is required")
    if L >= n:
        raise UsageError("requires nL<n² or L<n (got n=%d, L=%d)" % (n, L))
    try:
        als = AlsConfig(seed=seed, **cfg.get("als", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    init = FilterBank.random(L, n, rng).filters
    ct = ct_als(third_cumulant(samples), L, als, init=(init, init, init), truth=truth)
    os.makedirs(out, exist_ok=True)
    ct.F.to_csv(os.path.join(out, "filters_ct.csv"))
    cols = ["iter", "recon_error", "change", "seconds"] + (["recovery_error"] if truth else [])
    _write_rows(os.path.join(out, "trace_ct.csv"), ct.trace, cols)
    report = {"n": n, "L": L, "N": samples.N, "seed": seed,
              "ct": {"iterations": ct.iterations, "converged": ct.converged,
                     "final_recon_error": ct.trace[-1]["recon_error"] if ct.trace else None}}
    if truth is not None:
        truth.to_csv(os.path.join(out, "filters_truth.csv"))
        report["ct"]["recovery_error"] = filter_recovery_error(ct.F, truth)
        report["plant"] = plant
    if args.baseline == "altmin":
        am = alt_min_baseline(samples, L, als, init=init, truth=truth)
        am.filters.to_csv(os.path.join(out, "filters_altmin.csv"))
        cols = ["iter", "objective", "change", "seconds"] + (["recovery_error"] if truth else [])
        _write_rows(os.path.join(out, "trace_altmin.csv"), am.trace, cols)
        report["altmin"] = {"iterations": len(am.trace),
                            "final_objective": am.trace[-1]["objective"] if am.trace else None}
        if truth is not None:
            report["altmin"]["recovery_error"] = filter_recovery_error(am.filters, truth)
            report["ct_better"] = report["ct"]["recovery_error"] < report["altmin"]["recovery_error"]
    _write_json(os.path.join(out, "report.json"), report)
    print(json.dumps({k: v for k, v in report.items() if k in ("ct", "altmin", "ct_better")}))
    return EXIT_OK if ct.converged else EXIT_NONCONVERGED


# --- embed -----------------------------------------------------------------------

def _embed_train(args):
    from .convals import AlsConfig
    from .embed import Vocab, read_corpus, train_embed_model

    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    if not args.corpus or not os.path.isfile(args.corpus):
        raise UsageError("corpus file not found: %s" % args.corpus)
    ecfg = dict(cfg.get("embed", {}))
    for key in ("k", "n", "L", "kpool"):
        if getattr(args, key) is not None:
            ecfg[key] = getattr(args, key)
    corpus = read_corpus(args.corpus)
    if not corpus:
        raise UsageError("corpus is empty")
    try:
        als = AlsConfig(**cfg.get("als", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    model = train_embed_model(corpus, Vocab.from_corpus(corpus), als_config=als,
                              seed=_seed(args, cfg), **ecfg)
    model.save(out)
    print("trained k=%d n=%d L=%d kpool=%d active=%d/%d -> %s"
          % (model.k, model.n, model.L, model.kpool, sum(model.active), model.k, out))
    return EXIT_OK


def _format_row(values):
    return ",".join("%.12g" % v for v in values)


def _embed_apply(args):
    import numpy as np

    from .embed import EmbedModel, ModelNotTrainedError, discretize_similarity, embed, pair_features

    if args.sts_discretize is not None:
        try:
            K1, K2 = (int(x) for x in args.range.split(":"))
        except ValueError:
            raise UsageError("--range must look like K1:K2") from None
        p = discretize_similarity(args.sts_discretize, K1, K2)
        print(_format_row(p))
        return EXIT_OK
    if not args.model:
        raise UsageError("--model is required")
    try:
        model = EmbedModel.load(args.model)
    except ModelNotTrainedError as exc:
        raise UsageError(str(exc)) from None
    if not args.corpus or not os.path.isfile(args.corpus):
        raise UsageError("corpus file not found: %s" % args.corpus)
    if not args.out:
        raise UsageError("an output path is required (--out)")
    with open(args.corpus, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = []
    for line in lines:
        if args.pairs:
            if "\t" not in line:
                raise UsageError("--pairs expects tab-separated sentence pairs")
            left, right = line.split("\t", 1)
            rows.append(pair_features(embed(left.split(), model), embed(right.split(), model),
                                      norm=args.pair_norm))
        else:
            rows.append(embed(line.split(), model))
    with open(args.out, "w") as fh:
        for r in rows:
            fh.write(_format_row(np.asarray(r)) + "\n")
    print("wrote %d rows to %s" % (len(rows), args.out))
    return EXIT_OK


def cmd_embed(args):
    return _embed_train(args) if args.action == "train" else _embed_apply(args)


# --- benchmark -------------------------------------------------------------------

def cmd_benchmark(args):
    from .benchmark import run_benchmark, select, write_report

    try:
        select(args.only)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    results = run_benchmark(args.only, log=print)
    summary = write_report(results, args.out)
    if summary["failures"]:
        print("failed criteria: %s" % ", ".join(map(str, summary["failures"])))
        return EXIT_ACCEPTANCE
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="tensordict", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap on BLAS/OpenMP threads (fallback: TENSORDICT_THREADS)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS)

    d = sub.add_parser("decompose", help="orthogonal 4th-order decomposition by noisy SGD")
    common(d)
    d.add_argument("--mode", choices=["simple", "ica"], required=True)
    d.add_argument("--d", type=int, default=10)
    d.add_argument("--out")
    d.set_defaults(func=cmd_decompose)

    lf = sub.add_parser("learn-filters", help="CT-ALS filter learning from samples")
    common(lf)
    lf.add_argument("--n", type=int)
    lf.add_argument("--L", type=int)
    lf.add_argument("--input", help="SampleSet (.dtns or .csv, n x N)")
    lf.add_argument("--plant", help="synthetic instance, e.g. n=8,L=2,act=poisson:0.5,N=100000")
    lf.add_argument("--baseline", choices=["altmin"])
    lf.add_argument("--out")
    lf.set_defaults(func=cmd_learn_filters)

    e = sub.add_parser("embed", help="train or apply sequence embeddings")
    common(e)
    e.add_argument("action", choices=["train", "apply"])
    e.add_argument("--corpus")
    e.add_argument("--model")
    e.add_argument("--k", type=int)
    e.add_argument("--n", type=int)
    e.add_argument("--L", type=int)
    e.add_argument("--kpool", type=int)
    e.add_argument("--out")
    e.add_argument("--pairs", action="store_true",
                   help="corpus lines are tab-separated pairs; emit pair features")
    e.add_argument("--pair-norm", action="store_true",
                   help="use the scalar norm instead of the elementwise absolute difference")
    e.add_argument("--sts-discretize", type=float, metavar="TAU")
    e.add_argument("--range", default="0:5", help="rating range K1:K2 for --sts-discretize")
    e.set_defaults(func=cmd_embed)

    b = sub.add_parser("benchmark", help="run the acceptance suite")
    b.add_argument("--only", help="comma-separated groups (saddle, conv, embed) or criterion ids")
    b.add_argument("--out", default="benchmark_report")
    b.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    b.set_defaults(func=cmd_benchmark)
    return p


def _apply_threads(n):
    if n is None:
        env = os.environ.get("TENSORDICT_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be >= 1")
        for var in THREAD_VARS:
            os.environ[var] = str(n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(getattr(args, "threads", None))
        return args.func(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        # DivergenceError, DegenerateBlockError: the run did not converge
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ValueError, KeyError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
