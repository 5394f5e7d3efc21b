"""Desk-scale acceptance benchmark.

Each criterion runner returns a :class:`CriterionResult` with the measured
quantities, the pass flag and any plot-ready curves.  :func:`run_benchmark`
executes a selection of them and :func:`write_report` emits
``report.json``, ``report.md`` and one CSV per curve.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .baseline import alt_min_baseline
from .convals import (AlsConfig, FilterBank, block_unitary, ct_als,
                      filter_recovery_error, psi_build, psi_pinv)
from .cumulant import (ActivationSpec, cumulant_from_model, model_lambdas, relative_error,
                       synth_conv_ica, third_cumulant)
from .embed import (Vocab, deconv_decode, discretize_similarity, embed, expected_rating,
                    synthesize, train_embed_model)
from .saddle import (SgdConfig, decompose, loss_ica, random_orthonormal, stoch_grad_ica)

SEEDS = tuple(range(10))

# criterion 1: simple oracle
SIMPLE_CONFIG = dict(eta=3e-3, iters=10000, batch=1, record_every=50, stop_at=0.05)
# criterion 2: ICA oracle, constant rate then slow inverse-t decay
ICA_CONSTANT = dict(eta=3e-3, iters=10000, batch=100, record_every=100)
ICA_DECAY = dict(ICA_CONSTANT, schedule="inverse-t", t_burn=2000, t_scale=1000.0)

TOY_CORPUS = (
    "the cat sat on the mat",
    "a cat sat on a mat",
    "the dog sat on the rug",
    "a dog lay on the mat",
    "the cat lay on a rug",
    "stocks fell sharply today",
    "markets fell sharply again",
    "stocks rose sharply today",
    "markets rose slowly today",
    "prices fell slowly again",
)


@dataclass
class CriterionResult:
    id: int
    name: str
    group: str
    passed: bool
    measured: dict
    seconds: float = 0.0
    curves: dict = field(default_factory=dict)

    def summary(self):
        return {"id": self.id, "name": self.name, "group": self.group, "passed": self.passed,
                "measured": self.measured, "seconds": round(self.seconds, 3)}


def _curve(rows, keys):
    return {"columns": list(keys), "rows": [[r[k] for k in keys] for r in rows]}


# --- saddle-sgd ----------------------------------------------------------------

def criterion_1(seeds=SEEDS, d=10):
    """Simple oracle converges to error <= 0.05 within 10000 iterations in >= 9/10 seeds."""
    t0 = time.perf_counter()
    finals, iters, rows = [], [], []
    for s in seeds:
        rng = np.random.default_rng(s)
        A = random_orthonormal(d, rng)
        res = decompose(A, "simple", SgdConfig(seed=s, **SIMPLE_CONFIG), rng)
        finals.append(res.final_error)
        iters.append(res.iterations)
        rows += [{"seed": s, **e} for e in res.trace]
    secs = time.perf_counter() - t0
    ok = sum(f <= 0.05 for f in finals)
    measured = {"converged_seeds": ok, "seeds": len(seeds), "final_errors": finals,
                "iterations": iters, "total_seconds": secs}
    passed = ok >= 9 * len(seeds) / 10 and secs < 60
    return CriterionResult(1, "orthogonal decomposition convergence (simple oracle)", "saddle",
                           passed, measured, secs,
                           {"saddle_simple": _curve(rows, ["seed", "iter", "recon_error"])})


def criterion_2(seeds=SEEDS, d=10):
    """With decay, final error < 0.1 and below the constant-rate plateau in >= 8/10 seeds."""
    t0 = time.perf_counter()
    wins, rows, detail = 0, [], []
    for s in seeds:
        A = random_orthonormal(d, np.random.default_rng(s))
        U0 = np.random.default_rng([s, 1]).standard_normal((d, d))
        const = decompose(A, "ica", SgdConfig(**ICA_CONSTANT), np.random.default_rng([s, 2]), U0)
        decay = decompose(A, "ica", SgdConfig(**ICA_DECAY), np.random.default_rng([s, 2]), U0)
        half = ICA_CONSTANT["iters"] // 2
        plateau = float(np.mean([e["recon_error"] for e in const.trace if e["iter"] >= half]))
        final = decay.final_error
        win = final < 0.1 and final < plateau
        wins += win
        detail.append({"seed": s, "plateau": plateau, "final_decay": final, "win": bool(win)})
        rows += [{"seed": s, "schedule": "constant", **e} for e in const.trace]
        rows += [{"seed": s, "schedule": "inverse-t", **e} for e in decay.trace]
    secs = time.perf_counter() - t0
    measured = {"wins": wins, "seeds": len(seeds), "per_seed": detail}
    return CriterionResult(2, "ICA pipeline with step-size decay", "saddle",
                           wins >= 8 * len(seeds) / 10, measured, secs,
                           {"saddle_ica": _curve(rows, ["seed", "schedule", "iter", "recon_error"])})


def criterion_7(trials=20, d=6, k=4, h=1e-5):
    """Central finite differences of the explicit loss against ``stoch_grad_ica``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(trials):
        U = rng.standard_normal((d, k))
        y = rng.standard_normal(d)
        G = stoch_grad_ica(U, y)
        fd = np.zeros_like(U)
        for idx in np.ndindex(*U.shape):
            E = np.zeros_like(U)
            E[idx] = h
            fd[idx] = (loss_ica(U + E, y) - loss_ica(U - E, y)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(G - fd) / np.linalg.norm(fd)))
    return CriterionResult(7, "gradient oracle vs finite differences", "saddle",
                           worst < 1e-5, {"trials": trials, "max_rel_error": worst},
                           time.perf_counter() - t0)


# --- circulant / cumulant / conv-als -----------------------------------------------

def _planted(n, L, seed):
    return FilterBank.random(L, n, np.random.default_rng([seed, 100]))


def criterion_3(seeds=(0, 1, 2), n=8, L=2, act="poisson:0.5"):
    """Empirical vs model cumulant error at N=1e5 and N=1e6 with 1/sqrt(N) ratio check."""
    t0 = time.perf_counter()
    spec = ActivationSpec.parse(act)
    errs = {100000: [], 1000000: []}
    for s in seeds:
        truth = _planted(n, L, s)
        model = cumulant_from_model(truth, model_lambdas(spec, L, n))
        for N in errs:
            X, _ = synth_conv_ica(truth, spec, N, np.random.default_rng([s, N]))
            errs[N].append(relative_error(third_cumulant(X), model))
    e5 = float(np.mean(errs[100000]))
    e6 = float(np.mean(errs[1000000]))
    ratio = e5 / e6
    expected = np.sqrt(10.0)
    ratio_ok = expected / 1.5 <= ratio <= expected * 1.5
    measured = {"error_N1e5": e5, "error_N1e6": e6, "ratio": ratio, "expected_ratio": expected,
                "per_seed": {str(k): v for k, v in errs.items()}}
    return CriterionResult(3, "cumulant decomposition identity", "conv",
                           e5 < 0.1 and e6 < 0.04 and ratio_ok, measured,
                           time.perf_counter() - t0)


def criterion_4(seed=0, n=8, L=2):
    """Exact-cumulant CT-ALS: recovery < 1e-3 within 100 iterations and recon < 1e-6 in < 5 s."""
    truth = _planted(n, L, seed)
    C3 = cumulant_from_model(truth, 1.0)
    t0 = time.perf_counter()
    res = ct_als(C3, L, AlsConfig(max_iters=100, tol=1e-12), np.random.default_rng(seed),
                 truth=truth)
    secs = time.perf_counter() - t0
    rec = filter_recovery_error(res.F, truth)
    recon = res.trace[-1]["recon_error"]
    measured = {"iterations": res.iterations, "recovery_error": rec, "recon_error": recon,
                "seconds": secs}
    return CriterionResult(4, "CT-ALS planted recovery (exact cumulant)", "conv",
                           rec < 1e-3 and recon < 1e-6 and secs < 5, measured, secs,
                           {"ct_exact": _curve(res.trace, ["iter", "recon_error",
                                                           "recovery_error"])})


def _median_iter_seconds(trace):
    return float(np.median([e["seconds"] for e in trace]))


def criterion_5(seeds=SEEDS, n=8, L=2, N=10000, iters=100, act="poisson:0.5",
                sizes=(1000, 10000, 100000)):
    """CT-ALS beats alternating minimization; CT iteration cost is flat in N, alt-min linear."""
    t0 = time.perf_counter()
    spec = ActivationSpec.parse(act)
    cfg = AlsConfig(max_iters=iters, tol=1e-10)
    wins, detail, rows = 0, [], []
    for s in seeds:
        truth = _planted(n, L, s)
        X, _ = synth_conv_ica(truth, spec, N, np.random.default_rng([s, 5]))
        init = FilterBank.random(L, n, np.random.default_rng([s, 6])).filters
        ct = ct_als(third_cumulant(X), L, cfg, init=(init, init, init), truth=truth)
        am = alt_min_baseline(X, L, cfg, init=init, truth=truth)
        e_ct = filter_recovery_error(ct.F, truth)
        e_am = filter_recovery_error(am.filters, truth)
        wins += e_ct < e_am
        detail.append({"seed": s, "ct": e_ct, "altmin": e_am})
        rows += [{"seed": s, "method": "ct-als", "iter": e["iter"],
                  "recovery_error": e["recovery_error"]} for e in ct.trace]
        rows += [{"seed": s, "method": "altmin", "iter": e["iter"],
                  "recovery_error": e["recovery_error"]} for e in am.trace]
    # timing sweep
    truth = _planted(n, L, 0)
    init = FilterBank.random(L, n, np.random.default_rng(6)).filters
    timing = {"N": list(sizes), "ct": [], "altmin": []}
    tcfg = AlsConfig(max_iters=20, tol=1e-300)
    for size in sizes:
        X, _ = synth_conv_ica(truth, spec, size, np.random.default_rng(size))
        C3 = third_cumulant(X)
        timing["ct"].append(_median_iter_seconds(
            ct_als(C3, L, tcfg, init=(init, init, init)).trace))
        timing["altmin"].append(_median_iter_seconds(alt_min_baseline(X, L, tcfg, init=init).trace))
    ct_ratio = timing["ct"][-1] / timing["ct"][0]
    Ns = np.asarray(sizes, dtype=float)
    ta = np.asarray(timing["altmin"])
    slope, icept = np.polyfit(Ns, ta, 1)
    r2 = 1.0 - np.sum((ta - (slope * Ns + icept)) ** 2) / np.sum((ta - ta.mean()) ** 2)
    measured = {"wins": wins, "seeds": len(seeds), "per_seed": detail, "timing": timing,
                "ct_time_ratio_largest_smallest": ct_ratio, "altmin_linear_r2": float(r2),
                "altmin_slope_seconds_per_sample": float(slope)}
    passed = wins >= 8 * len(seeds) / 10 and ct_ratio < 2.0 and r2 > 0.9 and slope > 0
    return CriterionResult(5, "CT-ALS vs alternating minimization", "conv", passed, measured,
                           time.perf_counter() - t0,
                           {"ct_vs_altmin": _curve(rows, ["seed", "method", "iter",
                                                           "recovery_error"])})


def criterion_6(pairs=50):
    """Fourier-block Ψ against dense Gram matrices and their pseudoinverses."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_psi = worst_pinv = 0.0
    for t in range(pairs):
        n = (4, 8)[t % 2]
        L = (1, 2, 3)[t % 3]
        g = rng.standard_normal((L, n))
        h = rng.standard_normal((L, n))
        Gs = np.concatenate([_cir(f) for f in g], axis=1)
        Hs = np.concatenate([_cir(f) for f in h], axis=1)
        dense = (Hs.T @ Hs) * (Gs.T @ Gs)
        psi = psi_build(g, h)
        Ub = block_unitary(n, L)
        recon = Ub @ psi.to_dense() @ Ub.conj().T
        worst_psi = max(worst_psi, float(np.max(np.abs(recon - dense))))
        pinv = Ub @ psi_pinv(psi).to_dense() @ Ub.conj().T
        worst_pinv = max(worst_pinv, float(np.max(np.abs(pinv - np.linalg.pinv(dense)))))
    measured = {"pairs": pairs, "max_psi_error": worst_psi, "max_pinv_error": worst_pinv}
    return CriterionResult(6, "Psi identities", "conv", worst_psi < 1e-9 and worst_pinv < 1e-8,
                           measured, time.perf_counter() - t0)


def _cir(f):
    n = f.size
    return f[(np.arange(n)[:, None] - np.arange(n)[None, :]) % n]


# --- seq-embed -------------------------------------------------------------------

def _model_bytes(model, directory):
    model.save(directory)
    out = b""
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as fh:
            out += name.encode() + fh.read()
    return out


def criterion_8(workdir=None):
    """Reproducibility, length contract, deconvolution residual and rating round trip."""
    import tempfile

    t0 = time.perf_counter()
    corpus = [s.split() for s in TOY_CORPUS]
    vocab = Vocab.from_corpus(corpus)
    cfg = AlsConfig(max_iters=100)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        m1 = train_embed_model(corpus, vocab, k=8, n=5, L=3, als_config=cfg, seed=0)
        m2 = train_embed_model(corpus, vocab, k=8, n=5, L=3, als_config=cfg, seed=0)
        reproducible = (_model_bytes(m1, os.path.join(tmp, "a"))
                        == _model_bytes(m2, os.path.join(tmp, "b")))
    lengths_ok = all(embed(corpus[0][:N] * 3, m1).size == m1.dim for N in range(0, 7))
    rng = np.random.default_rng(8)
    resid = 0.0
    for N in (5, 12, 31):
        bank = FilterBank.random(3, 5, rng)
        y = synthesize(rng.standard_normal(3 * N), bank, N)
        w = deconv_decode(y, bank)
        resid = max(resid, float(np.linalg.norm(synthesize(w, bank, N) - y) / np.linalg.norm(y)))
    taus = rng.uniform(0, 5, 100)
    rt = max(abs(expected_rating(discretize_similarity(t, 0, 5), 0) - t) for t in taus)
    measured = {"byte_reproducible": reproducible, "length_contract": lengths_ok,
                "max_deconv_residual": resid, "max_roundtrip_error": float(rt)}
    passed = reproducible and lengths_ok and resid < 1e-8 and rt <= 1e-12
    return CriterionResult(8, "embedding pipeline properties", "embed", passed, measured,
                           time.perf_counter() - t0)


RUNNERS = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
           6: criterion_6, 7: criterion_7, 8: criterion_8}
GROUPS = {"saddle": (1, 2, 7), "conv": (3, 4, 5, 6), "embed": (8,)}


def select(only=None):
    """Criterion ids for a comma-separated list of group names and/or numbers."""
    if not only:
        return sorted(RUNNERS)
    ids = set()
    for tok in str(only).split(","):
        tok = tok.strip()
        if tok in GROUPS:
            ids.update(GROUPS[tok])
        elif tok.isdigit() and int(tok) in RUNNERS:
            ids.add(int(tok))
        else:
            raise ValueError("unknown criterion or group %r (groups: %s)"
                             % (tok, ", ".join(GROUPS)))
    return sorted(ids)


def run_benchmark(only=None, log=None):
    results = []
    for cid in select(only):
        res = RUNNERS[cid]()
        if log is not None:
            log("[%s] %d. %s (%.1fs)" % ("PASS" if res.passed else "FAIL", res.id, res.name,
                                          res.seconds))
        results.append(res)
    return results


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def write_report(results, out_dir):
    """Write ``report.json``, ``report.md`` and ``curve_<name>.csv`` files."""
    os.makedirs(out_dir, exist_ok=True)
    summary = {"criteria": [_jsonable(r.summary()) for r in results],
               "passed": all(r.passed for r in results),
               "failures": [r.id for r in results if not r.passed]}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    lines = ["# Acceptance benchmark", "", "| # | criterion | result | seconds |",
             "|---|---|---|---|"]
    for r in results:
        lines.append("| %d | %s | %s | %.1f |" % (r.id, r.name, "PASS" if r.passed else "FAIL",
                                                 r.seconds))
    lines.append("")
    for r in results:
        lines.append("## %d. %s" % (r.id, r.name))
        lines.append("")
        lines.append("```json")
        lines.append(json.dumps(_jsonable(r.measured), indent=2))
        lines.append("```")
        lines.append("")
    with open(os.path.join(out_dir, "report.md"), "w") as fh:
        fh.write("\n".join(lines))
    for r in results:
        for name, curve in r.curves.items():
            with open(os.path.join(out_dir, "curve_%s.csv" % name), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(curve["columns"])
                w.writerows(curve["rows"])
    return summary
