"""Reduced-scale versions of the acceptance checks for `rmsplit selftest`.

Each check mirrors one acceptance criterion at a fraction of the full
replicate counts (with correspondingly relaxed statistical tolerances where
the tolerance scales with sample size).  Exit code 0 means every check
passed.  The full-scale criteria live in the test suite.
"""

from __future__ import annotations

import json
import os
import tempfile
import time

import numpy as np

from . import estimators
from .environment import EnvSeedSpec, generate
from .kernels import active, backend_name
from .mass import mass_run, path_sum_oracle, terminal_mass_row

SEED = 20260810


def _oracle_equivalence():
    worst = 0.0
    for r in range(20):
        env = generate(EnvSeedSpec(SEED, 8, "size_biased", r))
        field = mass_run(env, 8)
        for t in (4, 8):
            for y in range(-t, t + 1):
                worst = max(worst, abs(field.p(t, y) - path_sum_oracle(env, t, y)))
    return worst < 1e-12, f"max |DP - path sum| = {worst:.2e}"


def _heat_kernel_tv():
    env = generate(EnvSeedSpec(SEED, 12))
    n_walks = 100_000
    hist, _, err = active().walk_terminal_hist(
        env.ep, env.em, env.offsets, env.spec.key, 12, n_walks, 0,
        np.zeros(0, np.int64))
    if err:
        return False, "dead cell during sampling"
    row = mass_run(env, 12).rows[12]
    tv = 0.5 * float(np.abs(hist / n_walks - row).sum())
    return tv < 0.02, f"TV(sampler, DP) = {tv:.4f} at 1e5 walks"


def _conservation():
    worst = 0.0
    for r in range(2):
        spec = EnvSeedSpec(SEED, 2000, "size_biased", r)
        _, cons = terminal_mass_row(spec, 2000)
        worst = max(worst, cons)
    return worst < 1e-9, f"max |sum p - 1| = {worst:.2e} up to t=2000"


def _annealed():
    chk = estimators.annealed_mean_check(SEED, 8, 20_000)
    z = chk.max_abs_z()
    return z < 4.5, f"max |z| = {z:.2f} over {len(chk.ys)} cells"


def _estimator_identity():
    grid, m, B, _, _ = estimators.moment_samples(SEED, [16], 20_000,
                                                 chunk_size=4096)
    curve = estimators.moment_curve_from_samples(grid, m, B, 0.0)
    gap = float(abs(curve.m2_mean[0] - curve.b_mean[0]))
    return curve.cis_overlap(), (
        f"M^(16)={curve.m2_mean[0]:.3f}+-{curve.m2_half[0]:.3f} "
        f"B^(16)={curve.b_mean[0]:.3f}+-{curve.b_half[0]:.3f} gap={gap:.3f}")


def _ordering():
    grid = [64, 256]
    ens = estimators.run_coupled(SEED, 256, 1024, grid=grid, chunk_size=256)
    zc = estimators.zero_count_curve(ens)
    g, m, B, _, _ = estimators.moment_samples(SEED, grid, 2000, chunk_size=512)
    curve = estimators.moment_curve_from_samples(g, m, B, 0.0)
    margin = estimators.ordering_margin(curve.m2_mean, curve.m2_half,
                                        zc.zero_mean, zc.zero_half)
    ok = bool(np.all(curve.m2_mean <= zc.zero_mean + margin))
    return ok, (f"M^ = {np.round(curve.m2_mean, 2)} vs zeros "
                f"{np.round(zc.zero_mean, 2)} (+margin {np.round(margin, 2)})")


def _transitions():
    ens = estimators.run_coupled(SEED, 64, 1500, chunk_size=512)
    st = estimators.transition_stats(ens)
    total = st.offzero_total()
    if total < 20_000:
        return False, f"only {total} off-zero transitions"
    zoff = np.abs(st.offzero_z())
    ok = bool((zoff < 3).all())
    detail = f"off-zero z = {np.round(zoff, 2)}"
    for v in (1, 2, 3):
        phat, p, z = st.atzero_stay_z(v)
        ok &= abs(z) < 3
        detail += f"; v={v}: {phat:.3f} vs {p:.3f} (z={z:+.2f})"
    pooled, n, margin3 = st.pooled_geq2()
    ok &= pooled <= 0.75 + margin3
    detail += f"; pooled v>=2 stay {pooled:.3f} (n={n})"
    return ok, detail


def _excursions():
    grid = [64, 256, 1024]
    ens = estimators.run_coupled(SEED, 1024, 600, grid=grid, chunk_size=128)
    zc = estimators.zero_count_curve(ens)
    norm = zc.a_mean / np.sqrt(np.asarray(grid, float))
    spread = float(norm.max() / norm.min())
    return spread < 1.25, f"a(n)/sqrt(n) = {np.round(norm, 3)} spread {spread:.3f}"


def _tails():
    rep = estimators.holding_tail(SEED, 100, 20_000, hold_replicates=128,
                                  thresholds=[t * t for t in range(1, 11)],
                                  fit_lo=9, fit_hi=100, chunk_size=8192)
    ok = rep.fit_slope > 0 and rep.fit_r2 > 0.85
    return ok, (f"log-survival slope -{rep.fit_slope:.3f}/sqrt(t), "
                f"R2 = {rep.fit_r2:.3f} over {rep.fit_points} points")


def _moment_growth():
    curve = estimators.moment_curve(SEED, [64, 128, 256, 512], 2000,
                                    chunk_size=256)
    ok = 0.40 <= curve.alpha <= 0.85 and curve.cis_overlap()
    return ok, f"alpha = {curve.alpha:.3f} +- {curve.alpha_stderr:.3f}"


def _clt():
    good = 0
    details = []
    for r in range(3):
        rep = estimators.clt_report(EnvSeedSpec(SEED, 4000, "size_biased", r))
        passing = rep.ks < 0.25 and 0.75 <= rep.sigma2 <= 1.25
        good += passing
        details.append(f"r{r}: ks={rep.ks:.3f} s2={rep.sigma2:.3f}")
    return good >= 2, "; ".join(details)


def _reproducibility():
    from .cli import main as cli_main
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for threads in (1, 2):
            path = os.path.join(tmp, f"m{threads}.json")
            rc = cli_main(["moment", "--seed", str(SEED), "--replicates", "256",
                           "--grid", "16,32", "--threads", str(threads),
                           "--out", path])
            if rc != 0:
                return False, f"moment exited {rc}"
            with open(path, "rb") as fh:
                outs.append(fh.read())
    return outs[0] == outs[1], f"{len(outs[0])} bytes, threads 1 vs 2"


CHECKS = [
    ("oracle-equivalence", _oracle_equivalence),
    ("heat-kernel-tv", _heat_kernel_tv),
    ("conservation", _conservation),
    ("annealed-binomial", _annealed),
    ("estimator-identity", _estimator_identity),
    ("zero-count-ordering", _ordering),
    ("y-transitions", _transitions),
    ("excursion-counts", _excursions),
    ("tau0-tail", _tails),
    ("moment-growth", _moment_growth),
    ("quenched-clt", _clt),
    ("reproducibility", _reproducibility),
]


def run_selftest(threads: int = 1) -> int:
    print(f"rmsplit selftest (backend: {backend_name()}, reduced scale)")
    failures = 0
    for i, (label, fn) in enumerate(CHECKS, 1):
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # report, keep going
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        dt = time.perf_counter() - t0
        status = "PASS" if ok else "FAIL"
        print(f"[{i:2d}/12] {label:<22} {status}  ({dt:5.1f}s)  {detail}")
        failures += not ok
    print("selftest:", "all checks passed" if failures == 0
          else f"{failures} check(s) failed")
    return 0 if failures == 0 else 1
