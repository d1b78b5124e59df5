"""Full-scale acceptance criteria.

Each test runs one criterion at its stated scale and tolerance and prints a
single line

    ACCEPTANCE <k> <name>: PASS|FAIL -- <measured values>

Run with ``pytest -s tests/test_acceptance.py`` to see every line.  All
randomness flows from the canonical master seed below.
"""

import time

import numpy as np
import pytest

from rmsplit import estimators as E
from rmsplit.cli import main as cli_main
from rmsplit.environment import EnvSeedSpec, generate
from rmsplit.kernels import active
from rmsplit.mass import mass_run, path_sum_oracle, terminal_mass_row
from rmsplit.parallel import default_threads

pytestmark = pytest.mark.acceptance

SEED = 1
THREADS = default_threads()


def report(k: int, name: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {k} {name}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"criterion {k} ({name}): {detail}"


def test_01_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for r in range(100):
        env = generate(EnvSeedSpec(SEED, 10, "size_biased", r))
        field = mass_run(env, 10)
        for t in range(11):
            for y in range(-t, t + 1):
                worst = max(worst, abs(field.p(t, y) - path_sum_oracle(env, t, y)))
    dt = time.perf_counter() - t0
    report(1, "mass_run == path_sum_oracle", worst < 1e-12 and dt < 30,
           f"max |diff| = {worst:.2e} over 100 envs, t <= 10, in {dt:.1f}s")


def test_02_heat_kernel_equals_mass():
    t0 = time.perf_counter()
    env = generate(EnvSeedSpec(SEED, 12))
    n_walks = 1_000_000
    hist, _, err = active().walk_terminal_hist(
        env.ep, env.em, env.offsets, env.spec.key, 12, n_walks, 0,
        np.zeros(0, np.int64))
    assert err == 0
    row = mass_run(env, 12).rows[12]
    tv = 0.5 * float(np.abs(hist / n_walks - row).sum())
    dt = time.perf_counter() - t0
    report(2, "sampled walk law vs DP row", tv < 0.005 and dt < 120,
           f"TV = {tv:.5f} at t=12 with 1e6 walks in {dt:.1f}s")


def test_03_conservation():
    worst = 0.0
    for r in range(10):
        _, cons = terminal_mass_row(EnvSeedSpec(SEED, 10_000, "size_biased", r),
                                    10_000)
        worst = max(worst, cons)
    report(3, "mass conservation to t=1e4", worst < 1e-9,
           f"max |sum p - 1| = {worst:.2e} over 10 envs")


def test_04_annealed_binomial():
    chk = E.annealed_mean_check(SEED, 8, 100_000, threads=THREADS)
    z = chk.max_abs_z()
    report(4, "annealed law of X_8 vs binomial", z < 4,
           f"max |z| = {z:.2f} over {len(chk.ys)} cells, 1e5 replicates")


def test_05_estimator_identity():
    grid, m, B, _, _ = E.moment_samples(SEED, [16], 100_000, threads=THREADS,
                                        chunk_size=8192)
    curve = E.moment_curve_from_samples(grid, m, B, 0.0)
    detail = (f"M^(16) = {curve.m2_mean[0]:.4f} +- {curve.m2_half[0]:.4f}, "
              f"B^(16) = {curve.b_mean[0]:.4f} +- {curve.b_half[0]:.4f}")
    report(5, "E m(16)^2 == E B(16)", curve.cis_overlap(), detail)


def test_06_zero_count_ordering():
    grid = [64, 256, 1024]
    ens = E.run_coupled(SEED, 1024, 4096, grid=grid, threads=THREADS,
                        chunk_size=256)
    zc = E.zero_count_curve(ens)
    g, m, B, _, _ = E.moment_samples(SEED, grid, 10_000, threads=THREADS,
                                     chunk_size=512)
    curve = E.moment_curve_from_samples(g, m, B, 0.0)
    margin = E.ordering_margin(curve.m2_mean, curve.m2_half,
                               zc.zero_mean, zc.zero_half)
    ok = bool(np.all(curve.m2_mean <= zc.zero_mean + margin))
    detail = (f"M^ = {np.round(curve.m2_mean, 2).tolist()} vs zero means "
              f"{np.round(zc.zero_mean, 2).tolist()} "
              f"(margin {np.round(margin, 2).tolist()})")
    report(6, "moment bounded by zero counts", ok, detail)


def test_07_y_transition_law():
    ens = E.run_coupled(SEED, 64, 3000, threads=THREADS, chunk_size=512)
    st = E.transition_stats(ens)
    total = st.offzero_total()
    zoff = np.abs(st.offzero_z())
    ok = total >= 100_000 and bool((zoff < 3).all())
    detail = (f"{total} off-zero transitions, freq "
              f"{np.round(st.offzero_freqs(), 4).tolist()}, |z| "
              f"{np.round(zoff, 2).tolist()}")
    for v in (1, 2, 3):
        phat, p, z = st.atzero_stay_z(v)
        ok &= abs(z) < 3
        detail += f"; stay(v={v}) {phat:.4f} vs {p:.4f} (z {z:+.2f})"
    pooled, n, margin3 = st.pooled_geq2()
    ok &= pooled <= 0.75 + margin3
    detail += f"; pooled v>=2 stay {pooled:.4f} <= 0.75+{margin3:.4f} (n={n})"
    report(7, "Y transition law", ok, detail)


def test_08_excursion_count_scaling():
    grid = [256, 1024, 4096]
    ens = E.run_coupled(SEED, 4096, 2048, grid=grid, threads=THREADS,
                        chunk_size=128)
    zc = E.zero_count_curve(ens)
    norm = zc.a_mean / np.sqrt(np.asarray(grid, float))
    spread = float(norm.max() / norm.min())
    report(8, "a(n)/sqrt(n) stable", spread <= 1.25,
           f"a(n)/sqrt(n) = {np.round(norm, 4).tolist()}, "
           f"max/min = {spread:.3f} over n in {grid}")


def test_09_tau0_tail():
    rep = E.holding_tail(SEED, 400, 100_000, hold_replicates=512,
                         hold_horizon=400,
                         thresholds=[t * t for t in range(1, 21)],
                         fit_lo=25, fit_hi=400, threads=THREADS)
    ok = rep.fit_slope > 0 and rep.fit_r2 > 0.9
    report(9, "tau0 stretched-exponential tail", ok,
           f"log S(t) ~ {rep.fit_intercept:.2f} - {rep.fit_slope:.3f} sqrt(t), "
           f"R2 = {rep.fit_r2:.3f} over {rep.fit_points} populated thresholds "
           f"in [25, 400], 1e5 replicates")


def test_10_moment_growth():
    t0 = time.perf_counter()
    grid = [64, 128, 256, 512, 1024, 2048, 4096]
    curve = E.moment_curve(SEED, grid, 20_000, threads=THREADS, chunk_size=250)
    dt = time.perf_counter() - t0
    ok = 0.45 <= curve.alpha <= 0.80 and dt < 7200
    report(10, "moment growth exponent", ok,
           f"alpha = {curve.alpha:.4f} +- {curve.alpha_stderr:.4f} "
           f"(R2 {curve.r2:.4f}, log3-corrected {curve.alpha_log3:.3f}), "
           f"2e4 replicates per n in {dt / 60:.1f} min")


def test_11_quenched_clt():
    t0 = time.perf_counter()
    reports = E.clt_multi(SEED, 20_000, 10, threads=THREADS)
    dt = time.perf_counter() - t0
    good = sum(1 for r in reports if r.ks < 0.05 and 0.9 <= r.sigma2 <= 1.1)
    detail = ("; ".join(f"r{r.replicate}: ks={r.ks:.3f} s2={r.sigma2:.3f}"
                        for r in reports)
              + f"; {good}/10 pass in {dt:.0f}s")
    report(11, "quenched CLT at T=2e4", good >= 9 and dt < 600, detail)


def test_12_reproducibility_across_threads(tmp_path):
    digests = []
    for threads in (1, 2):
        m = tmp_path / f"moment-t{threads}.json"
        z = tmp_path / f"zeros-t{threads}.json"
        rc1 = cli_main(["moment", "--seed", str(SEED), "--replicates", "400",
                        "--grid", "16,64", "--threads", str(threads),
                        "--out", str(m)])
        rc2 = cli_main(["zeros", "--seed", str(SEED), "--replicates", "200",
                        "--moment-replicates", "300", "--grid", "16,32",
                        "--threads", str(threads), "--out", str(z)])
        assert rc1 == 0 and rc2 == 0
        digests.append((m.read_bytes(), z.read_bytes()))
    ok = digests[0] == digests[1]
    report(12, "byte-identical outputs across --threads", ok,
           f"moment {len(digests[0][0])}B, zeros {len(digests[0][1])}B, "
           f"threads 1 vs 2")
