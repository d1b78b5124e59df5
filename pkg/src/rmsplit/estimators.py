"""Replicate aggregation into the model's verifiable statistics.

Everything here is a deterministic function of (seed, parameters): replicate
r of an experiment uses the environment key derived from (seed, r), chunks
of replicates are processed in fixed order, and confidence intervals are
plain normal-approximation intervals over replicate means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .environment import EnvSeedSpec
from .kernels import VCAP, active
from .mass import terminal_mass_row
from .parallel import map_chunks

Z95 = 1.959963984540054


def norm_cdf(x: float) -> float:
    """Standard normal CDF via erfc (absolute error well below 1e-10)."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def mean_ci(samples: np.ndarray):
    """(mean, 95% half-width) of a replicate sample."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 replicates for a CI")
    return float(x.mean()), float(Z95 * x.std(ddof=1) / math.sqrt(len(x)))


def ks_distance(points: np.ndarray, masses: np.ndarray) -> float:
    """Sup distance between a discrete CDF and the standard normal CDF.

    ``points`` are the (strictly increasing) jump locations, ``masses`` the
    jump sizes; both sides of every jump are compared against Phi.
    """
    points = np.asarray(points, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    if len(points) != len(masses) or len(points) == 0:
        raise ValueError("points and masses must be equal-length, nonempty")
    if (np.diff(points) <= 0).any():
        raise ValueError("jump points must be strictly increasing")
    if (masses < -1e-12).any():
        raise ValueError("non-monotone CDF: negative jump mass")
    total = float(np.sum(masses))
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"total mass {total} not within 1e-9 of 1")
    cdf = np.cumsum(masses)
    phi = np.array([norm_cdf(x) for x in points])
    upper = np.abs(cdf - phi)
    lower = np.abs(np.concatenate(([0.0], cdf[:-1])) - phi)
    return float(max(upper.max(), lower.max()))


# ---------------------------------------------------------------------------
# Mass-ensemble statistics (annealed law, moment growth).
# ---------------------------------------------------------------------------


def _mass_chunk(start, count, seed, n, cks):
    K = active()
    keys = K.derive_env_keys(seed, start, count)
    return K.mass_ensemble_stream(keys, n, True, np.asarray(cks, np.int64))


def moment_samples(seed: int, grid, replicates: int, *, threads: int = 1,
                   chunk_size: int = 256):
    """Per-replicate (m(n), B(n), Z(n)) matrices over the grid, plus the
    worst conservation error seen in any sweep."""
    grid = np.asarray(sorted(grid), dtype=np.int64)
    n = int(grid[-1])
    parts = map_chunks(_mass_chunk, replicates, (seed, n, grid),
                       threads=threads, chunk_size=chunk_size)
    m = np.vstack([p[0] for p in parts])
    B = np.vstack([p[1] for p in parts])
    Z = np.vstack([p[2] for p in parts])
    cons = max(p[5] for p in parts)
    return grid, m, B, Z, cons


@dataclass
class AnnealedCheck:
    """Replicate mean of p(n, y) against the fair-walk binomial targets."""

    n: int
    replicates: int
    ys: np.ndarray
    means: np.ndarray
    targets: np.ndarray
    ses: np.ndarray
    zscores: np.ndarray

    def max_abs_z(self) -> float:
        return float(np.abs(self.zscores).max())

    def to_dict(self) -> dict:
        return {
            "schema": "rmsplit/annealed/v1",
            "n": self.n,
            "replicates": self.replicates,
            "cells": [
                {"y": int(y), "mean": m, "target": t, "se": s, "z": z}
                for y, m, t, s, z in zip(self.ys, self.means, self.targets,
                                         self.ses, self.zscores)
            ],
            "max_abs_z": self.max_abs_z(),
        }


def binomial_row_targets(n: int) -> np.ndarray:
    """P(S_n = 2j - n) = C(n, j) 2^-n for j = 0..n (exact enumeration law)."""
    return np.array([math.comb(n, j) for j in range(n + 1)], dtype=np.float64) \
        / float(2 ** n)


def annealed_mean_check(seed: int, n: int, replicates: int, *,
                        threads: int = 1, chunk_size: int = 8192) -> AnnealedCheck:
    if replicates < 2:
        raise ValueError("annealed check needs at least 2 replicates")
    parts = map_chunks(_mass_chunk, replicates, (seed, n, np.zeros(0, np.int64)),
                       threads=threads, chunk_size=chunk_size)
    sum_row = np.zeros(n + 1)
    sumsq_row = np.zeros(n + 1)
    for p in parts:
        sum_row += p[3]
        sumsq_row += p[4]
    mean = sum_row / replicates
    var = np.maximum(sumsq_row - replicates * mean**2, 0.0) / (replicates - 1)
    se = np.sqrt(var / replicates)
    targets = binomial_row_targets(n)
    if (se == 0).any():
        raise ValueError("degenerate CI: increase replicates")
    z = (mean - targets) / se
    ys = 2 * np.arange(n + 1, dtype=np.int64) - n
    return AnnealedCheck(n, replicates, ys, mean, targets, se, z)


def fit_power_law(ns, values, ses=None):
    """Weighted least squares of log(value) = alpha log(n) + c.

    Weights are inverse variances of log(value) when ``ses`` is given.
    Returns (alpha, c, alpha_stderr, r2).
    """
    ns = np.asarray(ns, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(ns) < 2:
        raise ValueError("power-law fit needs at least 2 points")
    if (v <= 0).any():
        raise ValueError("power-law fit needs positive values")
    x = np.log(ns)
    y = np.log(v)
    if ses is None:
        w = np.ones_like(y)
    else:
        rel = np.asarray(ses, dtype=np.float64) / v
        w = 1.0 / np.maximum(rel, 1e-12) ** 2
    W = np.sum(w)
    xb = np.sum(w * x) / W
    yb = np.sum(w * y) / W
    sxx = np.sum(w * (x - xb) ** 2)
    alpha = float(np.sum(w * (x - xb) * (y - yb)) / sxx)
    c = float(yb - alpha * xb)
    resid = y - alpha * x - c
    dof = max(len(x) - 2, 1)
    s2 = float(np.sum(w * resid**2) / dof)
    stderr = math.sqrt(s2 / sxx)
    sst = float(np.sum(w * (y - yb) ** 2))
    r2 = 1.0 - float(np.sum(w * resid**2)) / sst if sst > 0 else 1.0
    return alpha, c, stderr, r2


@dataclass
class MomentCurve:
    """Growth of the squared quenched mean displacement.

    m2_mean[i] estimates E(m(n_i)^2) over environments, b_mean[i] estimates
    E(B(n_i)); the two estimate the same quantity, so their CIs must
    overlap.  ``alpha`` is the plain power-law exponent of m2_mean;
    ``alpha_log3`` removes a (log n)^3 factor before fitting.
    """

    grid: np.ndarray
    replicates: int
    m2_mean: np.ndarray
    m2_half: np.ndarray
    b_mean: np.ndarray
    b_half: np.ndarray
    alpha: float
    alpha_stderr: float
    intercept: float
    r2: float
    alpha_log3: float
    cons_err: float

    def cis_overlap(self) -> bool:
        lo1 = self.m2_mean - self.m2_half
        hi1 = self.m2_mean + self.m2_half
        lo2 = self.b_mean - self.b_half
        hi2 = self.b_mean + self.b_half
        return bool(np.all((lo1 <= hi2) & (lo2 <= hi1)))

    def to_dict(self) -> dict:
        return {
            "schema": "rmsplit/moment/v1",
            "replicates": self.replicates,
            "grid": [int(n) for n in self.grid],
            "m2_mean": list(map(float, self.m2_mean)),
            "m2_ci_half": list(map(float, self.m2_half)),
            "b_mean": list(map(float, self.b_mean)),
            "b_ci_half": list(map(float, self.b_half)),
            "alpha": self.alpha,
            "alpha_stderr": self.alpha_stderr,
            "intercept": self.intercept,
            "r2": self.r2,
            "alpha_log3_corrected": self.alpha_log3,
            "max_conservation_error": self.cons_err,
        }


def moment_curve_from_samples(grid, m, B, cons: float) -> MomentCurve:
    reps = m.shape[0]
    m2 = m**2
    m2_mean = m2.mean(axis=0)
    m2_half = Z95 * m2.std(axis=0, ddof=1) / math.sqrt(reps)
    b_mean = B.mean(axis=0)
    b_half = Z95 * B.std(axis=0, ddof=1) / math.sqrt(reps)
    if len(grid) >= 2:
        alpha, c, stderr, r2 = fit_power_law(grid, m2_mean, m2_half / Z95)
        corrected = m2_mean / np.log(np.asarray(grid, float)) ** 3
        alpha_log3, _, _, _ = fit_power_law(grid, corrected, m2_half / Z95)
    else:
        alpha = c = stderr = r2 = alpha_log3 = math.nan
    return MomentCurve(np.asarray(grid), reps, m2_mean, m2_half, b_mean,
                       b_half, alpha, stderr, c, r2, alpha_log3, cons)


def moment_curve(seed: int, grid, replicates: int, *, threads: int = 1,
                 chunk_size: int = 256) -> MomentCurve:
    grid, m, B, _, cons = moment_samples(seed, grid, replicates,
                                         threads=threads, chunk_size=chunk_size)
    return moment_curve_from_samples(grid, m, B, cons)


# ---------------------------------------------------------------------------
# Coupled-pair ensembles (zero counts, excursions, holds, transitions).
# ---------------------------------------------------------------------------


def _coupled_chunk(start, count, seed, n, cks):
    K = active()
    keys = K.derive_env_keys(seed, start, count)
    out = K.coupled_ensemble_stream(keys, n, True, np.asarray(cks, np.int64))
    if out[8]:
        raise RuntimeError("coupled sampler hit a dead cell")
    return out


@dataclass
class CoupledEnsemble:
    """Raw per-replicate summaries of coupled pairs in fresh environments."""

    n: int
    replicates: int
    grid: np.ndarray
    zero_at: np.ndarray       # (R, C) #{i < n_c : Y_i = 0}
    a_at: np.ndarray          # (R, C) excursion count a(n_c)
    gamma_sum: np.ndarray     # (R,) sum of holding times (incl. censored)
    max_hold: np.ndarray      # (R,)
    max_hold_censored: np.ndarray
    tau0: np.ndarray          # (R,) first t with v(X_t) >= 2, censored at n
    offzero: np.ndarray       # (3,) counts of Y-increments -2/0/+2 off zero
    atzero: np.ndarray        # (VCAP+1, 2) stay/leave counts by occupancy


def run_coupled(seed: int, n: int, replicates: int, grid=None, *,
                threads: int = 1, chunk_size: int = 256) -> CoupledEnsemble:
    if grid is None:
        grid = [n]
    grid = np.asarray(sorted(grid), dtype=np.int64)
    if grid[-1] > n:
        raise ValueError("checkpoint beyond horizon")
    parts = map_chunks(_coupled_chunk, replicates, (seed, n, grid),
                       threads=threads, chunk_size=chunk_size)
    zero_at = np.vstack([p[0] for p in parts])
    a_at = np.vstack([p[1] for p in parts])
    gamma_sum = np.concatenate([p[2] for p in parts])
    max_hold = np.concatenate([p[3] for p in parts])
    cens = np.concatenate([p[4] for p in parts])
    tau0 = np.concatenate([p[5] for p in parts])
    offzero = np.zeros(3, dtype=np.int64)
    atzero = np.zeros((VCAP + 1, 2), dtype=np.int64)
    for p in parts:
        offzero += p[6]
        atzero += p[7]
    return CoupledEnsemble(n, replicates, grid, zero_at, a_at, gamma_sum,
                           max_hold, cens, tau0, offzero, atzero)


@dataclass
class ZeroCountCurve:
    grid: np.ndarray
    replicates: int
    zero_mean: np.ndarray
    zero_half: np.ndarray
    a_mean: np.ndarray
    a_half: np.ndarray

    def to_dict(self) -> dict:
        return {
            "schema": "rmsplit/zeros/v1",
            "replicates": self.replicates,
            "grid": [int(n) for n in self.grid],
            "zero_count_mean": list(map(float, self.zero_mean)),
            "zero_count_ci_half": list(map(float, self.zero_half)),
            "excursion_count_mean": list(map(float, self.a_mean)),
            "excursion_count_ci_half": list(map(float, self.a_half)),
        }


def zero_count_curve(ens: CoupledEnsemble) -> ZeroCountCurve:
    reps = ens.replicates
    zm = ens.zero_at.mean(axis=0)
    zh = Z95 * ens.zero_at.std(axis=0, ddof=1) / math.sqrt(reps)
    am = ens.a_at.mean(axis=0)
    ah = Z95 * ens.a_at.std(axis=0, ddof=1) / math.sqrt(reps)
    return ZeroCountCurve(ens.grid, reps, zm, zh, am, ah)


def ordering_margin(m2_mean, m2_half, zero_mean, zero_half) -> np.ndarray:
    """Joint 95% margin for the E(m^2) <= E(zero count) comparison."""
    se_m = np.asarray(m2_half) / Z95
    se_z = np.asarray(zero_half) / Z95
    return Z95 * np.sqrt(se_m**2 + se_z**2)


@dataclass
class TransitionStats:
    """Empirical Y-transition law against the exact conditional values."""

    offzero: np.ndarray
    atzero: np.ndarray

    def offzero_total(self) -> int:
        return int(self.offzero.sum())

    def offzero_freqs(self) -> np.ndarray:
        return self.offzero / self.offzero.sum()

    def offzero_z(self) -> np.ndarray:
        """Per-category z-scores against (1/4, 1/2, 1/4)."""
        n = self.offzero.sum()
        p = np.array([0.25, 0.5, 0.25])
        return (self.offzero - n * p) / np.sqrt(n * p * (1 - p))

    def atzero_trials(self, v: int) -> int:
        return int(self.atzero[v].sum())

    def atzero_stay_z(self, v: int):
        """(empirical stay prob, target (1+1/v)/2, z-score) at occupancy v.

        At v = 1 the transition is deterministic (target 1, se 0): the
        z-score is 0 when the empirical value matches exactly, else inf.
        """
        n = self.atzero_trials(v)
        if n == 0:
            raise ValueError(f"no meetings with occupancy {v}")
        p = (1.0 + 1.0 / v) / 2.0
        phat = self.atzero[v, 0] / n
        se = math.sqrt(p * (1 - p) / n)
        if se == 0.0:
            return phat, p, 0.0 if phat == p else math.inf
        return phat, p, (phat - p) / se

    def pooled_geq2(self):
        """(stay prob over v >= 2, trials, 3-sigma binomial margin at 3/4)."""
        s = int(self.atzero[2:, 0].sum())
        n = s + int(self.atzero[2:, 1].sum())
        if n == 0:
            raise ValueError("no meetings with occupancy >= 2")
        return s / n, n, 3.0 * math.sqrt(0.75 * 0.25 / n)


def transition_stats(ens: CoupledEnsemble) -> TransitionStats:
    return TransitionStats(ens.offzero.astype(np.float64), ens.atzero.copy())


# ---------------------------------------------------------------------------
# Holding-time and tau_0 tails.
# ---------------------------------------------------------------------------


def _tau_chunk(start, count, seed, t_max):
    K = active()
    keys = K.derive_env_keys(seed, start, count)
    tau = K.single_walk_tau(keys, t_max, True)
    if (tau < 0).any():
        raise RuntimeError("walk hit a dead cell")
    return tau


@dataclass
class TailCurve:
    thresholds: np.ndarray
    survival: np.ndarray
    counts: np.ndarray
    censored: int

    def to_dict(self) -> dict:
        return {
            "thresholds": [int(t) for t in self.thresholds],
            "survival": list(map(float, self.survival)),
            "survivor_counts": [int(c) for c in self.counts],
            "censored": self.censored,
        }


def survival_curve(samples: np.ndarray, thresholds, censor_at: int) -> TailCurve:
    thresholds = np.asarray(sorted(thresholds), dtype=np.int64)
    if thresholds[-1] > censor_at:
        raise ValueError("threshold beyond the censoring horizon")
    samples = np.asarray(samples)
    counts = np.array([(samples >= t).sum() for t in thresholds], dtype=np.int64)
    return TailCurve(thresholds, counts / len(samples), counts,
                     int((samples >= censor_at).sum()))


def fit_sqrt_decay(curve: TailCurve, lo: int | None = None,
                   hi: int | None = None):
    """OLS fit of log survival = a - b sqrt(t) over thresholds with
    survivors (empty-tail points carry no information about the rate).

    Returns (a, b, r2, points_used).
    """
    keep = curve.counts > 0
    if lo is not None:
        keep &= curve.thresholds >= lo
    if hi is not None:
        keep &= curve.thresholds <= hi
    t = curve.thresholds[keep].astype(np.float64)
    if len(t) < 3:
        raise ValueError("not enough populated thresholds for a tail fit")
    x = np.sqrt(t)
    y = np.log(curve.survival[keep])
    xb, yb = x.mean(), y.mean()
    sxx = np.sum((x - xb) ** 2)
    slope = float(np.sum((x - xb) * (y - yb)) / sxx)
    a = float(yb - slope * xb)
    resid = y - slope * x - a
    sst = float(np.sum((y - yb) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return a, -slope, r2, int(len(t))


@dataclass
class TailReport:
    """Survival of tau_0 (first meeting with a crowd) and of the longest
    holding time, with the stretched-exponential fit of the tau_0 tail."""

    tau_replicates: int
    hold_replicates: int
    horizon: int
    tau_curve: TailCurve
    hold_curve: TailCurve
    fit_intercept: float
    fit_slope: float
    fit_r2: float
    fit_points: int

    def to_dict(self) -> dict:
        return {
            "schema": "rmsplit/tails/v1",
            "horizon": self.horizon,
            "tau_replicates": self.tau_replicates,
            "hold_replicates": self.hold_replicates,
            "tau0": self.tau_curve.to_dict(),
            "max_hold": self.hold_curve.to_dict(),
            "fit": {
                "model": "log S = a - b*sqrt(t)",
                "a": self.fit_intercept,
                "b": self.fit_slope,
                "r2": self.fit_r2,
                "points": self.fit_points,
            },
        }


def holding_tail(seed: int, n: int, tau_replicates: int, *,
                 hold_replicates: int = 512, hold_horizon: int | None = None,
                 thresholds=None, fit_lo: int = 25, fit_hi: int = 400,
                 threads: int = 1, chunk_size: int = 8192) -> TailReport:
    """tau_0 survival from single walks (cheap, early-terminating) and
    max-hold survival from a coupled ensemble."""
    if thresholds is None:
        thresholds = [t * t for t in range(1, int(math.isqrt(n)) + 1)]
    parts = map_chunks(_tau_chunk, tau_replicates, (seed, n),
                       threads=threads, chunk_size=chunk_size)
    tau = np.concatenate(parts)
    tau_curve = survival_curve(tau, thresholds, n)
    hh = hold_horizon if hold_horizon is not None else n
    ens = run_coupled(seed, hh, hold_replicates, threads=threads,
                      chunk_size=min(chunk_size, 64))
    hold_thresholds = np.unique(np.concatenate(
        [[0], np.asarray(thresholds)[np.asarray(thresholds) <= hh]]))
    hold_curve = survival_curve(ens.max_hold, hold_thresholds, hh)
    hold_curve = TailCurve(hold_curve.thresholds, hold_curve.survival,
                           hold_curve.counts, int(ens.max_hold_censored.sum()))
    a, b, r2, npts = fit_sqrt_decay(tau_curve, fit_lo, fit_hi)
    return TailReport(tau_replicates, hold_replicates, n, tau_curve,
                      hold_curve, a, b, r2, npts)


# ---------------------------------------------------------------------------
# Exact crosser intensity mu_t.
# ---------------------------------------------------------------------------


def mu_t_exact(t: int) -> float:
    """Expected number of one-sided levels 2k with S_t >= 2k, exactly.

    mu_t = sum_{k>=1} P(S_t >= 2k) = E floor(max(S_t, 0)/2), evaluated with
    integer binomials and rounded once at the end.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    num = 0
    binom = 1  # C(t, 0)
    for j in range(t + 1):
        s = 2 * j - t
        if s > 0:
            num += (s // 2) * binom
        binom = binom * (t - j) // (j + 1)
    return float(Fraction(num, 2**t))


# ---------------------------------------------------------------------------
# Quenched CLT report.
# ---------------------------------------------------------------------------


@dataclass
class CltReport:
    """KS distance of the rescaled terminal mass row to the standard normal,
    and the quenched variance sum y^2 p(T, y) / T."""

    horizon: int
    seed: int
    replicate: int
    sigma2: float
    ks: float
    cons_err: float

    def to_dict(self) -> dict:
        return {
            "schema": "rmsplit/clt/v1",
            "horizon": self.horizon,
            "seed": self.seed,
            "replicate": self.replicate,
            "sigma2": self.sigma2,
            "ks": self.ks,
            "max_conservation_error": self.cons_err,
        }


def clt_report(spec: EnvSeedSpec, T: int | None = None) -> CltReport:
    if T is None:
        T = spec.horizon
    row, cons = terminal_mass_row(spec, T)
    if cons > 1e-9:
        raise RuntimeError(f"conservation violated upstream: {cons:.3e}")
    if T == 0:
        return CltReport(0, spec.seed, spec.replicate, 0.0,
                         ks_distance([0.0], [1.0]), cons)
    ys = 2.0 * np.arange(T + 1, dtype=np.float64) - T
    sigma2 = float(np.sum(ys * ys * row)) / T
    ks = ks_distance(ys / math.sqrt(T), row)
    return CltReport(T, spec.seed, spec.replicate, sigma2, ks, cons)


def _clt_chunk(start, count, seed, T):
    return [clt_report(EnvSeedSpec(seed, T, "size_biased", r))
            for r in range(start, start + count)]


def clt_multi(seed: int, T: int, n_envs: int, *, threads: int = 1) -> list:
    parts = map_chunks(_clt_chunk, n_envs, (seed, T), threads=threads,
                       chunk_size=1)
    return [r for p in parts for r in p]
