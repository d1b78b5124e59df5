"""Numba @njit implementations of the hot kernels.

Semantics match ``numpy_backend`` exactly: identical counter streams,
identical integer outputs, and the same order of floating-point operations
in the DP row update (so mass rows agree bit for bit).  Scalar reductions
here use compensated (Kahan) summation; the numpy path uses pairwise
``np.sum``, so functionals agree to a few ulps rather than exactly.

Cold utilities (key derivation, site counts) are reused from the numpy
backend; only the per-step loops are compiled.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .. import rng
from . import numpy_backend as _npb

name = "numba"
VCAP = _npb.VCAP

# Cold paths shared with the numpy backend.
mix64_arr = _npb.mix64_arr
stream_out_arr = _npb.stream_out_arr
derive_env_keys = _npb.derive_env_keys
site_counts = _npb.site_counts
origin_counts = _npb.origin_counts

_PCDF = rng.POISSON1_CDF
_GAMMA = np.uint64(rng.GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_U63 = np.uint64(63)
_UNIT = rng.UNIT_SCALE
_DOM_SITE = np.uint64(rng.DOM_SITE)
_DOM_WALKER = np.uint64(rng.DOM_WALKER)
_DOM_WALK = np.uint64(rng.DOM_WALK)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _U30)) * _M1
    z = (z ^ (z >> _U27)) * _M2
    return z ^ (z >> _U31)


@njit(cache=True, inline="always")
def _out(key, label):
    return _mix64(key + (label + _U1) * _GAMMA)


@njit(cache=True, inline="always")
def _unit(word):
    return np.float64(word >> _U11) * _UNIT


@njit(cache=True, inline="always")
def _poisson1(u):
    m = 0
    while u >= _PCDF[m]:
        m += 1
    return m


@njit(cache=True)
def _init_walkers(env_k, lo, hi, step, size_biased):
    site_dom = _out(env_k, _DOM_SITE)
    walker_dom = _out(env_k, _DOM_WALKER)
    nsites = (hi - lo) // step + 1
    counts = np.empty(nsites, np.int64)
    total = 0
    for s in range(nsites):
        k = lo + s * step
        c = _poisson1(_unit(_out(site_dom, np.uint64(k))))
        if size_biased and k == 0:
            c += 1
        counts[s] = c
        total += c
    wkeys = np.empty(total, np.uint64)
    pos = np.empty(total, np.int64)
    w = 0
    for s in range(nsites):
        k = lo + s * step
        skey = _out(walker_dom, np.uint64(k))
        for i in range(counts[s]):
            wkeys[w] = _out(skey, np.uint64(i))
            pos[w] = k
            w += 1
    return wkeys, pos


@njit(cache=True, inline="always")
def _refresh_words(wkeys, words, t):
    ctr = (np.uint64(t >> 6) + _U1) * _GAMMA
    for w in range(len(wkeys)):
        words[w] = _mix64(wkeys[w] + ctr)


@njit(cache=True)
def _build_env(env_k, horizon, size_biased, lo, hi):
    offsets = np.zeros(horizon + 1, np.int64)
    for t in range(horizon):
        offsets[t + 1] = offsets[t] + 2 * t + 1
    ep = np.zeros(offsets[horizon], np.int32)
    em = np.zeros(offsets[horizon], np.int32)
    wkeys, pos = _init_walkers(env_k, lo, hi, 1, size_biased)
    words = np.zeros(len(wkeys), np.uint64)
    for t in range(horizon):
        if t & 63 == 0:
            _refresh_words(wkeys, words, t)
        tb = np.uint64(t & 63)
        base = offsets[t]
        for w in range(len(wkeys)):
            y = pos[w]
            b = np.int64((words[w] >> tb) & _U1)
            if -t <= y <= t:
                if b:
                    ep[base + y + t] += 1
                else:
                    em[base + y + t] += 1
            pos[w] = y + 2 * b - 1
    return ep, em, offsets


def build_env(env_k: int, horizon: int, size_biased: bool, lo: int, hi: int):
    return _build_env(np.uint64(env_k), horizon, size_biased, lo, hi)


# ---------------------------------------------------------------------------
# Mass dynamic programming.
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _kahan_add(s, c, x):
    y = x - c
    t = s + y
    c = (t - s) - y
    return t, c


@njit(cache=True)
def _row_sum_err(cur, np1):
    s = 0.0
    c = 0.0
    for j in range(np1):
        s, c = _kahan_add(s, c, cur[j])
    return abs(s - 1.0)


@njit(cache=True)
def _row_mean_disp(cur, t):
    s = 0.0
    c = 0.0
    for j in range(t + 1):
        s, c = _kahan_add(s, c, (2.0 * j - t) * cur[j])
    return s


@njit(cache=True)
def _dp_core(n, cks, cur, nxt, vrow, eprow, row_at, m_out, B_out, Z_out,
             stream_mode, env_k, size_biased, ep, em, offsets):
    """Shared sweep: stream_mode=1 regenerates env rows from walkers,
    stream_mode=0 reads the materialized arrays ep/em/offsets."""
    nck = len(cks)
    next_ck = 0
    cur[0] = 1.0
    cons = _row_sum_err(cur, 1)
    accB = 0.0
    accBc = 0.0
    accZ = 0.0
    accZc = 0.0
    if nck and cks[0] == 0:
        m_out[0] = 0.0
        B_out[0] = 0.0
        Z_out[0] = 0.0
        next_ck = 1
    if stream_mode == 1:
        wkeys, pos = _init_walkers(env_k, -2 * n, 2 * n, 2, size_biased)
    else:
        wkeys = np.empty(0, np.uint64)
        pos = np.empty(0, np.int64)
    words = np.zeros(len(wkeys), np.uint64)
    for t in range(n):
        if stream_mode == 1:
            for j in range(t + 1):
                vrow[j] = 0.0
                eprow[j] = 0.0
            if t & 63 == 0:
                _refresh_words(wkeys, words, t)
            tb = np.uint64(t & 63)
            for w in range(len(wkeys)):
                y = pos[w]
                b = np.int64((words[w] >> tb) & _U1)
                if -t <= y <= t:
                    j = (y + t) >> 1
                    vrow[j] += 1.0
                    eprow[j] += b
                pos[w] = y + 2 * b - 1
        else:
            base = offsets[t]
            for j in range(t + 1):
                e1 = np.float64(ep[base + 2 * j])
                e2 = np.float64(em[base + 2 * j])
                eprow[j] = e1
                vrow[j] = e1 + e2
        # functionals of row t, then the DP step to row t+1
        for j in range(t + 1):
            p = cur[j]
            if p != 0.0:
                p2 = p * p
                accZ, accZc = _kahan_add(accZ, accZc, p2)
                if vrow[j] > 0.0:
                    accB, accBc = _kahan_add(accB, accBc, p2 / vrow[j])
        nxt[0] = 0.0
        for j in range(t + 1):
            v = vrow[j]
            rp = eprow[j] / v if v > 0.0 else 0.0
            nxt[j + 1] = cur[j] * rp
        for j in range(t + 1):
            v = vrow[j]
            rm = (v - eprow[j]) / v if v > 0.0 else 0.0
            nxt[j] += cur[j] * rm
        for j in range(t + 2):
            cur[j] = nxt[j]
        err = _row_sum_err(cur, t + 2)
        if err > cons:
            cons = err
        if next_ck < nck and cks[next_ck] == t + 1:
            m_out[next_ck] = _row_mean_disp(cur, t + 1)
            B_out[next_ck] = accB
            Z_out[next_ck] = accZ
            next_ck += 1
        if row_at >= 0 and t + 1 == row_at:
            break
    return cons


def _sweep(n, checkpoints, stream_mode, env_k, size_biased, ep, em, offsets):
    cks = np.asarray(checkpoints, dtype=np.int64)
    cur = np.zeros(n + 2, np.float64)
    nxt = np.zeros(n + 2, np.float64)
    vrow = np.zeros(n + 1, np.float64)
    eprow = np.zeros(n + 1, np.float64)
    m_out = np.zeros(len(cks), np.float64)
    B_out = np.zeros(len(cks), np.float64)
    Z_out = np.zeros(len(cks), np.float64)
    cons = _dp_core(n, cks, cur, nxt, vrow, eprow, -1, m_out, B_out, Z_out,
                    stream_mode, np.uint64(env_k), size_biased, ep, em, offsets)
    return cur[:n + 1].copy(), cons, m_out, B_out, Z_out


_NO_I4 = np.empty(0, np.int32)
_NO_I8 = np.empty(0, np.int64)


def mass_sweep(ep, em, offsets, n: int, checkpoints: np.ndarray):
    return _sweep(n, checkpoints, 0, 0, False, ep, em, offsets)


def mass_sweep_stream(env_k: int, n: int, size_biased: bool, checkpoints: np.ndarray):
    return _sweep(n, checkpoints, 1, env_k, size_biased, _NO_I4, _NO_I4, _NO_I8)


@njit(cache=True)
def _mass_ensemble(env_keys, n, size_biased, cks, m, B, Z, sum_row, sumsq_row):
    cur = np.zeros(n + 2, np.float64)
    nxt = np.zeros(n + 2, np.float64)
    vrow = np.zeros(n + 1, np.float64)
    eprow = np.zeros(n + 1, np.float64)
    ep = np.empty(0, np.int32)
    em = np.empty(0, np.int32)
    offsets = np.empty(0, np.int64)
    cons_max = 0.0
    for r in range(len(env_keys)):
        for j in range(n + 2):
            cur[j] = 0.0
        cons = _dp_core(n, cks, cur, nxt, vrow, eprow, -1, m[r], B[r], Z[r],
                        1, env_keys[r], size_biased, ep, em, offsets)
        if cons > cons_max:
            cons_max = cons
        for j in range(n + 1):
            p = cur[j]
            sum_row[j] += p
            sumsq_row[j] += p * p
    return cons_max


def mass_ensemble_stream(env_keys: np.ndarray, n: int, size_biased: bool,
                         checkpoints: np.ndarray):
    cks = np.asarray(checkpoints, dtype=np.int64)
    reps = len(env_keys)
    m = np.zeros((reps, len(cks)))
    B = np.zeros((reps, len(cks)))
    Z = np.zeros((reps, len(cks)))
    sum_row = np.zeros(n + 1)
    sumsq_row = np.zeros(n + 1)
    cons_max = _mass_ensemble(env_keys, n, size_biased, cks, m, B, Z,
                              sum_row, sumsq_row)
    return m, B, Z, sum_row, sumsq_row, cons_max


# ---------------------------------------------------------------------------
# Quenched walks.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _walk_terminal_hist(ep, em, offsets, env_k, n, n_walks, walk_id0, v_times):
    wd = _out(env_k, _DOM_WALK)
    hist = np.zeros(n + 1, np.int64)
    vhist = np.zeros((len(v_times), VCAP + 1), np.int64)
    for w in range(n_walks):
        wkey = _out(wd, np.uint64(walk_id0 + w))
        y = 0
        for t in range(n):
            cell = offsets[t] + y + t
            e1 = np.int64(ep[cell])
            v = e1 + np.int64(em[cell])
            if v == 0:
                return hist, vhist, 1
            for q in range(len(v_times)):
                if v_times[q] == t:
                    vv = v if v < VCAP else VCAP
                    vhist[q, vv] += 1
            u = _unit(_out(wkey, np.uint64(t)))
            if u < e1 / v:
                y += 1
            else:
                y -= 1
        hist[(y + n) >> 1] += 1
    return hist, vhist, 0


def walk_terminal_hist(ep, em, offsets, env_k: int, n: int, n_walks: int,
                       walk_id0: int, v_times: np.ndarray):
    return _walk_terminal_hist(ep, em, offsets, np.uint64(env_k), n, n_walks,
                               walk_id0, np.asarray(v_times, dtype=np.int64))


@njit(cache=True)
def _coupled_ensemble(env_keys, n, size_biased, cks, zero_at, a_at, gamma_sum,
                      max_hold, max_hold_cens, tau0, offzero, atzero):
    C = len(cks)
    for r in range(len(env_keys)):
        env_k = env_keys[r]
        wkeys, pos = _init_walkers(env_k, -2 * n, 2 * n, 2, size_biased)
        words = np.zeros(len(wkeys), np.uint64)
        wd = _out(env_k, _DOM_WALK)
        ka = _out(wd, _U0)
        kb = _out(wd, _U1)
        xa = 0
        xb = 0
        zero_counter = 0
        a_counter = 0
        zrun = 0
        gsum = 0
        gmax = 0
        gmax_cens = False
        tau = n
        next_ck = 0
        for i in range(n + 1):
            yv = xa - xb
            while next_ck < C and cks[next_ck] == i:
                zero_at[r, next_ck] = zero_counter
                next_ck += 1
            if yv == 0:
                zero_counter += 1
                zrun += 1
            else:
                if zrun > 0:
                    a_counter += 1
                    g = zrun - 1
                    gsum += g
                    if g > gmax:
                        gmax = g
                        gmax_cens = False
                    zrun = 0
            for q in range(C):
                if cks[q] == i:
                    a_at[r, q] = a_counter
            if i == n:
                break
            t = i
            if t & 63 == 0:
                _refresh_words(wkeys, words, t)
            tb = np.uint64(t & 63)
            va = 0
            epa = 0
            vb = 0
            epb = 0
            for w in range(len(wkeys)):
                y = pos[w]
                b = np.int64((words[w] >> tb) & _U1)
                if y == xa:
                    va += 1
                    epa += b
                if y == xb:
                    vb += 1
                    epb += b
                pos[w] = y + 2 * b - 1
            if va == 0 or vb == 0:
                return 1
            if tau == n and va >= 2:
                tau = t
            ua = _unit(_out(ka, np.uint64(t)))
            ub = _unit(_out(kb, np.uint64(t)))
            xa2 = xa + (1 if ua < epa / va else -1)
            xb2 = xb + (1 if ub < epb / vb else -1)
            y2 = xa2 - xb2
            if yv != 0:
                offzero[(y2 - yv) // 2 + 1] += 1
            else:
                vv = va if va < VCAP else VCAP
                atzero[vv, 0 if y2 == 0 else 1] += 1
            xa = xa2
            xb = xb2
        if zrun > 0:
            g = zrun - 1
            gsum += g
            if g > gmax:
                gmax = g
                gmax_cens = True
        gamma_sum[r] = gsum
        max_hold[r] = gmax
        max_hold_cens[r] = 1 if gmax_cens else 0
        tau0[r] = tau
    return 0


def coupled_ensemble_stream(env_keys: np.ndarray, n: int, size_biased: bool,
                            checkpoints: np.ndarray):
    cks = np.asarray(checkpoints, dtype=np.int64)
    reps = len(env_keys)
    C = len(cks)
    zero_at = np.zeros((reps, C), dtype=np.int64)
    a_at = np.zeros((reps, C), dtype=np.int64)
    gamma_sum = np.zeros(reps, dtype=np.int64)
    max_hold = np.zeros(reps, dtype=np.int64)
    max_hold_cens = np.zeros(reps, dtype=np.uint8)
    tau0 = np.full(reps, n, dtype=np.int64)
    offzero = np.zeros(3, dtype=np.int64)
    atzero = np.zeros((VCAP + 1, 2), dtype=np.int64)
    err = _coupled_ensemble(env_keys, n, size_biased, cks, zero_at, a_at,
                            gamma_sum, max_hold, max_hold_cens, tau0,
                            offzero, atzero)
    return (zero_at, a_at, gamma_sum, max_hold, max_hold_cens, tau0,
            offzero, atzero, err)


@njit(cache=True)
def _single_walk_tau(env_keys, t_max, size_biased):
    reps = len(env_keys)
    out = np.full(reps, t_max, np.int64)
    for r in range(reps):
        env_k = env_keys[r]
        wkeys, pos = _init_walkers(env_k, -2 * t_max, 2 * t_max, 2, size_biased)
        words = np.zeros(len(wkeys), np.uint64)
        wk = _out(_out(env_k, _DOM_WALK), _U0)
        x = 0
        for t in range(t_max):
            if t & 63 == 0:
                _refresh_words(wkeys, words, t)
            tb = np.uint64(t & 63)
            v = 0
            ex = 0
            for w in range(len(wkeys)):
                y = pos[w]
                b = np.int64((words[w] >> tb) & _U1)
                if y == x:
                    v += 1
                    ex += b
                pos[w] = y + 2 * b - 1
            if v >= 2:
                out[r] = t
                break
            if v == 0:
                out[r] = -1
                break
            u = _unit(_out(wk, np.uint64(t)))
            x += 1 if u < ex / v else -1
    return out


def single_walk_tau(env_keys: np.ndarray, t_max: int, size_biased: bool) -> np.ndarray:
    return _single_walk_tau(env_keys, t_max, size_biased)


# ---------------------------------------------------------------------------
# Lazy reference walk.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lazy_ensemble(key, n_walks, n, cks):
    C = len(cks)
    rstar_at = np.zeros((n_walks, C), np.int64)
    inc_tally = np.zeros(3, np.int64)
    for w in range(n_walks):
        wkey = _out(key, np.uint64(w))
        p = 0
        rstar = 0
        next_ck = 0
        for t in range(n + 1):
            while next_ck < C and cks[next_ck] == t:
                rstar_at[w, next_ck] = rstar
                next_ck += 1
            if t == n:
                break
            u = _unit(_out(wkey, np.uint64(t)))
            if u < 0.25:
                inc = 2
                inc_tally[2] += 1
            elif u < 0.75:
                inc = 0
                inc_tally[1] += 1
            else:
                inc = -2
                inc_tally[0] += 1
            p += inc
            if p > rstar:
                rstar = p
    return inc_tally, rstar_at


def lazy_ensemble(key: int, n_walks: int, n: int, checkpoints: np.ndarray):
    return _lazy_ensemble(np.uint64(key), n_walks, n,
                          np.asarray(checkpoints, dtype=np.int64))


@njit(cache=True)
def _lazy_hitting_times(key, n_walks, level, t_cap):
    out = np.full(n_walks, t_cap, np.int64)
    for w in range(n_walks):
        wkey = _out(key, np.uint64(w))
        p = 0
        for t in range(1, t_cap + 1):
            u = _unit(_out(wkey, np.uint64(t - 1)))
            if u < 0.25:
                p += 2
            elif u >= 0.75:
                p -= 2
            if p >= level:
                out[w] = t
                break
    return out


def lazy_hitting_times(key: int, n_walks: int, level: int, t_cap: int) -> np.ndarray:
    return _lazy_hitting_times(np.uint64(key), n_walks, level, t_cap)
