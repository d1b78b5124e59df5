"""Pure-numpy implementations of the hot kernels.

This is the fallback path (``RMS_NUMBA=0``) and the semantic reference for
the numba backend: integer outputs (environment counts, walk trajectories)
must match the compiled kernels bit for bit, floating-point reductions to
within a few ulps.

Lattice conventions shared by every kernel:

* The environment row at time t covers sites y in [-t, t]; flat storage at
  ``offsets[t] + (y + t)``.
* Mass rows and walk positions use the "diagonal" index j = (y + t) / 2,
  valid because everything reachable from (0, 0) sits on the even parity
  class y == t (mod 2).  Only walkers starting on even sites can touch that
  class, so the streaming kernels simulate the even-site walkers only; the
  per-walker keyed streams make this equivalent to simulating everyone.
* A walker's step signs are the bits of its counter stream, 64 steps per
  word: sign(t) = bit (t mod 64) of out(walker_key, t div 64).
"""

from __future__ import annotations

import numpy as np

from .. import rng

name = "numpy"

# Occupancy tallies are capped here; the last bucket pools v >= VCAP.
VCAP = 8

_U = np.uint64
_GAMMA = _U(rng.GAMMA)
_M1 = _U(0xBF58476D1CE4E5B9)
_M2 = _U(0x94D049BB133111EB)
_ONE = _U(1)
_PCDF = rng.POISSON1_CDF


def mix64_arr(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> _U(30)
    z *= _M1
    z ^= z >> _U(27)
    z *= _M2
    z ^= z >> _U(31)
    return z


def _out_labels(key: int, labels: np.ndarray) -> np.ndarray:
    """stream_out(key, label) over an array of u64 labels."""
    return mix64_arr(_U(key) + (labels.astype(np.uint64) + _ONE) * _GAMMA)


def _out_keys(keys: np.ndarray, label: int) -> np.ndarray:
    """stream_out(key, label) over an array of keys."""
    inc = _U(((label + 1) * rng.GAMMA) & rng.MASK64)
    return mix64_arr(keys.astype(np.uint64) + inc)


def _unit(words: np.ndarray) -> np.ndarray:
    return (words >> _U(11)).astype(np.float64) * rng.UNIT_SCALE


def stream_out_arr(key: int, labels: np.ndarray) -> np.ndarray:
    return _out_labels(key, labels)


def derive_env_keys(seed: int, start: int, count: int) -> np.ndarray:
    dom = rng.stream_out(rng.root_key(seed), rng.DOM_REPLICATE)
    reps = np.arange(start, start + count, dtype=np.int64).view(np.uint64)
    return _out_labels(dom, reps)


def site_counts(env_k: int, lo: int, hi: int, step: int, size_biased: bool) -> np.ndarray:
    sites = np.arange(lo, hi + 1, step, dtype=np.int64)
    dom = rng.stream_out(env_k, rng.DOM_SITE)
    u = _unit(_out_labels(dom, sites.view(np.uint64)))
    counts = np.searchsorted(_PCDF, u, side="right").astype(np.int64)
    if size_biased:
        origin = np.nonzero(sites == 0)[0]
        counts[origin] += 1
    return counts


def origin_counts(env_keys: np.ndarray, size_biased: bool) -> np.ndarray:
    doms = _out_keys(env_keys, rng.DOM_SITE)
    u = _unit(_out_keys(doms, 0))
    counts = np.searchsorted(_PCDF, u, side="right").astype(np.int64)
    if size_biased:
        counts += 1
    return counts


def _walker_arrays(env_k: int, sites: np.ndarray, counts: np.ndarray):
    """Per-walker (key, start position) arrays, enumerated site by site."""
    total = int(counts.sum())
    wd = rng.stream_out(env_k, rng.DOM_WALKER)
    skeys = _out_labels(wd, sites.view(np.uint64))
    start_sites = np.repeat(sites, counts)
    key_rep = np.repeat(skeys, counts)
    firsts = np.repeat(np.cumsum(counts) - counts, counts)
    idx = (np.arange(total, dtype=np.int64) - firsts).view(np.uint64)
    wkeys = mix64_arr(key_rep + (idx + _ONE) * _GAMMA)
    return wkeys, start_sites.astype(np.int64)


class _WalkerField:
    """Lock-step walker simulation producing one environment row per step."""

    def __init__(self, env_k: int, sites: np.ndarray, size_biased: bool):
        counts = site_counts(env_k, int(sites[0]), int(sites[-1]),
                             int(sites[1] - sites[0]) if len(sites) > 1 else 1,
                             size_biased) if len(sites) else np.zeros(0, np.int64)
        self.keys, self.pos = _walker_arrays(env_k, sites, counts)
        self.words = np.zeros_like(self.keys)

    def step_bits(self, t: int) -> np.ndarray:
        if t & 63 == 0:
            inc = _U((((t >> 6) + 1) * rng.GAMMA) & rng.MASK64)
            self.words = mix64_arr(self.keys + inc)
        return ((self.words >> _U(t & 63)) & _ONE).astype(np.int64)

    def advance(self, bits: np.ndarray) -> None:
        self.pos += 2 * bits - 1


def build_env(env_k: int, horizon: int, size_biased: bool, lo: int, hi: int):
    offsets = np.zeros(horizon + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(2 * np.arange(horizon, dtype=np.int64) + 1)
    ep = np.zeros(int(offsets[-1]), dtype=np.int32)
    em = np.zeros(int(offsets[-1]), dtype=np.int32)
    sites = np.arange(lo, hi + 1, dtype=np.int64)
    field = _WalkerField(env_k, sites, size_biased)
    for t in range(horizon):
        bits = field.step_bits(t)
        inwin = (field.pos >= -t) & (field.pos <= t)
        iy = (field.pos[inwin] + t).astype(np.int64)
        vrow = np.bincount(iy, minlength=2 * t + 1)
        eprow = np.bincount(iy[bits[inwin] == 1], minlength=2 * t + 1)
        ep[offsets[t]:offsets[t + 1]] = eprow
        em[offsets[t]:offsets[t + 1]] = vrow - eprow
        field.advance(bits)
    return ep, em, offsets


# ---------------------------------------------------------------------------
# Mass dynamic programming.
# ---------------------------------------------------------------------------


def _dp_step(cur: np.ndarray, rp: np.ndarray, rm: np.ndarray) -> np.ndarray:
    nxt = np.zeros(len(cur) + 1, dtype=np.float64)
    nxt[1:] = cur * rp
    nxt[:-1] += cur * rm
    return nxt


def _row_ratios(eprow: np.ndarray, emrow: np.ndarray):
    v = (eprow + emrow).astype(np.float64)
    live = v > 0
    rp = np.where(live, eprow / np.where(live, v, 1.0), 0.0)
    rm = np.where(live, emrow / np.where(live, v, 1.0), 0.0)
    return v, rp, rm


class _SweepState:
    """Shared functional bookkeeping for the DP sweeps."""

    def __init__(self, n: int, checkpoints: np.ndarray):
        self.cks = checkpoints
        self.m = np.zeros(len(checkpoints), dtype=np.float64)
        self.B = np.zeros(len(checkpoints), dtype=np.float64)
        self.Z = np.zeros(len(checkpoints), dtype=np.float64)
        self.accB = 0.0
        self.accZ = 0.0
        self.cons_err = 0.0
        self._next = 0

    def at_row(self, t: int, cur: np.ndarray) -> None:
        self.cons_err = max(self.cons_err, abs(float(np.sum(cur)) - 1.0))
        while self._next < len(self.cks) and self.cks[self._next] == t:
            ys = 2.0 * np.arange(t + 1, dtype=np.float64) - t
            self.m[self._next] = float(np.sum(ys * cur))
            self.B[self._next] = self.accB
            self.Z[self._next] = self.accZ
            self._next += 1

    def absorb(self, cur: np.ndarray, v: np.ndarray) -> None:
        p2 = cur * cur
        self.accZ += float(np.sum(p2))
        live = v > 0
        self.accB += float(np.sum(np.where(live, p2 / np.where(live, v, 1.0), 0.0)))


def mass_sweep(ep, em, offsets, n: int, checkpoints: np.ndarray):
    st = _SweepState(n, checkpoints)
    cur = np.array([1.0])
    st.at_row(0, cur)
    for t in range(n):
        base = offsets[t]
        eprow = ep[base:base + 2 * t + 1:2].astype(np.float64)
        emrow = em[base:base + 2 * t + 1:2].astype(np.float64)
        v, rp, rm = _row_ratios(eprow, emrow)
        st.absorb(cur, v)
        cur = _dp_step(cur, rp, rm)
        st.at_row(t + 1, cur)
    return cur, st.cons_err, st.m, st.B, st.Z


def _stream_sites(n: int) -> np.ndarray:
    return np.arange(-2 * n, 2 * n + 1, 2, dtype=np.int64)


def mass_sweep_stream(env_k: int, n: int, size_biased: bool, checkpoints: np.ndarray):
    st = _SweepState(n, checkpoints)
    field = _WalkerField(env_k, _stream_sites(n), size_biased)
    cur = np.array([1.0])
    st.at_row(0, cur)
    for t in range(n):
        bits = field.step_bits(t)
        inwin = (field.pos >= -t) & (field.pos <= t)
        jj = ((field.pos[inwin] + t) >> 1).astype(np.int64)
        vrow = np.bincount(jj, minlength=t + 1).astype(np.float64)
        eprow = np.bincount(jj[bits[inwin] == 1], minlength=t + 1).astype(np.float64)
        v, rp, rm = _row_ratios(eprow, vrow - eprow)
        st.absorb(cur, v)
        cur = _dp_step(cur, rp, rm)
        st.at_row(t + 1, cur)
        field.advance(bits)
    return cur, st.cons_err, st.m, st.B, st.Z


def mass_ensemble_stream(env_keys: np.ndarray, n: int, size_biased: bool,
                         checkpoints: np.ndarray):
    reps = len(env_keys)
    C = len(checkpoints)
    m = np.zeros((reps, C))
    B = np.zeros((reps, C))
    Z = np.zeros((reps, C))
    sum_row = np.zeros(n + 1)
    sumsq_row = np.zeros(n + 1)
    cons_max = 0.0
    for r in range(reps):
        row, err, mr, Br, Zr = mass_sweep_stream(int(env_keys[r]), n, size_biased,
                                                 checkpoints)
        m[r] = mr
        B[r] = Br
        Z[r] = Zr
        sum_row += row
        sumsq_row += row * row
        cons_max = max(cons_max, err)
    return m, B, Z, sum_row, sumsq_row, cons_max


# ---------------------------------------------------------------------------
# Quenched walks.
# ---------------------------------------------------------------------------


def walk_terminal_hist(ep, em, offsets, env_k: int, n: int, n_walks: int,
                       walk_id0: int, v_times: np.ndarray):
    wd = rng.stream_out(env_k, rng.DOM_WALK)
    ids = np.arange(walk_id0, walk_id0 + n_walks, dtype=np.int64).view(np.uint64)
    wkeys = _out_labels(wd, ids)
    pos = np.zeros(n_walks, dtype=np.int64)
    hist = np.zeros(n + 1, dtype=np.int64)
    vhist = np.zeros((len(v_times), VCAP + 1), dtype=np.int64)
    err = 0
    for t in range(n):
        base = offsets[t]
        cells = base + (pos + t)
        epv = ep[cells].astype(np.int64)
        vv = epv + em[cells].astype(np.int64)
        if np.any(vv == 0):
            err = 1
            break
        hit = np.nonzero(v_times == t)[0]
        if len(hit):
            vtal = np.bincount(np.minimum(vv, VCAP), minlength=VCAP + 1)
            vhist[hit[0]] += vtal
        u = _unit(_out_keys(wkeys, t))
        up = u < epv / vv
        pos = np.where(up, pos + 1, pos - 1)
    if err == 0:
        jj = (pos + n) >> 1
        hist = np.bincount(jj, minlength=n + 1).astype(np.int64)
    return hist, vhist, err


def coupled_ensemble_stream(env_keys: np.ndarray, n: int, size_biased: bool,
                            checkpoints: np.ndarray):
    reps = len(env_keys)
    C = len(checkpoints)
    zero_at = np.zeros((reps, C), dtype=np.int64)
    a_at = np.zeros((reps, C), dtype=np.int64)
    gamma_sum = np.zeros(reps, dtype=np.int64)
    max_hold = np.zeros(reps, dtype=np.int64)
    max_hold_cens = np.zeros(reps, dtype=np.uint8)
    tau0 = np.full(reps, n, dtype=np.int64)
    offzero = np.zeros(3, dtype=np.int64)
    atzero = np.zeros((VCAP + 1, 2), dtype=np.int64)
    err = 0
    sites = _stream_sites(n)
    for r in range(reps):
        env_k = int(env_keys[r])
        field = _WalkerField(env_k, sites, size_biased)
        wd = rng.stream_out(env_k, rng.DOM_WALK)
        ka = rng.stream_out(wd, 0)
        kb = rng.stream_out(wd, 1)
        xa = 0
        xb = 0
        zero_counter = 0
        a_counter = 0
        zrun = 0
        gsum = 0
        gmax = 0
        gmax_cens = False
        tau = n
        nxt_ck = 0
        for i in range(n + 1):
            yv = xa - xb
            while nxt_ck < C and checkpoints[nxt_ck] == i:
                zero_at[r, nxt_ck] = zero_counter
                nxt_ck += 1
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
            for ck in range(C):
                if checkpoints[ck] == i:
                    a_at[r, ck] = a_counter
            if i == n:
                break
            t = i
            bits = field.step_bits(t)
            at_a = field.pos == xa
            va = int(np.count_nonzero(at_a))
            epa = int(bits[at_a].sum())
            if xb == xa:
                vb, epb = va, epa
            else:
                at_b = field.pos == xb
                vb = int(np.count_nonzero(at_b))
                epb = int(bits[at_b].sum())
            if va == 0 or vb == 0:
                err = 1
                break
            if tau == n and va >= 2:
                tau = t
            ua = rng.to_unit(rng.stream_out(ka, t))
            ub = rng.to_unit(rng.stream_out(kb, t))
            xa2 = xa + (1 if ua < epa / va else -1)
            xb2 = xb + (1 if ub < epb / vb else -1)
            y2 = xa2 - xb2
            if yv != 0:
                offzero[(y2 - yv) // 2 + 1] += 1
            else:
                atzero[min(va, VCAP), 0 if y2 == 0 else 1] += 1
            field.advance(bits)
            xa, xb = xa2, xb2
        if err:
            break
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
    return (zero_at, a_at, gamma_sum, max_hold, max_hold_cens, tau0,
            offzero, atzero, err)


def single_walk_tau(env_keys: np.ndarray, t_max: int, size_biased: bool) -> np.ndarray:
    reps = len(env_keys)
    out = np.full(reps, t_max, dtype=np.int64)
    sites = _stream_sites(t_max)
    for r in range(reps):
        env_k = int(env_keys[r])
        field = _WalkerField(env_k, sites, size_biased)
        wk = rng.walk_key(env_k, 0)
        x = 0
        for t in range(t_max):
            bits = field.step_bits(t)
            at_x = field.pos == x
            v = int(np.count_nonzero(at_x))
            if v >= 2:
                out[r] = t
                break
            ex = int(bits[at_x].sum())
            if v == 0:
                out[r] = -1
                break
            u = rng.walk_uniform(wk, t)
            x += 1 if u < ex / v else -1
            field.advance(bits)
    return out


# ---------------------------------------------------------------------------
# Lazy reference walk (increments -2/0/+2 with probs 1/4, 1/2, 1/4).
# ---------------------------------------------------------------------------


def _lazy_incs(wkeys: np.ndarray, t: int) -> np.ndarray:
    u = _unit(_out_keys(wkeys, t))
    return np.where(u < 0.25, 2, np.where(u < 0.75, 0, -2)).astype(np.int64)


def lazy_ensemble(key: int, n_walks: int, n: int, checkpoints: np.ndarray):
    ids = np.arange(n_walks, dtype=np.int64).view(np.uint64)
    wkeys = _out_labels(key, ids)
    pos = np.zeros(n_walks, dtype=np.int64)
    rstar = np.zeros(n_walks, dtype=np.int64)
    C = len(checkpoints)
    rstar_at = np.zeros((n_walks, C), dtype=np.int64)
    inc_tally = np.zeros(3, dtype=np.int64)
    nxt = 0
    for t in range(n + 1):
        while nxt < C and checkpoints[nxt] == t:
            rstar_at[:, nxt] = rstar
            nxt += 1
        if t == n:
            break
        inc = _lazy_incs(wkeys, t)
        inc_tally += np.bincount((inc >> 1) + 1, minlength=3)
        pos += inc
        rstar = np.maximum(rstar, pos)
    return inc_tally, rstar_at


def lazy_hitting_times(key: int, n_walks: int, level: int, t_cap: int) -> np.ndarray:
    ids = np.arange(n_walks, dtype=np.int64).view(np.uint64)
    wkeys = _out_labels(key, ids)
    pos = np.zeros(n_walks, dtype=np.int64)
    out = np.full(n_walks, t_cap, dtype=np.int64)
    alive = np.ones(n_walks, dtype=bool)
    for t in range(1, t_cap + 1):
        if not alive.any():
            break
        inc = _lazy_incs(wkeys, t - 1)
        pos[alive] += inc[alive]
        hit = alive & (pos >= level)
        out[hit] = t
        alive &= ~hit
    return out
