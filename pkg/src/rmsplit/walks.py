"""Quenched walks, coupled pairs, and the difference-process decomposition.

A walk in a fixed environment steps from (t, y) to (t+1, y+1) with
probability e+(t, y)/v(t, y), else to (t+1, y-1).  A coupled pair is two
walks from (0, 0) driven by independent uniforms in the same environment
(independent even when the walks share a cell).  The difference process
Y_i = X_i - Xtilde_i decomposes into excursions away from zero and holding
times at zero; away from zero Y moves like the lazy reference walk R with
increments -2/0/+2 at probabilities 1/4, 1/2, 1/4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .environment import Environment, EnvSeedSpec, generate
from .kernels import VCAP, active
from .mass import MeasureError, SupportError


class DeadCellError(RuntimeError):
    """Walk reached a cell with v = 0 (impossible from (0,0) in a
    size-biased environment: the walk follows walkers)."""


@dataclass
class WalkPath:
    start: tuple
    steps: np.ndarray  # int8, each +1 or -1

    def __post_init__(self):
        s = np.asarray(self.steps)
        if s.size and not np.isin(s, (-1, 1)).all():
            raise ValueError("walk steps must be +-1")

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def positions(self) -> np.ndarray:
        """Spatial coordinate at times start_t .. start_t + n."""
        pos = np.zeros(len(self.steps) + 1, dtype=np.int64)
        pos[0] = self.start[1]
        np.cumsum(self.steps, out=pos[1:])
        pos[1:] += self.start[1]
        return pos


@dataclass
class CoupledPaths:
    """Two independent walks from (0,0) in one environment.

    v_at_x[t] is the occupancy of the cell the first walk sits on at time
    t (recorded for t < n); at meeting times it is the occupancy governing
    whether the pair separates.
    """

    y_x: np.ndarray
    y_xt: np.ndarray
    v_at_x: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.y_x) - 1

    def y(self) -> np.ndarray:
        d = self.y_x - self.y_xt
        if (d & 1).any():
            raise ValueError("difference process must be even")
        return d


@dataclass
class DifferenceDecomposition:
    """Excursions (alpha_j, beta_j, T_j) and holding times of a Y path.

    A hold of gamma = (consecutive zero indices) - 1 sits before the first
    excursion and between consecutive ones; the trailing segment is flagged
    censored when the path ends inside it.  a(n) counts excursions with
    alpha_j <= n.
    """

    y_path: np.ndarray
    excursions: list          # (alpha, beta or None, length or None)
    holds: list               # (gamma, censored)
    a_n: int
    zero_count: int
    hold_occupancies: list | None = None

    @property
    def gamma_sum(self) -> int:
        return sum(g for g, _ in self.holds)

    @property
    def max_hold(self) -> int:
        return max((g for g, _ in self.holds), default=0)

    def check(self) -> None:
        n = len(self.y_path) - 1
        if self.zero_count > self.gamma_sum + self.a_n + 1:
            raise AssertionError("zero count exceeds holding-time bound")
        if self.a_n and self.zero_count > (self.a_n + 1) * (self.max_hold + 1):
            raise AssertionError("zero count exceeds (a(n)+1) max-hold bound")
        for alpha, beta, length in self.excursions:
            if abs(self.y_path[alpha]) != 2:
                raise AssertionError("excursion must open at |Y| = 2")
            if beta is not None:
                if self.y_path[beta] != 0 or length != beta - alpha:
                    raise AssertionError("bad excursion closure")
                if np.any(self.y_path[alpha:beta] == 0):
                    raise AssertionError("zero inside excursion")
            elif np.any(self.y_path[alpha:n + 1] == 0):
                raise AssertionError("zero inside censored excursion")


def walk_step(env: Environment, position: tuple, u: float) -> tuple:
    """One quenched transition from (t, y) driven by a uniform draw."""
    t, y = position
    v = env.v(t, y)
    if v == 0:
        raise DeadCellError(f"v(t={t}, y={y}) = 0")
    up = u < env.eplus(t, y) / v
    return (t + 1, y + 1 if up else y - 1)


def _as_env(env, n: int) -> Environment:
    if isinstance(env, EnvSeedSpec):
        if n > env.horizon:
            raise SupportError(f"n={n} exceeds spec horizon {env.horizon}")
        return generate(env)
    if n > env.horizon:
        raise SupportError(f"n={n} exceeds environment horizon {env.horizon}")
    return env


def sample_walk(env, n: int, walk_id: int = 0) -> WalkPath:
    """Sample one quenched walk from (0, 0) using stream ``walk_id``."""
    env = _as_env(env, n)
    if n > 0 and not env.size_biased:
        raise MeasureError("quenched walk sampling requires a size-biased env")
    wkey = rng.walk_key(env.spec.key, walk_id)
    steps = np.empty(n, dtype=np.int8)
    pos = (0, 0)
    for t in range(n):
        nxt = walk_step(env, pos, rng.walk_uniform(wkey, t))
        steps[t] = nxt[1] - pos[1]
        pos = nxt
    return WalkPath(start=(0, 0), steps=steps)


def sample_coupled(env, n: int, pair_id: int = 0) -> CoupledPaths:
    """Sample a coupled pair; pair r uses walk streams 2r and 2r + 1.

    The two next-step draws are independent uniforms even when the walks
    occupy the same cell, matching the law of two conditionally
    independent copies.  Pair 0 reproduces the batched kernel exactly.
    """
    env = _as_env(env, n)
    if n > 0 and not env.size_biased:
        raise MeasureError("quenched walk sampling requires a size-biased env")
    key = env.spec.key
    ka = rng.walk_key(key, 2 * pair_id)
    kb = rng.walk_key(key, 2 * pair_id + 1)
    y_x = np.zeros(n + 1, dtype=np.int64)
    y_xt = np.zeros(n + 1, dtype=np.int64)
    v_at = np.zeros(n, dtype=np.int64)
    pa = pb = (0, 0)
    for t in range(n):
        v_at[t] = env.v(*pa)
        pa = walk_step(env, pa, rng.walk_uniform(ka, t))
        pb = walk_step(env, pb, rng.walk_uniform(kb, t))
        y_x[t + 1] = pa[1]
        y_xt[t + 1] = pb[1]
    return CoupledPaths(y_x=y_x, y_xt=y_xt, v_at_x=v_at)


def decompose(y_path: np.ndarray,
              meeting_occupancies: np.ndarray | None = None
              ) -> DifferenceDecomposition:
    """Split a Y path into excursions and holding times.

    ``meeting_occupancies``, when given, holds v at the first walk's cell
    for each time i < n with Y_i = 0 (in path order); it is sliced per hold
    into ``hold_occupancies``.
    """
    y = np.asarray(y_path, dtype=np.int64)
    n = len(y) - 1
    if n < 0 or y[0] != 0:
        raise ValueError("Y path must start at 0")
    d = np.diff(y)
    if d.size and not np.isin(d, (-2, 0, 2)).all():
        raise ValueError("Y increments must lie in {-2, 0, +2}")
    if (y & 1).any():
        raise ValueError("Y values must be even")
    if meeting_occupancies is not None:
        expect = int(np.count_nonzero(y[:n] == 0))
        if len(meeting_occupancies) != expect:
            raise ValueError(f"need one occupancy per meeting time i < n "
                             f"({expect}), got {len(meeting_occupancies)}")

    excursions = []
    holds = []
    hold_occ = [] if meeting_occupancies is not None else None
    zero_count = int(np.count_nonzero(y[:n] == 0))
    n_meet = 0
    zrun = 0
    cur_occ: list = []
    alpha = None
    for i in range(n + 1):
        if y[i] == 0:
            if alpha is not None:
                excursions.append((alpha, i, i - alpha))
                alpha = None
            if hold_occ is not None and i < n:
                cur_occ.append(int(meeting_occupancies[n_meet]))
                n_meet += 1
            zrun += 1
        else:
            if zrun > 0:
                holds.append((zrun - 1, False))
                if hold_occ is not None:
                    hold_occ.append(np.array(cur_occ, dtype=np.int64))
                    cur_occ = []
                zrun = 0
            if alpha is None:
                alpha = i
    if alpha is not None:
        excursions.append((alpha, None, None))
    if zrun > 0:
        holds.append((zrun - 1, True))
        if hold_occ is not None:
            hold_occ.append(np.array(cur_occ, dtype=np.int64))
    a_n = sum(1 for a, _, _ in excursions if a <= n)
    dec = DifferenceDecomposition(y_path=y, excursions=excursions, holds=holds,
                                  a_n=a_n, zero_count=zero_count,
                                  hold_occupancies=hold_occ)
    dec.check()
    return dec


def decompose_coupled(paths: CoupledPaths) -> DifferenceDecomposition:
    """Decompose a sampled pair, wiring in the meeting-cell occupancies."""
    y = paths.y()
    n = len(y) - 1
    meets = paths.v_at_x[y[:n] == 0]
    return decompose(y, meeting_occupancies=meets)


# ---------------------------------------------------------------------------
# Lazy reference walk.
# ---------------------------------------------------------------------------


@dataclass
class LazyWalk:
    """Homogeneous walk with increments +2/0/-2 at probabilities 1/4,1/2,1/4."""

    steps: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.steps)
        if s.size and not np.isin(s, (-2, 0, 2)).all():
            raise ValueError("lazy walk increments must lie in {-2, 0, +2}")

    def positions(self) -> np.ndarray:
        pos = np.zeros(len(self.steps) + 1, dtype=np.int64)
        np.cumsum(self.steps, out=pos[1:])
        return pos

    def running_max(self) -> np.ndarray:
        return np.maximum.accumulate(np.maximum(self.positions(), 0))

    def hitting_time_to(self, level: int) -> int | None:
        """First time the walk reaches ``level`` (None if never)."""
        hit = np.nonzero(self.positions() >= level)[0]
        return int(hit[0]) if len(hit) else None


def lazy_walk(n: int, seed: int, walk_id: int = 0) -> LazyWalk:
    """Sample the reference walk from the (seed, walk_id) stream."""
    key = rng.stream_out(rng.root_key(seed), rng.DOM_LAZY)
    wkey = rng.stream_out(key, walk_id)
    steps = np.empty(n, dtype=np.int64)
    for t in range(n):
        u = rng.to_unit(rng.stream_out(wkey, t))
        steps[t] = 2 if u < 0.25 else (0 if u < 0.75 else -2)
    return LazyWalk(steps=steps)


# ---------------------------------------------------------------------------
# Separation statistics at meeting cells.
# ---------------------------------------------------------------------------


@dataclass
class SeparationTable:
    """Stay/leave counts of coupled pairs at meeting cells, by occupancy.

    Stratum v holds meetings with v(X) = v for v < VCAP; the last stratum
    pools v >= VCAP.  The one-step stay probability at occupancy v is
    (1 + 1/v)/2, so pooled over v >= 2 it cannot exceed 3/4.
    """

    stay: np.ndarray
    leave: np.ndarray

    def trials(self, v: int) -> int:
        return int(self.stay[v] + self.leave[v])

    def stay_prob(self, v: int) -> float:
        t = self.trials(v)
        if t == 0:
            raise ValueError(f"no meeting events at occupancy {v}")
        return float(self.stay[v]) / t

    def pooled_geq2(self):
        s = int(self.stay[2:].sum())
        n = s + int(self.leave[2:].sum())
        if n == 0:
            raise ValueError("no meeting events with v >= 2")
        return s / n, n


def separation_trials(seed: int, n: int, replicates: int,
                      start_replicate: int = 0) -> SeparationTable:
    """Tally next-step coincidence vs separation at meeting cells over an
    ensemble of coupled pairs in fresh size-biased environments."""
    K = active()
    keys = K.derive_env_keys(seed, start_replicate, replicates)
    out = K.coupled_ensemble_stream(keys, n, True, np.zeros(0, np.int64))
    atzero = out[7]
    if out[8]:
        raise DeadCellError("coupled sampler hit a dead cell")
    return SeparationTable(stay=atzero[:, 0].copy(), leave=atzero[:, 1].copy())
