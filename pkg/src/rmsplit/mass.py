"""Exact mass distribution by dynamic programming, plus the path-sum oracle.

The mass field p(t, y) is the quenched heat kernel of the walk: row t+1 is

    p(t+1, y) = p(t, y+1) e-(t, y+1)/v(t, y+1) + p(t, y-1) e+(t, y-1)/v(t, y-1)

with any term whose occupancy vanishes taken to be zero.  Rows live on the
parity class y == t (mod 2) inside the light cone |y| <= t, stored densely
at index j = (y + t) / 2.  The recursion conserves total mass exactly in
exact arithmetic; conservation is asserted (never renormalized), so drift
beyond 1e-9 flags a defect.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .environment import Environment, EnvSeedSpec
from .kernels import active, get

PATH_ORACLE_MAX_T = 12

ROWS_MAGIC = b"RMSMAS1"


class MeasureError(ValueError):
    """Mass process requires a size-biased environment (v(0,0) >= 1)."""


class SupportError(ValueError):
    """Requested row lies outside the stored environment horizon."""


class UndefinedCellError(ValueError):
    """Cell functional requested where v = 0."""


@dataclass
class MassField:
    """Mass rows for t = 0..n; rows[t][j] = p(t, 2j - t)."""

    rows: list

    @property
    def horizon(self) -> int:
        return len(self.rows) - 1

    def support(self, t: int) -> np.ndarray:
        return 2 * np.arange(t + 1, dtype=np.int64) - t

    def p(self, t: int, y: int) -> float:
        if (y + t) % 2 or abs(y) > t:
            return 0.0
        return float(self.rows[t][(y + t) >> 1])

    def total(self, t: int) -> float:
        return float(np.sum(self.rows[t]))

    def cells(self):
        """Yield (t, y, p) over the support, ascending t then y."""
        for t, row in enumerate(self.rows):
            ys = self.support(t)
            for j in range(t + 1):
                yield t, int(ys[j]), float(row[j])


@dataclass
class QuenchedMoments:
    """Per-environment functionals from one DP sweep.

    mean_displacement  m(n) = sum_y y p(n, y)
    zero_weighted_sum  B(n) = sum_{i<n} sum_y p(i, y)^2 / v(i, y)
    collision_sum      Z(n) = sum_{i<n} sum_y p(i, y)^2
    """

    horizon: int
    mean_displacement: float
    zero_weighted_sum: float
    collision_sum: float

    def __post_init__(self):
        if self.zero_weighted_sum > self.collision_sum + 1e-12:
            raise ValueError("B(n) must not exceed Z(n)")


def pack_rows(field: MassField) -> bytes:
    """Compact binary row format: magic, u32 horizon, then row t as t+1
    little-endian float64 masses (support index j = (y + t) / 2)."""
    buf = bytearray(ROWS_MAGIC)
    buf += struct.pack("<I", field.horizon)
    for row in field.rows:
        buf += np.asarray(row, dtype="<f8").tobytes()
    return bytes(buf)


def unpack_rows(data: bytes) -> MassField:
    if data[:len(ROWS_MAGIC)] != ROWS_MAGIC:
        raise ValueError(f"bad mass-row magic, expected {ROWS_MAGIC!r}")
    (horizon,) = struct.unpack_from("<I", data, len(ROWS_MAGIC))
    off = len(ROWS_MAGIC) + 4
    rows = []
    for t in range(horizon + 1):
        nbytes = 8 * (t + 1)
        if off + nbytes > len(data):
            raise ValueError(f"truncated mass rows at t={t}")
        rows.append(np.frombuffer(data, dtype="<f8", count=t + 1,
                                  offset=off).copy())
        off += nbytes
    if off != len(data):
        raise ValueError("trailing bytes after last mass row")
    return MassField(rows)


def _require_alive_origin(env: Environment) -> None:
    if not env.size_biased:
        raise MeasureError("mass process is defined on size-biased environments")
    if env.horizon > 0 and env.origin_occupancy() < 1:
        raise MeasureError("v(0,0) = 0: mass would remain at the origin")


def mass_step(env: Environment, row: np.ndarray, t: int) -> np.ndarray:
    """One DP step: mass row at time t -> row at time t+1."""
    if not 0 <= t < env.horizon:
        raise SupportError(f"step at t={t} needs env row {t} (horizon {env.horizon})")
    if len(row) != t + 1:
        raise ValueError(f"row at t={t} must have length {t + 1}")
    npb = get("numpy")
    epr, emr = env.row_arrays(t)
    v, rp, rm = npb._row_ratios(epr[0::2].astype(np.float64),
                                emr[0::2].astype(np.float64))
    return npb._dp_step(np.asarray(row, dtype=np.float64), rp, rm)


def mass_run(env: Environment, n: int | None = None) -> MassField:
    """Full mass field for t in [0, n] on a materialized environment."""
    if n is None:
        n = env.horizon
    if n > env.horizon:
        raise SupportError(f"n={n} exceeds environment horizon {env.horizon}")
    if n > 0:
        _require_alive_origin(env)
    rows = [np.array([1.0])]
    for t in range(n):
        rows.append(mass_step(env, rows[-1], t))
    return MassField(rows)


def terminal_mass_row(spec: EnvSeedSpec, n: int):
    """Streaming sweep: (row at time n, max conservation error over t <= n).

    Generates environment rows on the fly, O(n) memory; the only walkers
    simulated are the even-site ones, which are the only ones that can
    touch the walk's parity class.
    """
    if not spec.size_biased:
        raise MeasureError("mass process is defined on size-biased environments")
    if n > spec.horizon:
        raise SupportError(f"n={n} exceeds spec horizon {spec.horizon}")
    row, cons, _, _, _ = active().mass_sweep_stream(spec.key, n, True,
                                                    np.zeros(0, np.int64))
    return row, cons


def quenched_moments(env, n: int | None = None) -> QuenchedMoments:
    """m(n), B(n), Z(n) from one sweep of a materialized env or a spec."""
    cks = None
    if isinstance(env, EnvSeedSpec):
        if n is None:
            n = env.horizon
        if n > env.horizon:
            raise SupportError(f"n={n} exceeds spec horizon {env.horizon}")
        if not env.size_biased:
            raise MeasureError("mass process is defined on size-biased environments")
        cks = np.array([n], dtype=np.int64)
        _, _, m, B, Z = active().mass_sweep_stream(env.key, n, True, cks)
    else:
        if n is None:
            n = env.horizon
        if n > env.horizon:
            raise SupportError(f"n={n} exceeds environment horizon {env.horizon}")
        if n > 0:
            _require_alive_origin(env)
        cks = np.array([n], dtype=np.int64)
        _, _, m, B, Z = active().mass_sweep(env.ep, env.em, env.offsets, n, cks)
    return QuenchedMoments(n, float(m[0]), float(B[0]), float(Z[0]))


def local_drift(env: Environment, t: int, y: int) -> float:
    """(e+ - e-)/v at a cell; the spatial drift of the quenched walk there."""
    v = env.v(t, y)
    if v == 0:
        raise UndefinedCellError(f"v(t={t}, y={y}) = 0: drift undefined")
    return (env.eplus(t, y) - env.eminus(t, y)) / v


def path_sum_oracle(env: Environment, t: int, y: int) -> float:
    """Brute-force mass at (t, y): sum over all nearest-neighbor paths of the
    product of crossing ratios, vanishing products dropped.

    Exponential in t; guarded at t <= 12.  Independent of the DP recursion.
    """
    if t > PATH_ORACLE_MAX_T:
        raise ValueError(f"path enumeration guarded at t <= {PATH_ORACLE_MAX_T}")
    if t > env.horizon:
        raise SupportError(f"t={t} exceeds environment horizon {env.horizon}")
    if abs(y) > t or (y + t) % 2:
        return 0.0
    total = 0.0
    for signs in itertools.product((1, -1), repeat=t):
        if sum(signs) != y:
            continue
        pos = 0
        prod = 1.0
        for i, s in enumerate(signs):
            v = env.v(i, pos)
            if v == 0:
                prod = 0.0
                break
            e = env.eplus(i, pos) if s == 1 else env.eminus(i, pos)
            if e == 0:
                prod = 0.0
                break
            prod *= e / v
            pos += s
        total += prod
    return total
