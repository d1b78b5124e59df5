"""Space-time environment generation, storage, and serialization.

The environment at horizon T is the field of edge-crossing counts produced
by walkers that start from i.i.d. Poisson(1) occupancies on the sites
[-2T, 2T] and perform independent simple random walks.  Row t stores the
light-cone cells y in [-t, t]: a walker at start site k can reach cell
(t, y) only if |k - y| <= t, so the [-2T, 2T] window makes every stored
cell exact.  Under the size-biased measure the origin occupancy is drawn
from the size-biased Poisson(1) law (realized as 1 + Poisson(1)), which
guarantees v(0, 0) >= 1.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .kernels import active, get

MEASURES = ("base", "size_biased")

# Row storage is ~8*T^2 bytes; beyond this cap use the streaming kernels.
MAX_MATERIALIZE_HORIZON = 4096

MAGIC = b"RMSENV1"
_COUNT_LIMIT = 2**31 - 1


class EnvFormatError(ValueError):
    """Malformed environment byte stream."""


class EnvInvariantError(ValueError):
    """Stored counts violate a structural invariant."""


class HorizonLimitError(ValueError):
    """Horizon exceeds the addressable dense-row window."""


@dataclass(frozen=True)
class EnvSeedSpec:
    """Everything needed to regenerate an environment bit for bit."""

    seed: int
    horizon: int
    measure: str = "size_biased"
    replicate: int = 0

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")

    @property
    def size_biased(self) -> bool:
        return self.measure == "size_biased"

    @property
    def key(self) -> int:
        return rng.env_key(self.seed, self.replicate)


@dataclass
class WalkerSet:
    """Materialized walker trajectories (reference path, small horizons)."""

    horizon: int
    starts: np.ndarray  # (W,) int64 start sites
    steps: np.ndarray   # (W, T) int8, each step +1 or -1

    def __post_init__(self):
        if self.steps.shape != (len(self.starts), self.horizon):
            raise ValueError("steps must have shape (walkers, horizon)")
        if self.steps.size and not np.isin(self.steps, (-1, 1)).all():
            raise ValueError("walker steps must be +-1")

    def positions(self) -> np.ndarray:
        """Site of every walker at times 0..T, shape (W, T+1)."""
        pos = np.zeros((len(self.starts), self.horizon + 1), dtype=np.int64)
        pos[:, 0] = self.starts
        np.cumsum(self.steps, axis=1, out=pos[:, 1:])
        pos[:, 1:] += self.starts[:, None]
        return pos


class Environment:
    """Edge-crossing counts on the light cone, dense rows.

    Row t covers y in [-t, t] at flat index ``offsets[t] + (y + t)``.
    Counts are int32; v(t, y) is derived as e+(t, y) + e-(t, y).
    """

    def __init__(self, horizon: int, seed: int, measure: str, replicate: int,
                 ep: np.ndarray, em: np.ndarray, offsets: np.ndarray):
        self.horizon = horizon
        self.seed = seed
        self.measure = measure
        self.replicate = replicate
        self.ep = ep
        self.em = em
        self.offsets = offsets

    @property
    def size_biased(self) -> bool:
        return self.measure == "size_biased"

    @property
    def spec(self) -> EnvSeedSpec:
        return EnvSeedSpec(self.seed, self.horizon, self.measure, self.replicate)

    @classmethod
    def from_rows(cls, rows, seed: int = 0, measure: str = "base",
                  replicate: int = 0) -> "Environment":
        """Build from a list of (ep_row, em_row) pairs, row t of width 2t+1."""
        horizon = len(rows)
        offsets = np.zeros(horizon + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(2 * np.arange(horizon, dtype=np.int64) + 1)
        ep = np.zeros(int(offsets[-1]), dtype=np.int32)
        em = np.zeros(int(offsets[-1]), dtype=np.int32)
        for t, (epr, emr) in enumerate(rows):
            epr = np.asarray(epr, dtype=np.int64)
            emr = np.asarray(emr, dtype=np.int64)
            if len(epr) != 2 * t + 1 or len(emr) != 2 * t + 1:
                raise ValueError(f"row {t} must have width {2 * t + 1}")
            if (epr < 0).any() or (emr < 0).any():
                raise EnvInvariantError(f"negative count in row {t}")
            ep[offsets[t]:offsets[t + 1]] = epr
            em[offsets[t]:offsets[t + 1]] = emr
        return cls(horizon, seed, measure, replicate, ep, em, offsets)

    def _cell(self, t: int, y: int) -> int:
        if not 0 <= t < self.horizon:
            raise IndexError(f"row {t} outside stored horizon {self.horizon}")
        if abs(y) > t:
            raise IndexError(f"site {y} outside light cone at t={t}")
        return int(self.offsets[t]) + y + t

    def eplus(self, t: int, y: int) -> int:
        return int(self.ep[self._cell(t, y)])

    def eminus(self, t: int, y: int) -> int:
        return int(self.em[self._cell(t, y)])

    def v(self, t: int, y: int) -> int:
        c = self._cell(t, y)
        return int(self.ep[c]) + int(self.em[c])

    def row_arrays(self, t: int):
        """(ep, em) views of row t, index y + t."""
        if not 0 <= t < self.horizon:
            raise IndexError(f"row {t} outside stored horizon {self.horizon}")
        lo, hi = int(self.offsets[t]), int(self.offsets[t + 1])
        return self.ep[lo:hi], self.em[lo:hi]

    def origin_occupancy(self) -> int:
        if self.horizon == 0:
            raise IndexError("horizon 0 environment stores no rows")
        return self.v(0, 0)

    def validate(self) -> None:
        """Structural invariants: nonnegative counts and flow consistency.

        Flow consistency v(t, y) = e+(t-1, y-1) + e-(t-1, y+1) is checked
        wherever all three cells are stored, i.e. |y| <= t - 2.
        """
        if (self.ep < 0).any() or (self.em < 0).any():
            raise EnvInvariantError("negative crossing count")
        for t in range(1, self.horizon):
            epp, emp = self.row_arrays(t - 1)
            epc, emc = self.row_arrays(t)
            v = epc + emc
            # i = y + t for y in [-t+2, t-2] -> i in [2, 2t-2]
            lhs = v[2:2 * t - 1]
            rhs = epp[: 2 * t - 3] + emp[2: 2 * t - 1]
            if lhs.size and not np.array_equal(lhs, rhs):
                i = int(np.nonzero(lhs != rhs)[0][0]) + 2
                raise EnvInvariantError(
                    f"flow consistency violated at (t={t}, y={i - t})")
        if self.size_biased and self.horizon > 0 and self.origin_occupancy() < 1:
            raise EnvInvariantError("size-biased environment with v(0,0) = 0")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Environment):
            return NotImplemented
        return (self.spec == other.spec
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.ep, other.ep)
                and np.array_equal(self.em, other.em))

    def __repr__(self) -> str:
        return (f"Environment(horizon={self.horizon}, seed={self.seed}, "
                f"measure={self.measure!r}, replicate={self.replicate})")


# ---------------------------------------------------------------------------
# Generation.
# ---------------------------------------------------------------------------


def sample_initial_counts(seed: int, horizon: int, measure: str = "size_biased",
                          replicate: int = 0, pad: int = 0):
    """Initial occupancies on the sites [-2T - pad, 2T + pad].

    Returns (sites, counts).  Counts are i.i.d. Poisson(1) except that under
    the size-biased measure the origin is 1 + Poisson(1).
    """
    spec = EnvSeedSpec(seed, horizon, measure, replicate)
    half = 2 * horizon + pad
    sites = np.arange(-half, half + 1, dtype=np.int64)
    counts = active().site_counts(spec.key, -half, half, 1, spec.size_biased)
    return sites, counts


def evolve_walkers(spec: EnvSeedSpec, sites: np.ndarray,
                   counts: np.ndarray) -> WalkerSet:
    """Materialize every walker's +-1 step sequence over the horizon.

    Walker (k, i) gets the stream keyed by (env key, k, i); the sign at
    step t is bit (t mod 64) of stream word t // 64.
    """
    npb = get("numpy")
    wkeys, starts = npb._walker_arrays(spec.key, np.asarray(sites, np.int64),
                                       np.asarray(counts, np.int64))
    T = spec.horizon
    nblk = (T + 63) // 64
    ctr = (np.arange(nblk, dtype=np.int64).view(np.uint64) + np.uint64(1)) \
        * np.uint64(rng.GAMMA)
    words = npb.mix64_arr(wkeys[:, None] + ctr[None, :])
    t = np.arange(T, dtype=np.int64)
    bits = (words[:, t >> 6] >> (t & 63).astype(np.uint64)) & np.uint64(1)
    steps = (2 * bits.astype(np.int8) - 1)
    return WalkerSet(horizon=T, starts=starts, steps=steps)


def crossings_from_walkers(walkers: WalkerSet, seed: int = 0,
                           measure: str = "base",
                           replicate: int = 0) -> Environment:
    """Count edge crossings from materialized trajectories (reference path).

    e+(t, y) = #walkers at y at time t stepping to y + 1, e- analogously;
    only the light-cone cells |y| <= t are stored.
    """
    T = walkers.horizon
    offsets = np.zeros(T + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(2 * np.arange(T, dtype=np.int64) + 1)
    ep = np.zeros(int(offsets[-1]), dtype=np.int32)
    em = np.zeros(int(offsets[-1]), dtype=np.int32)
    pos = walkers.positions()
    for t in range(T):
        y = pos[:, t]
        up = walkers.steps[:, t] == 1
        inwin = np.abs(y) <= t
        iy = y[inwin] + t
        epr = np.bincount(iy[up[inwin]], minlength=2 * t + 1)
        vr = np.bincount(iy, minlength=2 * t + 1)
        ep[offsets[t]:offsets[t + 1]] = epr
        em[offsets[t]:offsets[t + 1]] = vr - epr
    return Environment(T, seed, measure, replicate, ep, em, offsets)


def generate(spec: EnvSeedSpec, pad: int = 0) -> Environment:
    """Generate the environment for a spec; same spec -> identical bytes.

    ``pad`` widens the initial site window; stored light-cone cells must be
    unaffected (per-walker streams are keyed by site, not window position).
    """
    if spec.horizon > MAX_MATERIALIZE_HORIZON:
        raise HorizonLimitError(
            f"horizon {spec.horizon} exceeds dense-row limit "
            f"{MAX_MATERIALIZE_HORIZON}; use the streaming interfaces")
    half = 2 * spec.horizon + pad
    ep, em, offsets = active().build_env(spec.key, spec.horizon,
                                         spec.size_biased, -half, half)
    return Environment(spec.horizon, spec.seed, spec.measure, spec.replicate,
                       ep, em, offsets)


# ---------------------------------------------------------------------------
# Binary format: magic "RMSENV1", little-endian header, LEB128 count rows.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<IQBI")  # horizon, seed(u64), measure, replicate


def _write_varints(buf: bytearray, values: np.ndarray) -> None:
    if values.size and values.max(initial=0) < 0x80:
        buf += values.astype(np.uint8).tobytes()
        return
    for x in values.tolist():
        while x >= 0x80:
            buf.append((x & 0x7F) | 0x80)
            x >>= 7
        buf.append(x)


def _read_varints(payload: bytes, n: int, t: int) -> np.ndarray:
    raw = np.frombuffer(payload, dtype=np.uint8)
    if len(raw) == n and not (raw & 0x80).any():
        return raw.astype(np.int64)
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for i in range(n):
        x = 0
        shift = 0
        while True:
            if pos >= len(raw):
                raise EnvFormatError(f"truncated varint in row {t}")
            b = int(raw[pos])
            pos += 1
            x |= (b & 0x7F) << shift
            if not b & 0x80:
                break
            shift += 7
            if shift > 35:
                raise EnvFormatError(f"varint overflow in row {t}")
        if x > _COUNT_LIMIT:
            raise EnvFormatError(f"count exceeds 32-bit limit in row {t}")
        out[i] = x
    if pos != len(raw):
        raise EnvFormatError(f"trailing bytes in row {t}")
    return out


def serialize(env: Environment) -> bytes:
    buf = bytearray()
    buf += MAGIC
    buf += _HEADER.pack(env.horizon, env.seed & rng.MASK64,
                        MEASURES.index(env.measure), env.replicate)
    for t in range(env.horizon):
        epr, emr = env.row_arrays(t)
        cells = np.empty(3 * (2 * t + 1), dtype=np.int64)
        cells[0::3] = epr
        cells[1::3] = emr
        cells[2::3] = epr.astype(np.int64) + emr
        row = bytearray()
        _write_varints(row, cells)
        buf += struct.pack("<I", len(row))
        buf += row
    return bytes(buf)


def deserialize(data: bytes) -> Environment:
    stream = io.BytesIO(data)
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise EnvFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    head = stream.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise EnvFormatError("truncated header")
    horizon, seed, measure_id, replicate = _HEADER.unpack(head)
    if measure_id >= len(MEASURES):
        raise EnvFormatError(f"unknown measure tag {measure_id}")
    rows = []
    for t in range(horizon):
        lenb = stream.read(4)
        if len(lenb) != 4:
            raise EnvFormatError(f"truncated length field at row {t}")
        (nbytes,) = struct.unpack("<I", lenb)
        payload = stream.read(nbytes)
        if len(payload) != nbytes:
            raise EnvFormatError(f"truncated row {t}")
        cells = _read_varints(payload, 3 * (2 * t + 1), t)
        epr = cells[0::3]
        emr = cells[1::3]
        vr = cells[2::3]
        bad = np.nonzero(vr != epr + emr)[0]
        if len(bad):
            y = int(bad[0]) - t
            raise EnvInvariantError(
                f"v != e+ + e- at cell (t={t}, y={y}): "
                f"{int(vr[bad[0]])} != {int(epr[bad[0]])} + {int(emr[bad[0]])}")
        if cells.max(initial=0) > _COUNT_LIMIT:
            raise EnvFormatError(f"count exceeds 32-bit limit in row {t}")
        rows.append((epr, emr))
    if stream.read(1):
        raise EnvFormatError("trailing bytes after last row")
    if seed >= 1 << 63:
        seed -= 1 << 64
    return Environment.from_rows(rows, seed=seed,
                                 measure=MEASURES[measure_id],
                                 replicate=replicate)


def save(env: Environment, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(env))


def load(path) -> Environment:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
