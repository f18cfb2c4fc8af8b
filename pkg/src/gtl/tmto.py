"""Time-memory trade-off tables mapping keystream windows back to cipher states.

A chain is split into ``colors`` segments.  Segment ``c`` repeatedly applies
``f_c(x) = keystream(x, w) ^ rc[c]`` and ends at the first distinguished point
(``dp_mask_bits`` low zero bits) or overflows after ``max_steps_per_color``
applications.  Only ``(start, end)`` pairs are stored, sorted by end.

Tables normally range over packed cipher states.  Setting ``key_space`` makes
the chain points weak session keys instead (see :class:`KeySpace`).
"""

from __future__ import annotations

import math
import struct
import time
import zlib
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .a51 import (
    FULL,
    TOY,
    WEAK_KEY_ZERO_BITS,
    CipherParams,
    CipherState,
    key_setup,
    keystream,
)

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
# largest point space that gets a precomputed f table (2**24 * 4 bytes)
TABLE_LIMIT_BITS = 24

__all__ = [
    "ChainRecord",
    "CorruptHeaderError",
    "GenStats",
    "KeySpace",
    "KeystreamSample",
    "TableFormatError",
    "TmtoParams",
    "TmtoTable",
    "TruncatedFileError",
    "UnsortedRecordsError",
    "build_table",
    "build_table_set",
    "coverage_exact",
    "coverage_measure",
    "f_color",
    "generate_chain",
    "lookup",
    "lookup_points",
    "read_table",
    "start_points",
    "toy_params",
    "write_table",
]


@dataclass(frozen=True)
class KeySpace:
    """Chains over weak session keys for one fixed frame number.

    A point ``u`` stands for the key ``u << (key_bits - bits)``; its image is the
    first ``sample_width`` keystream bits after ``key_setup(key, frame)``.
    """

    bits: int
    frame: int = 0


@dataclass(frozen=True)
class TmtoParams:
    cipher: CipherParams
    colors: int = 4
    dp_mask_bits: int = 6
    max_steps_per_color: int = 1 << 10
    table_id: int = 0
    key_space: KeySpace | None = None

    def __post_init__(self):
        if self.colors < 1:
            raise ValueError("need at least one color")
        if not 0 <= self.dp_mask_bits < self.point_width:
            raise ValueError("dp_mask_bits must be below the point width")
        if self.max_steps_per_color < 1:
            raise ValueError("max_steps_per_color must be >= 1")
        if len(set(self.round_constants)) != self.colors:
            raise ValueError("round constants collide")

    @property
    def sample_width(self) -> int:
        return self.cipher.state_width

    @property
    def point_width(self) -> int:
        return self.key_space.bits if self.key_space else self.sample_width

    @cached_property
    def round_constants(self) -> tuple[int, ...]:
        mask = (1 << self.point_width) - 1
        return tuple(((c + 1) * GOLDEN) & mask for c in range(self.colors))

    @property
    def dp_mask(self) -> int:
        return (1 << self.dp_mask_bits) - 1

    @property
    def point_mask(self) -> int:
        return (1 << self.point_width) - 1

    def with_table_id(self, table_id: int) -> "TmtoParams":
        return TmtoParams(self.cipher, self.colors, self.dp_mask_bits,
                          self.max_steps_per_color, table_id, self.key_space)


def toy_params(table_id: int = 0, **overrides) -> TmtoParams:
    """The default desk-scale configuration: TOY cipher, R=4, k=6, t_max=2**10."""
    return TmtoParams(TOY, table_id=table_id, **overrides)


@dataclass(frozen=True, slots=True)
class ChainRecord:
    start: int
    end: int


@dataclass(frozen=True)
class KeystreamSample:
    bits: int
    frame: int
    offset: int
    direction: str = "D"
    slot: int = 0
    arfcn: int = -1
    source: str = "padding"

    @property
    def stream_offset(self) -> int:
        """Keystream bits produced before the window, counted from end of setup."""
        return self.offset + (114 if self.direction == "U" else 0)


@dataclass
class GenStats:
    requested: int
    kept: int
    merged: int
    overflowed: int
    seconds: float

    @property
    def chains_per_second(self) -> float:
        return self.requested / self.seconds if self.seconds > 0 else float("inf")

    @property
    def merge_fraction(self) -> float:
        completed = self.kept + self.merged
        return self.merged / completed if completed else 0.0


@dataclass
class TmtoTable:
    params: TmtoParams
    ends: np.ndarray
    starts: np.ndarray
    seed: int = 0
    stats: GenStats | None = field(default=None, compare=False)

    def __post_init__(self):
        self.ends = np.ascontiguousarray(self.ends, dtype=np.uint64)
        self.starts = np.ascontiguousarray(self.starts, dtype=np.uint64)

    def __len__(self):
        return int(self.ends.size)

    def __eq__(self, other):
        return (isinstance(other, TmtoTable) and self.params == other.params
                and self.seed == other.seed
                and np.array_equal(self.ends, other.ends)
                and np.array_equal(self.starts, other.starts))

    @property
    def records(self) -> list[ChainRecord]:
        return [ChainRecord(int(s), int(e)) for s, e in zip(self.starts, self.ends)]


# --- the chain function ----------------------------------------------------

class _ChainKernel:
    """Arguments shared by every chain kernel call for one parameter set."""

    def __init__(self, params: TmtoParams):
        self.params = params
        self.g = K.geometry(params.cipher)
        self.rc = np.array(params.round_constants, dtype=np.uint64)
        self.dp = np.uint64(params.dp_mask)
        self.pmask = np.uint64(params.point_mask)
        self.w = params.sample_width
        self.table = _point_table(params.cipher, params.key_space)

    def args(self):
        p = self.params
        return (p.colors, self.dp, p.max_steps_per_color, self.rc, self.pmask,
                self.table, self.w, self.g)


@lru_cache(maxsize=8)
def _point_table(cipher: CipherParams, key_space: KeySpace | None) -> np.ndarray:
    g = K.geometry(cipher)
    if key_space is not None:
        if key_space.bits > TABLE_LIMIT_BITS:
            raise NotImplementedError("key-space tables are limited to small key spaces")
        key_cols, frame_cols = K.load_columns(cipher)
        return K.key_point_table(key_space.bits, cipher.key_bits - key_space.bits,
                                 key_space.frame, key_cols, frame_cols,
                                 cipher.mix_clocks, cipher.state_width, g)
    if cipher.state_width <= TABLE_LIMIT_BITS:
        return K.keystream_table(cipher.state_width, cipher.state_width, g)
    return np.empty(0, dtype=np.uint32)


@lru_cache(maxsize=8)
def _kernel(params: TmtoParams) -> _ChainKernel:
    return _ChainKernel(params)


def point_keystream(params: TmtoParams, point: int) -> int:
    """Scalar image of a point before masking: its first sample_width keystream bits."""
    c = params.cipher
    if params.key_space is None:
        state = CipherState.unpack(c, point)
    else:
        ks = params.key_space
        state = key_setup(c, point << (c.key_bits - ks.bits), ks.frame)
    return keystream(c, state, params.sample_width)


def f_color(params: TmtoParams, x: int, color: int) -> int:
    if not 0 <= color < params.colors:
        raise ValueError("color out of range")
    return (point_keystream(params, x) ^ params.round_constants[color]) & params.point_mask


def generate_chain(params: TmtoParams, start: int) -> ChainRecord | None:
    """Walk one chain in pure Python; ``None`` signals an overflowed segment."""
    x = start
    for color in range(params.colors):
        for _ in range(params.max_steps_per_color):
            x = f_color(params, x, color)
            if x & params.dp_mask == 0:
                break
        else:
            return None
    return ChainRecord(start, x)


# --- table building --------------------------------------------------------

def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def start_points(seed: int, table_id: int, count: int, width: int) -> np.ndarray:
    """Counter-mode start points: index ``i`` of table ``table_id`` under ``seed``."""
    base = (seed * GOLDEN + (table_id + 1) * (GOLDEN ^ 0xD6E8FEB86659FD93)) & MASK64
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = idx * np.uint64(GOLDEN) + np.uint64(base)
        z = _splitmix(z)
    return z & np.uint64((1 << width) - 1) if width < 64 else z


SPOT_CHECK = 0.01


def build_table(params: TmtoParams, chain_count: int, seed: int,
                threads: int | None = None) -> tuple[TmtoTable, GenStats]:
    if chain_count < 1:
        raise ValueError("chain_count must be >= 1")
    K.set_threads(threads)
    kern = _kernel(params)
    t0 = time.perf_counter()
    starts = start_points(seed, params.table_id, chain_count, params.point_width)
    ends, ok = K.generate_chains(starts, *kern.args())
    starts, ends = starts[ok], ends[ok]
    order = np.lexsort((starts, ends))
    starts, ends = starts[order], ends[order]
    first = np.ones(ends.size, dtype=bool)
    first[1:] = ends[1:] != ends[:-1]
    stats = GenStats(
        requested=chain_count,
        kept=int(first.sum()),
        merged=int(ends.size - first.sum()),
        overflowed=int(chain_count - ok.sum()),
        seconds=time.perf_counter() - t0,
    )
    table = TmtoTable(params, ends[first], starts[first], seed, stats)
    if not verify_records(table, SPOT_CHECK, seed):
        raise RuntimeError("regenerated chains disagree with stored end points")
    return table, stats


def build_table_set(params: TmtoParams, tables: int, chain_count: int, seed: int,
                    threads: int | None = None) -> list[TmtoTable]:
    return [build_table(params.with_table_id(params.table_id + i), chain_count, seed, threads)[0]
            for i in range(tables)]


def verify_records(table: TmtoTable, fraction: float = 1.0, seed: int = 0) -> bool:
    """Regenerate stored chains from their starts and compare ends."""
    n = len(table)
    if n == 0:
        return True
    idx = np.arange(n)
    if fraction < 1.0:
        rng = np.random.default_rng(seed)
        idx = rng.choice(n, size=max(1, int(math.ceil(n * fraction))), replace=False)
    kern = _kernel(table.params)
    ends, ok = K.generate_chains(table.starts[idx], *kern.args())
    return bool(ok.all() and np.array_equal(ends, table.ends[idx]))


# --- lookup ----------------------------------------------------------------

def lookup_points(tables: Sequence[TmtoTable], samples: Iterable[int]) -> list[set[int]]:
    """Verified pre-image points for each keystream window in ``samples``."""
    samples = np.fromiter((int(s) for s in samples), dtype=np.uint64)
    found: list[set[int]] = [set() for _ in range(samples.size)]
    if samples.size == 0:
        return found
    for table in tables:
        if len(table) == 0:
            continue
        p = table.params
        kern = _kernel(p)
        cand_ends, ok = K.walk_samples(samples, *kern.args())
        pos = np.searchsorted(table.ends, cand_ends)
        pos_c = np.minimum(pos, len(table) - 1)
        hit = ok & (pos < len(table)) & (table.ends[pos_c] == cand_ends)
        si, colors = np.nonzero(hit)
        if si.size == 0:
            continue
        starts = table.starts[pos_c[si, colors]]
        rc = kern.rc[colors]
        targets = (samples[si] ^ rc) & kern.pmask
        tcolors = colors.astype(np.int64)
        counts = K.count_hits(starts, tcolors, targets, *kern.args())
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
        total = int(counts.sum())
        if total == 0:
            continue
        points = K.fill_hits(starts, tcolors, targets, offsets, total, *kern.args())
        owners = np.repeat(si, counts)
        for owner, point in zip(owners.tolist(), points.tolist()):
            # forward check on the full window removes every false alarm
            if point_keystream(p, point) == int(samples[owner]):
                found[owner].add(point)
    return found


def lookup(tables: Sequence[TmtoTable], sample: KeystreamSample | int) -> set[CipherState]:
    """States whose keystream equals the sample window, found through ``tables``."""
    bits = sample.bits if isinstance(sample, KeystreamSample) else int(sample)
    if not tables:
        return set()
    params = tables[0].params
    if params.key_space is not None:
        raise ValueError("key-space tables return keys; use lookup_points")
    return {CipherState.unpack(params.cipher, p) for p in lookup_points(tables, [bits])[0]}


# --- coverage --------------------------------------------------------------

@dataclass(frozen=True)
class Coverage:
    fraction: float
    hits: int
    trials: int
    low: float
    high: float

    def __float__(self):
        return self.fraction


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def coverage_measure(tables: Sequence[TmtoTable], trials: int, seed: int,
                     params: TmtoParams | None = None) -> Coverage:
    """Monte-Carlo fraction of uniformly random points recovered by lookup."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if params is None:
        if not tables:
            return Coverage(0.0, 0, trials, *wilson_interval(0, trials))
        params = tables[0].params
    rng = np.random.default_rng(seed)
    points = rng.integers(0, 1 << params.point_width, size=trials, dtype=np.uint64)
    images = _images(params, points)
    found = lookup_points(tables, images.tolist()) if tables else [set()] * trials
    hits = sum(int(p) in f for p, f in zip(points.tolist(), found))
    return Coverage(hits / trials, hits, trials, *wilson_interval(hits, trials))


def _images(params: TmtoParams, points: np.ndarray) -> np.ndarray:
    """Full sample_width keystream image for each point (vectorized)."""
    if params.key_space is not None:
        c, ks = params.cipher, params.key_space
        key_cols, frame_cols = K.load_columns(c)
        kcs = points << np.uint64(c.key_bits - ks.bits)
        frames = np.full(points.size, ks.frame, dtype=np.int64)
        bits = K.frame_keystreams(kcs, frames, key_cols, frame_cols, c.mix_clocks,
                                  params.sample_width, K.geometry(c))
        weights = np.uint64(1) << np.arange(params.sample_width, dtype=np.uint64)
        return (bits.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
    return K.keystream_words(points, params.sample_width, K.geometry(params.cipher))


def coverage_exact(tables: Sequence[TmtoTable]) -> float:
    """Fraction of the point space lying on some stored chain (enumeration)."""
    if not tables:
        return 0.0
    width = tables[0].params.point_width
    if width > TABLE_LIMIT_BITS + 4:
        raise ValueError("exhaustive coverage only for small point spaces")
    covered = np.zeros(1 << width, dtype=np.uint8)
    for table in tables:
        if len(table):
            K.mark_chains(table.starts, *_kernel(table.params).args(), covered)
    return float(covered.sum(dtype=np.int64)) / covered.size


# --- table files -----------------------------------------------------------

MAGIC = b"GTMT"
VERSION = 1
HEADER_SIZE = 64
# magic, version, table_id, preset, sample_width, colors, dp bits, t_max, count, seed
_HEADER = struct.Struct("<4sIQIIIIQQQ")
_CRC = struct.Struct("<I")
_RECORD = np.dtype([("end", "<u8"), ("start", "<u8")])
PRESET_TAGS = {"FULL": 0, "TOY": 1}
_PRESETS_BY_TAG = {0: FULL, 1: TOY}


class TableFormatError(ValueError):
    pass


class CorruptHeaderError(TableFormatError):
    pass


class UnsortedRecordsError(TableFormatError):
    pass


class TruncatedFileError(TableFormatError):
    pass


def table_bytes(table: TmtoTable) -> bytes:
    p = table.params
    if p.key_space is not None:
        raise ValueError("key-space tables have no file representation")
    if p.cipher.name not in PRESET_TAGS:
        raise ValueError("only the FULL and TOY presets can be written")
    head = _HEADER.pack(MAGIC, VERSION, p.table_id, PRESET_TAGS[p.cipher.name],
                        p.sample_width, p.colors, p.dp_mask_bits,
                        p.max_steps_per_color, len(table), table.seed)
    head += _CRC.pack(zlib.crc32(head))
    head = head.ljust(HEADER_SIZE, b"\0")
    records = np.empty(len(table), dtype=_RECORD)
    records["end"] = table.ends
    records["start"] = table.starts
    return head + records.tobytes()


def write_table(table: TmtoTable, path: str | Path) -> None:
    Path(path).write_bytes(table_bytes(table))


def parse_table(data: bytes) -> TmtoTable:
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(f"file holds {len(data)} bytes, header needs {HEADER_SIZE}")
    fields = _HEADER.unpack_from(data)
    magic, version, table_id, tag, width, colors, dp_bits, t_max, count, seed = fields
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    (crc,) = _CRC.unpack_from(data, _HEADER.size)
    if crc != zlib.crc32(data[:_HEADER.size]):
        raise CorruptHeaderError("header checksum mismatch")
    if any(data[_HEADER.size + _CRC.size:HEADER_SIZE]):
        raise CorruptHeaderError("reserved header bytes are not zero")
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported version {version}")
    if tag not in _PRESETS_BY_TAG:
        raise CorruptHeaderError(f"unknown preset tag {tag}")
    cipher = _PRESETS_BY_TAG[tag]
    if width != cipher.state_width:
        raise CorruptHeaderError("sample width does not match the cipher preset")
    try:
        params = TmtoParams(cipher, colors, dp_bits, t_max, table_id)
    except ValueError as exc:
        raise CorruptHeaderError(str(exc)) from None
    need = HEADER_SIZE + count * _RECORD.itemsize
    if len(data) < need:
        raise TruncatedFileError(f"expected {need} bytes, found {len(data)}")
    if len(data) > need:
        raise CorruptHeaderError("trailing bytes after the last record")
    records = np.frombuffer(data, dtype=_RECORD, count=count, offset=HEADER_SIZE)
    ends = records["end"].astype(np.uint64)
    if count > 1 and not np.all(ends[1:] > ends[:-1]):
        raise UnsortedRecordsError("records are not strictly ascending by end point")
    return TmtoTable(params, ends, records["start"].astype(np.uint64), seed)


def read_table(path: str | Path) -> TmtoTable:
    return parse_table(Path(path).read_bytes())
