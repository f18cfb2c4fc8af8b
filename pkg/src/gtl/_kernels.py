"""Numba kernels behind the batched cipher and chain operations.

Cipher geometry is passed as a flat int64 array (see :func:`geometry`) so the
same compiled code serves both presets.  Packed values are uint64; registers
are int64 (no register exceeds 23 bits).
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np
from numba import njit, prange

from .a51 import CipherParams, load_matrix

# the bundled TBB is too old for numba; prefer OpenMP, fall back to workqueue
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_U0 = np.uint64(0)
_U1 = np.uint64(1)


@lru_cache(maxsize=None)
def geometry(params: CipherParams) -> np.ndarray:
    g = (
        list(params.register_lengths)
        + list(params.masks)
        + list(params.tap_masks)
        + list(params.clock_bits)
        + list(params.output_bits)
        + [params.offsets[1], params.offsets[2]]
    )
    arr = np.array(g, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def load_columns(params: CipherParams) -> tuple[np.ndarray, np.ndarray]:
    key_cols, frame_cols = load_matrix(params)
    return (np.array(key_cols, dtype=np.uint64), np.array(frame_cols, dtype=np.uint64))


def set_threads(n: int | None) -> None:
    if n:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


@njit(inline="always")
def _parity(x):
    x ^= x >> 16
    x ^= x >> 8
    x ^= x >> 4
    x ^= x >> 2
    x ^= x >> 1
    return x & 1


@njit(inline="always")
def _clock(r1, r2, r3, g):
    c1 = (r1 >> g[9]) & 1
    c2 = (r2 >> g[10]) & 1
    c3 = (r3 >> g[11]) & 1
    maj = (c1 & c2) | (c1 & c3) | (c2 & c3)
    if c1 == maj:
        r1 = ((r1 << 1) & g[3]) | _parity(r1 & g[6])
    if c2 == maj:
        r2 = ((r2 << 1) & g[4]) | _parity(r2 & g[7])
    if c3 == maj:
        r3 = ((r3 << 1) & g[5]) | _parity(r3 & g[8])
    bit = ((r1 >> g[12]) ^ (r2 >> g[13]) ^ (r3 >> g[14])) & 1
    return r1, r2, r3, bit


@njit(inline="always")
def _unpack(x, g):
    r1 = np.int64(x & np.uint64(g[3]))
    r2 = np.int64((x >> np.uint64(g[15])) & np.uint64(g[4]))
    r3 = np.int64((x >> np.uint64(g[16])) & np.uint64(g[5]))
    return r1, r2, r3


@njit(inline="always")
def _ks_word(r1, r2, r3, n, g):
    out = _U0
    for i in range(n):
        r1, r2, r3, bit = _clock(r1, r2, r3, g)
        out |= np.uint64(bit) << np.uint64(i)
    return out


@njit(inline="always")
def _setup(kc, frame, key_cols, frame_cols, mix, g):
    x = _U0
    for i in range(key_cols.size):
        if (kc >> np.uint64(i)) & _U1:
            x ^= key_cols[i]
    for i in range(frame_cols.size):
        if (frame >> i) & 1:
            x ^= frame_cols[i]
    r1, r2, r3 = _unpack(x, g)
    for _ in range(mix):
        r1, r2, r3, _b = _clock(r1, r2, r3, g)
    return r1, r2, r3


@njit(parallel=True, cache=True)
def keystream_words(states, n, g):
    out = np.empty(states.size, dtype=np.uint64)
    for i in prange(states.size):
        r1, r2, r3 = _unpack(states[i], g)
        out[i] = _ks_word(r1, r2, r3, n, g)
    return out


@njit(parallel=True, cache=True)
def keystream_table(width, n, g):
    size = 1 << width
    out = np.empty(size, dtype=np.uint32)
    for i in prange(size):
        r1, r2, r3 = _unpack(np.uint64(i), g)
        out[i] = np.uint32(_ks_word(r1, r2, r3, n, g))
    return out


@njit(parallel=True, cache=True)
def frame_keystreams(kcs, frames, key_cols, frame_cols, mix, nbits, g):
    """Bits after setup for each (key, frame) row, as a uint8 matrix."""
    out = np.empty((kcs.size, nbits), dtype=np.uint8)
    for i in prange(kcs.size):
        r1, r2, r3 = _setup(kcs[i], frames[i], key_cols, frame_cols, mix, g)
        for j in range(nbits):
            r1, r2, r3, bit = _clock(r1, r2, r3, g)
            out[i, j] = bit
    return out


@njit(parallel=True, cache=True)
def key_point_table(point_bits, shift, frame, key_cols, frame_cols, mix, n, g):
    """keystream(key_setup(u << shift, frame), n) for every u < 2**point_bits."""
    size = 1 << point_bits
    out = np.empty(size, dtype=np.uint32)
    for u in prange(size):
        kc = np.uint64(u) << np.uint64(shift)
        r1, r2, r3 = _setup(kc, frame, key_cols, frame_cols, mix, g)
        out[u] = np.uint32(_ks_word(r1, r2, r3, n, g))
    return out


# --- chain walking ---------------------------------------------------------

@njit(inline="always")
def _f(x, c, rc, pmask, table, w, g):
    if table.size > 0:
        y = np.uint64(table[x])
    else:
        r1, r2, r3 = _unpack(x, g)
        y = _ks_word(r1, r2, r3, w, g)
    return (y ^ rc[c]) & pmask


@njit(inline="always")
def _segment(x, c, dp, t_max, rc, pmask, table, w, g):
    steps = 0
    while True:
        x = _f(x, c, rc, pmask, table, w, g)
        steps += 1
        if (x & dp) == _U0:
            return x, True
        if steps >= t_max:
            return x, False


@njit(parallel=True, cache=True)
def generate_chains(starts, colors, dp, t_max, rc, pmask, table, w, g):
    ends = np.empty(starts.size, dtype=np.uint64)
    ok = np.empty(starts.size, dtype=np.bool_)
    for i in prange(starts.size):
        x = starts[i]
        good = True
        for c in range(colors):
            x, good = _segment(x, c, dp, t_max, rc, pmask, table, w, g)
            if not good:
                break
        ends[i] = x
        ok[i] = good
    return ends, ok


@njit(parallel=True, cache=True)
def walk_samples(samples, colors, dp, t_max, rc, pmask, table, w, g):
    """Candidate endpoints for each sample under each assumed color."""
    m = samples.size
    ends = np.zeros((m, colors), dtype=np.uint64)
    ok = np.zeros((m, colors), dtype=np.bool_)
    for k in prange(m * colors):
        i = k // colors
        c = k % colors
        x = (samples[i] ^ rc[c]) & pmask
        steps = 1
        good = True
        while (x & dp) != _U0:
            if steps >= t_max:
                good = False
                break
            x = _f(x, c, rc, pmask, table, w, g)
            steps += 1
        if good:
            for cc in range(c + 1, colors):
                x, good = _segment(x, cc, dp, t_max, rc, pmask, table, w, g)
                if not good:
                    break
        ends[i, c] = x
        ok[i, c] = good
    return ends, ok


@njit(inline="always")
def _scan_chain(start, tcolor, target, colors, dp, t_max, rc, pmask, table, w, g, out, pos):
    """Walk one chain, writing inputs x with f(x, tcolor) == target at out[pos:]."""
    x = start
    n = 0
    for c in range(colors):
        steps = 0
        while True:
            nx = _f(x, c, rc, pmask, table, w, g)
            if c == tcolor and nx == target:
                if out.size > 0:
                    out[pos + n] = x
                n += 1
            x = nx
            steps += 1
            if (x & dp) == _U0 or steps >= t_max:
                break
        if c == tcolor:
            # later colors cannot produce this color's hits
            break
    return n


@njit(parallel=True, cache=True)
def count_hits(starts, tcolors, targets, colors, dp, t_max, rc, pmask, table, w, g):
    counts = np.zeros(starts.size, dtype=np.int64)
    empty = np.empty(0, dtype=np.uint64)
    for i in prange(starts.size):
        counts[i] = _scan_chain(starts[i], tcolors[i], targets[i], colors, dp, t_max,
                                rc, pmask, table, w, g, empty, 0)
    return counts


@njit(parallel=True, cache=True)
def fill_hits(starts, tcolors, targets, offsets, total, colors, dp, t_max, rc, pmask, table, w, g):
    out = np.empty(total, dtype=np.uint64)
    for i in prange(starts.size):
        _scan_chain(starts[i], tcolors[i], targets[i], colors, dp, t_max,
                    rc, pmask, table, w, g, out, offsets[i])
    return out


@njit(cache=True)
def mark_chains(starts, colors, dp, t_max, rc, pmask, table, w, g, covered):
    """Set covered[x] for every chain input x (the values a lookup can recover)."""
    for i in range(starts.size):
        x = starts[i]
        for c in range(colors):
            steps = 0
            while True:
                covered[x] = 1
                x = _f(x, c, rc, pmask, table, w, g)
                steps += 1
                if (x & dp) == _U0 or steps >= t_max:
                    break
