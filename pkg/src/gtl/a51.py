"""A5/1 stream cipher, full size and a reduced toy geometry.

Integers use LSB = bit 0 throughout.  A keystream of ``n`` bits is returned as
an ``int`` whose bit ``i`` is the ``i``-th output bit.  A packed state is
``r1 | r2 << len1 | r3 << (len1 + len2)``.

The functions in this module are the scalar, pure-Python reference API.  The
batched kernels in :mod:`gtl._kernels` implement the same arithmetic for
table generation and bulk encryption.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

__all__ = [
    "BudgetExceeded",
    "CipherParams",
    "CipherState",
    "FULL",
    "SessionKey",
    "TOY",
    "WEAK_KEY_ZERO_BITS",
    "advance",
    "clock_backward",
    "clock_forward",
    "key_setup",
    "keystream",
    "load_matrix",
    "preset_by_name",
    "recover_key",
    "weaken",
]

WEAK_KEY_ZERO_BITS = 10
DEFAULT_NODE_BUDGET = 1 << 22


class BudgetExceeded(RuntimeError):
    """Backward search visited more states than the configured budget."""


@dataclass(frozen=True)
class CipherParams:
    name: str
    register_lengths: tuple[int, int, int]
    feedback_taps: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    clock_bits: tuple[int, int, int]
    output_bits: tuple[int, int, int]
    mix_clocks: int
    key_bits: int
    frame_bits: int

    def __post_init__(self):
        if len(self.register_lengths) != 3 or min(self.register_lengths) < 1:
            raise ValueError("need three positive register lengths")
        if sum(self.register_lengths) > 64:
            raise ValueError("state width must not exceed 64 bits")
        for n, taps, cb, ob in zip(self.register_lengths, self.feedback_taps,
                                   self.clock_bits, self.output_bits):
            if not taps or max(taps) >= n or cb >= n or ob >= n:
                raise ValueError(f"bit index out of range for a {n}-bit register")
            if n - 1 not in taps:
                # the top bit must feed back, otherwise stepping is not invertible
                raise ValueError("feedback taps must include the top register bit")
        if self.mix_clocks < 0 or self.key_bits < 1 or self.frame_bits < 1:
            raise ValueError("invalid setup widths")

    @property
    def state_width(self) -> int:
        return sum(self.register_lengths)

    @cached_property
    def masks(self) -> tuple[int, int, int]:
        return tuple((1 << n) - 1 for n in self.register_lengths)

    @cached_property
    def tap_masks(self) -> tuple[int, int, int]:
        return tuple(sum(1 << t for t in taps) for taps in self.feedback_taps)

    @cached_property
    def offsets(self) -> tuple[int, int, int]:
        l1, l2, _ = self.register_lengths
        return (0, l1, l1 + l2)

    def with_mix_clocks(self, n: int) -> "CipherParams":
        return replace(self, mix_clocks=n)


FULL = CipherParams(
    name="FULL",
    register_lengths=(19, 22, 23),
    feedback_taps=((13, 16, 17, 18), (20, 21), (7, 20, 21, 22)),
    clock_bits=(8, 10, 10),
    output_bits=(18, 21, 22),
    mix_clocks=100,
    key_bits=64,
    frame_bits=22,
)

TOY = CipherParams(
    name="TOY",
    register_lengths=(7, 8, 9),
    feedback_taps=((5, 6), (6, 7), (4, 8)),
    clock_bits=(3, 4, 4),
    output_bits=(6, 7, 8),
    mix_clocks=24,
    key_bits=24,
    frame_bits=8,
)

PRESETS = {"FULL": FULL, "TOY": TOY}


def preset_by_name(name: str) -> CipherParams:
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown cipher preset {name!r}") from None


@dataclass(frozen=True, slots=True)
class CipherState:
    r1: int
    r2: int
    r3: int

    def pack(self, params: CipherParams) -> int:
        o = params.offsets
        return self.r1 | (self.r2 << o[1]) | (self.r3 << o[2])

    @classmethod
    def unpack(cls, params: CipherParams, value: int) -> "CipherState":
        o, m = params.offsets, params.masks
        return cls(value & m[0], (value >> o[1]) & m[1], (value >> o[2]) & m[2])

    def validate(self, params: CipherParams) -> None:
        for r, m in zip((self.r1, self.r2, self.r3), params.masks):
            if not 0 <= r <= m:
                raise ValueError("register value exceeds its length")


@dataclass(frozen=True, slots=True)
class SessionKey:
    kc: int
    weak: bool = field(default=False, compare=False)

    def __int__(self):
        return self.kc

    def hex(self, params: CipherParams) -> str:
        return format(self.kc, f"0{(params.key_bits + 3) // 4}x")


def weaken(kc: int) -> int:
    """Zero the low ten bits, the shape of a COMP128-derived session key."""
    return kc & ~((1 << WEAK_KEY_ZERO_BITS) - 1)


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


def _step(r: int, mask: int, taps: int) -> int:
    return ((r << 1) & mask) | _parity(r & taps)


def _unstep(r: int, length: int, taps: int) -> int:
    # r = (prev << 1 | fb) & mask, fb = parity(prev & taps); taps holds the top bit
    low = r >> 1
    top = (r & 1) ^ _parity(low & taps & ~(1 << (length - 1)))
    return low | (top << (length - 1))


def _clock_regs(params: CipherParams, regs: tuple[int, int, int]):
    r1, r2, r3 = regs
    cb = params.clock_bits
    c1, c2, c3 = (r1 >> cb[0]) & 1, (r2 >> cb[1]) & 1, (r3 >> cb[2]) & 1
    maj = (c1 & c2) | (c1 & c3) | (c2 & c3)
    m, t = params.masks, params.tap_masks
    if c1 == maj:
        r1 = _step(r1, m[0], t[0])
    if c2 == maj:
        r2 = _step(r2, m[1], t[1])
    if c3 == maj:
        r3 = _step(r3, m[2], t[2])
    ob = params.output_bits
    bit = ((r1 >> ob[0]) ^ (r2 >> ob[1]) ^ (r3 >> ob[2])) & 1
    return (r1, r2, r3), bit


def _load(params: CipherParams, kc: int, frame: int) -> tuple[int, int, int]:
    m, t = params.masks, params.tap_masks
    regs = [0, 0, 0]
    for width, value in ((params.key_bits, kc), (params.frame_bits, frame)):
        for i in range(width):
            bit = (value >> i) & 1
            for j in range(3):
                regs[j] = _step(regs[j], m[j], t[j]) ^ bit
    return tuple(regs)


def key_setup(params: CipherParams, kc: SessionKey | int, frame: int) -> CipherState:
    """Load key and frame number with regular clocking, then mix."""
    kc = int(kc)
    if not 0 <= frame < (1 << params.frame_bits):
        raise ValueError(f"frame {frame} out of range for {params.frame_bits} bits")
    if not 0 <= kc < (1 << params.key_bits):
        raise ValueError("key out of range")
    regs = _load(params, kc, frame)
    for _ in range(params.mix_clocks):
        regs, _ = _clock_regs(params, regs)
    return CipherState(*regs)


def clock_forward(params: CipherParams, state: CipherState) -> tuple[CipherState, int]:
    regs, bit = _clock_regs(params, (state.r1, state.r2, state.r3))
    return CipherState(*regs), bit


def keystream(params: CipherParams, state: CipherState, n: int) -> int:
    if n < 0:
        raise ValueError("n must be non-negative")
    regs = (state.r1, state.r2, state.r3)
    out = 0
    for i in range(n):
        regs, bit = _clock_regs(params, regs)
        out |= bit << i
    return out


def advance(params: CipherParams, state: CipherState, n: int) -> CipherState:
    regs = (state.r1, state.r2, state.r3)
    for _ in range(n):
        regs, _ = _clock_regs(params, regs)
    return CipherState(*regs)


# the four clocking patterns a majority step can produce
_PATTERNS = ((True, True, True), (True, True, False), (True, False, True), (False, True, True))


def _predecessors(params: CipherParams, regs: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    lengths, taps, cb = params.register_lengths, params.tap_masks, params.clock_bits
    out = []
    for pattern in _PATTERNS:
        prev = tuple(
            _unstep(r, n, t) if stepped else r
            for r, n, t, stepped in zip(regs, lengths, taps, pattern)
        )
        c = [(prev[i] >> cb[i]) & 1 for i in range(3)]
        maj = (c[0] & c[1]) | (c[0] & c[2]) | (c[1] & c[2])
        if all((c[i] == maj) == pattern[i] for i in range(3)):
            out.append(prev)
    return out


def clock_backward(params: CipherParams, state: CipherState) -> set[CipherState]:
    """Every state that one forward clock maps onto ``state`` (0 to 4 of them)."""
    return {CipherState(*p) for p in _predecessors(params, (state.r1, state.r2, state.r3))}


@lru_cache(maxsize=None)
def load_matrix(params: CipherParams) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Packed post-load states for each unit key bit and each unit frame bit."""
    key_cols = tuple(CipherState(*_load(params, 1 << i, 0)).pack(params)
                     for i in range(params.key_bits))
    frame_cols = tuple(CipherState(*_load(params, 0, 1 << i)).pack(params)
                       for i in range(params.frame_bits))
    return key_cols, frame_cols


@lru_cache(maxsize=None)
def _key_basis(params: CipherParams):
    """Echelon basis of the key columns plus the kernel of the key map."""
    key_cols, _ = load_matrix(params)
    pivots: dict[int, tuple[int, int]] = {}
    kernel = []
    for i, col in enumerate(key_cols):
        vec, combo = col, 1 << i
        while vec:
            top = vec.bit_length() - 1
            if top not in pivots:
                pivots[top] = (vec, combo)
                break
            pvec, pcombo = pivots[top]
            vec ^= pvec
            combo ^= pcombo
        else:
            kernel.append(combo)
    return pivots, tuple(kernel)


def _solve_load(params: CipherParams, target: int, frame: int) -> list[int]:
    _, frame_cols = load_matrix(params)
    for i, col in enumerate(frame_cols):
        if (frame >> i) & 1:
            target ^= col
    pivots, kernel = _key_basis(params)
    combo = 0
    while target:
        top = target.bit_length() - 1
        if top not in pivots:
            return []
        pvec, pcombo = pivots[top]
        target ^= pvec
        combo ^= pcombo
    if len(kernel) > 20:
        raise BudgetExceeded(f"key map kernel has dimension {len(kernel)}")
    solutions = []
    for sel in range(1 << len(kernel)):
        k = combo
        for j, vec in enumerate(kernel):
            if (sel >> j) & 1:
                k ^= vec
        solutions.append(k)
    return solutions


def recover_key(
    params: CipherParams,
    state: CipherState,
    frame: int,
    offset: int,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> set[SessionKey]:
    """Roll ``state`` back to the end of the load phase and invert the load.

    ``offset`` counts the keystream bits produced between the end of setup and
    ``state``.  Every returned key reproduces ``state`` when run forward.
    """
    if offset < 0:
        raise ValueError("offset must be non-negative")
    depth = offset + params.mix_clocks
    visited = 0
    leaves = []
    stack: list[tuple[tuple[int, int, int], int]] = [((state.r1, state.r2, state.r3), 0)]
    while stack:
        regs, d = stack.pop()
        visited += 1
        if visited > node_budget:
            raise BudgetExceeded(f"backward search exceeded {node_budget} nodes")
        if d == depth:
            leaves.append(regs)
            continue
        for prev in _predecessors(params, regs):
            stack.append((prev, d + 1))

    keys = set()
    for regs in leaves:
        for kc in _solve_load(params, CipherState(*regs).pack(params), frame):
            if advance(params, key_setup(params, kc, frame), offset) == state:
                keys.add(SessionKey(kc))
    return keys
