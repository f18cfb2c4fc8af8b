"""Independent reference implementations used only by the test-suite.

Nothing here imports the package's cipher code.  Registers are plain lists of
bits (index 0 = least significant bit) and every step is written out the long
way so that it can be compared against the optimized kernels.
"""

import numpy as np

# (lengths, taps, clock bits, output bits, mix clocks, key bits, frame bits)
FULL_GEOMETRY = (
    (19, 22, 23),
    ((13, 16, 17, 18), (20, 21), (7, 20, 21, 22)),
    (8, 10, 10),
    (18, 21, 22),
    100,
    64,
    22,
)
TOY_GEOMETRY = (
    (7, 8, 9),
    ((5, 6), (6, 7), (4, 8)),
    (3, 4, 4),
    (6, 7, 8),
    24,
    24,
    8,
)


def _shift(reg, taps, inject=0):
    fb = inject
    for t in taps:
        fb ^= reg[t]
    # every bit moves one place up, the feedback enters at bit 0
    return [fb] + reg[:-1]


def _majority(a, b, c):
    return 1 if a + b + c >= 2 else 0


class OracleA51:
    def __init__(self, geometry):
        (self.lengths, self.taps, self.clock_bits, self.out_bits,
         self.mix, self.key_bits, self.frame_bits) = geometry
        self.regs = [[0] * n for n in self.lengths]

    def set_state(self, r1, r2, r3):
        for i, value in enumerate((r1, r2, r3)):
            self.regs[i] = [(value >> j) & 1 for j in range(self.lengths[i])]

    def state(self):
        return tuple(sum(b << j for j, b in enumerate(reg)) for reg in self.regs)

    def clock_all(self, inject=0):
        for i in range(3):
            self.regs[i] = _shift(self.regs[i], self.taps[i], inject)

    def clock_majority(self):
        c = [self.regs[i][self.clock_bits[i]] for i in range(3)]
        m = _majority(*c)
        for i in range(3):
            if c[i] == m:
                self.regs[i] = _shift(self.regs[i], self.taps[i])

    def out(self):
        return (self.regs[0][self.out_bits[0]]
                ^ self.regs[1][self.out_bits[1]]
                ^ self.regs[2][self.out_bits[2]])

    def setup(self, key, frame, mix=None):
        self.regs = [[0] * n for n in self.lengths]
        for i in range(self.key_bits):
            self.clock_all((key >> i) & 1)
        for i in range(self.frame_bits):
            self.clock_all((frame >> i) & 1)
        for _ in range(self.mix if mix is None else mix):
            self.clock_majority()

    def bits(self, n):
        out = []
        for _ in range(n):
            self.clock_majority()
            out.append(self.out())
        return out


def oracle_keystream_bits(geometry, key, frame, n=228):
    c = OracleA51(geometry)
    c.setup(key, frame)
    return c.bits(n)


def oracle_state_after_setup(geometry, key, frame, mix=None):
    c = OracleA51(geometry)
    c.setup(key, frame, mix)
    return c.state()


def oracle_step(geometry, r1, r2, r3):
    c = OracleA51(geometry)
    c.set_state(r1, r2, r3)
    bit = c.bits(1)[0]
    return c.state(), bit


def oracle_keystream_from_state(geometry, regs, n):
    c = OracleA51(geometry)
    c.set_state(*regs)
    return c.bits(n)


def bits_to_int(bits):
    return sum(b << i for i, b in enumerate(bits))


def pack_bits_msb(bits):
    """Pack a bit list MSB-first into bytes, zero padded (reference C layout)."""
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        out[i // 8] |= b << (7 - (i & 7))
    return bytes(out)


# --- vectorized oracle over every TOY state --------------------------------

def oracle_toy_keystream_table(width_bits=24):
    """keystream(state, 24) for all 2**24 TOY states, computed column-wise.

    Registers are unpacked as r1 | r2 << 7 | r3 << 15.
    """
    lengths, taps, clock_bits, out_bits = TOY_GEOMETRY[:4]
    x = np.arange(1 << 24, dtype=np.uint32)
    regs = [
        (x & 0x7F).astype(np.uint16),
        ((x >> 7) & 0xFF).astype(np.uint16),
        ((x >> 15) & 0x1FF).astype(np.uint16),
    ]
    del x
    masks = [(1 << n) - 1 for n in lengths]
    result = np.zeros(1 << 24, dtype=np.uint32)
    for i in range(width_bits):
        cb = [(regs[k] >> clock_bits[k]) & 1 for k in range(3)]
        maj = (cb[0] & cb[1]) | (cb[0] & cb[2]) | (cb[1] & cb[2])
        for k in range(3):
            fb = np.zeros_like(regs[k])
            for t in taps[k]:
                fb ^= (regs[k] >> t) & 1
            stepped = ((regs[k] << 1) & masks[k]) | fb
            regs[k] = np.where(cb[k] == maj, stepped, regs[k]).astype(np.uint16)
        bit = ((regs[0] >> out_bits[0]) ^ (regs[1] >> out_bits[1]) ^ (regs[2] >> out_bits[2])) & 1
        result |= bit.astype(np.uint32) << np.uint32(i)
    return result


def toy_round_constants(colors, width=24):
    return [((c + 1) * 0x9E3779B97F4A7C15) & ((1 << width) - 1) for c in range(colors)]


class ReferenceChainWalker:
    """Plain-Python rainbow/distinguished-point chains over TOY states."""

    def __init__(self, table, colors, dp_bits, t_max, width=24):
        self.table = table
        self.colors = colors
        self.dp_mask = (1 << dp_bits) - 1
        self.t_max = t_max
        self.rc = toy_round_constants(colors, width)

    def f(self, x, color):
        return int(self.table[x]) ^ self.rc[color]

    def chain(self, start):
        x = start
        for color in range(self.colors):
            steps = 0
            while True:
                x = self.f(x, color)
                steps += 1
                if x & self.dp_mask == 0:
                    break
                if steps >= self.t_max:
                    return None
            # next color
        return x

    def build(self, starts):
        ends = {}
        overflow = 0
        for s in starts:
            e = self.chain(int(s))
            if e is None:
                overflow += 1
                continue
            if e not in ends or int(s) < ends[e]:
                ends[e] = int(s)
        completed = len(starts) - overflow
        return ends, completed - len(ends), overflow
