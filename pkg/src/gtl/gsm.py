"""Deterministic GSM air-interface model as seen by a passive listener.

One session runs a fixed signalling script on a non-hopping control carrier
(slot 0), then moves to a traffic channel that may hop over the cell's
allocation.  Each 23-byte L2 frame becomes 456 coded bits (CRC-16 and a
verbatim repeat instead of convolutional coding) spread over four bursts of
114 bits in consecutive TDMA frames.
"""

from __future__ import annotations

import binascii
import enum
import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .a51 import TOY, CipherParams, SessionKey, preset_by_name, weaken

PAYLOAD_BITS = 114
CODED_BITS = 456
HALF_BITS = 228
L2_LEN = 23
INFO_MAX = L2_LEN - 2
PAD_BYTE = 0x2B
DATA_BITS = L2_LEN * 8
CRC_BITS = 16
SLOT_TENTHS_US = 5769  # 576.9 us
HYPERFRAME = 2715648
SACCH_PERIOD = 4
CONTROL_SLOT = 0
MASK114 = (1 << PAYLOAD_BITS) - 1
MASK228 = (1 << HALF_BITS) - 1

CMC_INFO = b"\x06\x32"

# GSM 05.02 pseudo-random hopping table
RNTABLE = (
    48, 98, 63, 1, 36, 95, 78, 102, 94, 73, 0, 64, 25, 81, 76, 59, 124, 23, 104,
    100, 101, 47, 118, 85, 18, 56, 96, 86, 54, 2, 80, 34, 127, 13, 6, 89, 57, 103,
    12, 74, 55, 111, 75, 38, 109, 71, 112, 29, 11, 88, 87, 19, 3, 68, 110, 26, 33,
    31, 8, 45, 82, 58, 40, 107, 32, 5, 106, 92, 62, 67, 77, 108, 122, 37, 60, 66,
    121, 42, 51, 126, 117, 114, 4, 90, 43, 52, 53, 113, 120, 72, 16, 49, 7, 79, 119,
    61, 22, 84, 9, 97, 91, 15, 21, 24, 46, 39, 93, 105, 65, 70, 125, 99, 17, 123,
)


class MessageKind(enum.IntEnum):
    SYSTEM_INFO = 0x19
    AUTH_REQUEST = 0x12
    CIPHER_MODE_COMMAND = 0x35
    CIPHER_MODE_COMPLETE = 0x32
    ASSIGNMENT = 0x2E
    TRAFFIC = 0x7F


class AssignmentMode(str, enum.Enum):
    EARLY = "early"
    IMMEDIATE = "immediate"


class Cipher(str, enum.Enum):
    NONE = "none"
    A51 = "a51"
    STRONG = "strong_opaque"


CIPHER_IDS = {Cipher.NONE: 0, Cipher.A51: 1, Cipher.STRONG: 3}


@dataclass(frozen=True)
class CellConfig:
    arfcn_allocation: tuple[int, ...] = (12, 25, 38, 51, 64, 77, 90, 103)
    hsn: int = 21
    maio: int = 0
    hopping_enabled: bool = True
    assignment_mode: AssignmentMode = AssignmentMode.EARLY
    cipher: Cipher = Cipher.A51
    random_padding: bool = False
    weak_keys: bool = False
    preset: str = "TOY"
    cell_id: int = 0x1F2E
    bcch_arfcn: int = 1
    traffic_slot: int = 2
    decoy_load: float = 0.0

    def __post_init__(self):
        alloc = tuple(int(a) for a in self.arfcn_allocation)
        if not alloc or len(alloc) > 64:
            raise ValueError("allocation must hold 1..64 channels")
        if len(set(alloc)) != len(alloc):
            raise ValueError("allocation channels must be distinct")
        if any(not 1 <= a <= 124 for a in alloc + (self.bcch_arfcn,)):
            raise ValueError("channels must lie in 1..124")
        if self.bcch_arfcn in alloc:
            raise ValueError("the control carrier cannot be part of the hopping allocation")
        if not 0 <= self.hsn <= 63:
            raise ValueError("hsn must be in 0..63")
        if not 0 <= self.maio < len(alloc):
            raise ValueError("maio must index the allocation")
        if not 1 <= self.traffic_slot <= 7:
            raise ValueError("traffic slot must be 1..7")
        if not 0.0 <= self.decoy_load <= 1.0:
            raise ValueError("decoy_load must be a probability")
        object.__setattr__(self, "arfcn_allocation", tuple(sorted(alloc)))
        object.__setattr__(self, "assignment_mode", AssignmentMode(self.assignment_mode))
        object.__setattr__(self, "cipher", Cipher(self.cipher))
        preset_by_name(self.preset)

    @property
    def params(self) -> CipherParams:
        return preset_by_name(self.preset)


# --- hopping ---------------------------------------------------------------

def hop_index(n: int, hsn: int, maio: int, frame: int) -> int:
    """Mobile allocation index for ``frame`` (GSM 05.02 hopping sequence)."""
    frame %= HYPERFRAME
    if hsn == 0:
        return (frame + maio) % n
    t1, t2, t3 = frame // 1326, frame % 26, frame % 51
    nbin = n.bit_length()
    m = t2 + RNTABLE[(hsn ^ (t1 % 64)) + t3]
    m_ = m % (1 << nbin)
    t_ = t3 % (1 << nbin)
    s = m_ if m_ < n else (m_ + t_) % n
    return (s + maio) % n


def hop_arfcn(config: CellConfig, frame: int) -> int:
    alloc = config.arfcn_allocation
    if not config.hopping_enabled:
        return alloc[config.maio]
    return alloc[hop_index(len(alloc), config.hsn, config.maio, frame)]


# --- L2 frames and coding --------------------------------------------------

@dataclass(frozen=True)
class L2Frame:
    kind: MessageKind
    info: bytes = b""
    padding: bytes = b""

    def __post_init__(self):
        if len(self.info) > INFO_MAX:
            raise ValueError(f"info holds {len(self.info)} bytes, at most {INFO_MAX} fit")
        if self.padding and len(self.info) + len(self.padding) != INFO_MAX:
            raise ValueError("padding must fill the frame exactly")

    def to_bytes(self) -> bytes:
        padding = self.padding or bytes([PAD_BYTE]) * (INFO_MAX - len(self.info))
        return bytes([int(self.kind), len(self.info)]) + self.info + padding


def pad_frame(l2: L2Frame, random_padding: bool = False,
              rng: random.Random | None = None) -> L2Frame:
    n = INFO_MAX - len(l2.info)
    if random_padding:
        if rng is None:
            raise ValueError("random padding needs an rng")
        padding = rng.randbytes(n)
    else:
        padding = bytes([PAD_BYTE]) * n
    return L2Frame(l2.kind, l2.info, padding)


def _coded_from_bytes(data: bytes) -> int:
    crc = binascii.crc_hqx(data, 0xFFFF)
    half = int.from_bytes(data, "little") | (crc << DATA_BITS)
    return half | (half << HALF_BITS)


def encode_frame(l2: L2Frame, random_padding: bool = False,
                 rng: random.Random | None = None) -> int:
    """456 coded bits as an int: data, CRC-16, zero fill to 228, then a copy."""
    if not l2.padding and len(l2.info) < INFO_MAX:
        l2 = pad_frame(l2, random_padding, rng)
    return _coded_from_bytes(l2.to_bytes())


def decode_frame(coded: int) -> L2Frame | None:
    """Inverse of :func:`encode_frame`; ``None`` when any check fails."""
    half = coded & MASK228
    if coded >> HALF_BITS != half:
        return None
    if half >> (DATA_BITS + CRC_BITS):
        return None
    data = (half & ((1 << DATA_BITS) - 1)).to_bytes(L2_LEN, "little")
    if binascii.crc_hqx(data, 0xFFFF) != half >> DATA_BITS:
        return None
    try:
        kind = MessageKind(data[0])
    except ValueError:
        return None
    n = data[1]
    if n > INFO_MAX:
        return None
    return L2Frame(kind, data[2:2 + n], data[2 + n:])


def split_bursts(coded: int) -> list[int]:
    return [(coded >> (PAYLOAD_BITS * i)) & MASK114 for i in range(4)]


def join_bursts(payloads: Sequence[int]) -> int:
    return sum(p << (PAYLOAD_BITS * i) for i, p in enumerate(payloads))


# --- ciphering -------------------------------------------------------------

def cipher_frame(params: CipherParams, frame: int) -> int:
    """Frame number fed to the cipher (COUNT), reduced to the preset's width."""
    return frame % (1 << params.frame_bits)


def a51_halves(params: CipherParams, kc: int, frames: Iterable[int]) -> list[tuple[int, int]]:
    """(downlink, uplink) 114-bit keystream halves for each TDMA frame."""
    frames = [cipher_frame(params, f) for f in frames]
    if not frames:
        return []
    key_cols, frame_cols = K.load_columns(params)
    kcs = np.full(len(frames), kc, dtype=np.uint64)
    bits = K.frame_keystreams(kcs, np.array(frames, dtype=np.int64), key_cols, frame_cols,
                              params.mix_clocks, 2 * PAYLOAD_BITS, K.geometry(params))
    packed = np.packbits(bits, axis=1, bitorder="little")
    out = []
    for row in packed:
        v = int.from_bytes(row.tobytes(), "little")
        out.append((v & MASK114, v >> PAYLOAD_BITS))
    return out


def strong_stream(kc: int, frame: int, direction: str) -> int:
    """Keyed PRF stream standing in for A5/3; only the key holder can rebuild it."""
    h = hashlib.blake2b(frame.to_bytes(4, "little") + direction.encode(),
                        key=kc.to_bytes(8, "little") + b"A5/3-model", digest_size=15)
    return int.from_bytes(h.digest(), "little") & MASK114


def burst_streams(params: CipherParams, cipher: Cipher, kc: int, frames: Sequence[int],
                  direction: str) -> list[int]:
    if cipher is Cipher.NONE:
        return [0] * len(frames)
    if cipher is Cipher.STRONG:
        return [strong_stream(kc, f, direction) for f in frames]
    halves = a51_halves(params, kc, frames)
    return [h[1] if direction == "U" else h[0] for h in halves]


def encipher(coded: int, kc: SessionKey | int, frame_base: int, direction: str,
             cipher: Cipher = Cipher.A51, params: CipherParams = TOY) -> list[int]:
    """Four burst payloads; burst ``i`` uses the keystream of ``frame_base + i``."""
    streams = burst_streams(params, Cipher(cipher), int(kc),
                            [frame_base + i for i in range(4)], direction)
    return [p ^ s for p, s in zip(split_bursts(coded), streams)]


def decipher(payloads: Sequence[int], kc: SessionKey | int, frame_base: int, direction: str,
             cipher: Cipher = Cipher.A51, params: CipherParams = TOY) -> int:
    streams = burst_streams(params, Cipher(cipher), int(kc),
                            [frame_base + i for i in range(4)], direction)
    return join_bursts([p ^ s for p, s in zip(payloads, streams)])


# --- authentication ---------------------------------------------------------

@dataclass
class SimModel:
    """The subscriber's SIM: derives Kc from RAND and a secret it never reveals.

    With ``fresh_rand`` set the handset refuses to repeat itself: a RAND it has
    already answered is mixed with a fresh nonce, so a replay yields a new key.
    """

    ki: bytes
    params: CipherParams = TOY
    weak_keys: bool = False
    fresh_rand: bool = False
    seen: set[bytes] = field(default_factory=set, repr=False)

    def derive(self, rand: bytes) -> SessionKey:
        if self.fresh_rand and rand in self.seen:
            rand = hashlib.blake2b(rand + len(self.seen).to_bytes(4, "little"),
                                   digest_size=16).digest()
        self.seen.add(rand)
        h = hashlib.blake2b(rand, key=self.ki, digest_size=8).digest()
        kc = int.from_bytes(h, "little") & ((1 << self.params.key_bits) - 1)
        if self.weak_keys:
            kc = weaken(kc)
        return SessionKey(kc, weak=self.weak_keys)


# --- captures ---------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Burst:
    frame: int
    arfcn: int
    slot: int
    direction: str
    payload: int

    def start_tenths(self) -> int:
        return (self.frame * 8 + self.slot) * SLOT_TENTHS_US

    @property
    def start_time(self) -> float:
        """Microseconds since frame 0 of the hyperframe."""
        return self.start_tenths() / 10


@dataclass(frozen=True)
class TruthMessage:
    frame: int
    slot: int
    direction: str
    kind: MessageKind
    info: bytes
    padding: bytes
    enciphered: bool


@dataclass(frozen=True)
class Truth:
    kc: SessionKey
    ki: bytes
    rand: bytes
    traffic_start: int
    messages: tuple[TruthMessage, ...]


@dataclass(frozen=True)
class CaptureMeta:
    cell_id: int
    preset: str
    epoch_us: int


@dataclass(frozen=True)
class CaptureLog:
    meta: CaptureMeta
    bursts: tuple[Burst, ...]
    cell: CellConfig | None = None
    truth: Truth | None = None
    bit_flips: int = 0

    @property
    def params(self) -> CipherParams:
        return preset_by_name(self.meta.preset)

    def attacker_view(self) -> "CaptureLog":
        return CaptureLog(self.meta, self.bursts)

    def sim_model(self, fresh_rand: bool = False) -> SimModel:
        """The victim handset's SIM after this session (it has answered truth.rand)."""
        if self.truth is None or self.cell is None:
            raise ValueError("the SIM model lives in the ground truth")
        return SimModel(self.truth.ki, self.params, self.cell.weak_keys, fresh_rand,
                        {self.truth.rand})


def system_info_payload(config: CellConfig) -> bytes:
    bitmap = 0
    for a in config.arfcn_allocation + (config.bcch_arfcn,):
        bitmap |= 1 << (a - 1)
    return config.cell_id.to_bytes(2, "little") + bitmap.to_bytes(16, "little")


def assignment_payload(config: CellConfig, start: int) -> bytes:
    alloc = config.arfcn_allocation
    flags = 1 if config.hopping_enabled else 0
    ma = (1 << len(alloc)) - 1
    return (bytes([flags, config.traffic_slot, config.hsn, config.maio])
            + start.to_bytes(3, "little")
            + alloc[config.maio].to_bytes(2, "little")
            + ma.to_bytes(8, "little"))


def parse_system_info(info: bytes) -> tuple[int, tuple[int, ...]]:
    cell_id = int.from_bytes(info[:2], "little")
    bitmap = int.from_bytes(info[2:18], "little")
    return cell_id, tuple(i + 1 for i in range(124) if (bitmap >> i) & 1)


@dataclass(frozen=True)
class Assignment:
    hopping: bool
    slot: int
    hsn: int
    maio: int
    start: int
    arfcn: int
    ma_bitmap: int


def parse_assignment(info: bytes) -> Assignment:
    return Assignment(
        hopping=bool(info[0] & 1),
        slot=info[1],
        hsn=info[2],
        maio=info[3],
        start=int.from_bytes(info[4:7], "little"),
        arfcn=int.from_bytes(info[7:9], "little"),
        ma_bitmap=int.from_bytes(info[9:17], "little"),
    )


def run_session(config: CellConfig, seed: int, traffic_blocks: int = 8) -> CaptureLog:
    """Simulate one call set-up plus ``traffic_blocks`` traffic blocks."""
    rng = random.Random(seed)
    params = config.params
    sim = SimModel(rng.randbytes(16), params, config.weak_keys)
    rand = rng.randbytes(16)
    kc = sim.derive(rand)
    fn = 4 * rng.randrange(0, (HYPERFRAME - 4 * (traffic_blocks + 16)) // 4)
    epoch = 1_280_000_000_000_000 + rng.randrange(10**9)
    ciphered = config.cipher is not Cipher.NONE

    bursts: list[Burst] = []
    truth: list[TruthMessage] = []

    def send(kind, info, frame_base, slot, direction, enciphered, arfcns):
        l2 = pad_frame(L2Frame(kind, info), config.random_padding, rng)
        coded = encode_frame(l2)
        if enciphered:
            payloads = encipher(coded, kc, frame_base, direction, config.cipher, params)
        else:
            payloads = split_bursts(coded)
        for i, p in enumerate(payloads):
            bursts.append(Burst(frame_base + i, arfcns[i], slot, direction, p))
        truth.append(TruthMessage(frame_base, slot, direction, kind, l2.info, l2.padding,
                                  enciphered))

    control = [config.bcch_arfcn] * 4
    si = system_info_payload(config)

    def control_msg(kind, info, direction="D", enciphered=False):
        nonlocal fn
        send(kind, info, fn, CONTROL_SLOT, direction, enciphered, control)
        fn += 4

    # traffic starts after the control exchange, leaving one spare block
    start = fn + 4 * 7
    control_msg(MessageKind.SYSTEM_INFO, si)
    control_msg(MessageKind.AUTH_REQUEST, b"\x00" + rand)
    if config.assignment_mode is AssignmentMode.IMMEDIATE:
        control_msg(MessageKind.ASSIGNMENT, assignment_payload(config, start))
    control_msg(MessageKind.CIPHER_MODE_COMMAND, bytes([CIPHER_IDS[config.cipher]]))
    control_msg(MessageKind.CIPHER_MODE_COMPLETE, CMC_INFO, "U", ciphered)
    if config.assignment_mode is AssignmentMode.EARLY:
        control_msg(MessageKind.ASSIGNMENT, assignment_payload(config, start), "D", ciphered)

    tn = config.traffic_slot
    for j in range(traffic_blocks):
        base = start + 4 * j
        arfcns = [hop_arfcn(config, base + i) for i in range(4)]
        if j % SACCH_PERIOD == 0:
            send(MessageKind.SYSTEM_INFO, si, base, tn, "D", ciphered, arfcns)
        else:
            send(MessageKind.TRAFFIC, rng.randbytes(INFO_MAX), base, tn, "D", ciphered, arfcns)
        send(MessageKind.TRAFFIC, rng.randbytes(INFO_MAX), base, tn, "U", ciphered, arfcns)
        if config.decoy_load > 0:
            for i in range(4):
                for a in config.arfcn_allocation:
                    if a == arfcns[i]:
                        continue
                    for d in "DU":
                        if rng.random() < config.decoy_load:
                            bursts.append(Burst(base + i, a, tn, d, rng.getrandbits(PAYLOAD_BITS)))

    bursts.sort(key=lambda b: (b.frame, b.slot, b.direction, b.arfcn))
    meta = CaptureMeta(config.cell_id, params.name, epoch)
    return CaptureLog(meta, tuple(bursts), config,
                      Truth(kc, sim.ki, rand, start, tuple(truth)))


def corrupt(capture: CaptureLog, bit_error_rate: float, seed: int) -> CaptureLog:
    """Flip each payload bit independently; nothing flags the damage before decryption."""
    if not 0.0 <= bit_error_rate <= 1.0:
        raise ValueError("bit_error_rate must lie in [0, 1]")
    if bit_error_rate == 0.0 or not capture.bursts:
        return capture
    rng = np.random.default_rng(seed)
    flips = rng.random((len(capture.bursts), PAYLOAD_BITS)) < bit_error_rate
    packed = np.packbits(flips, axis=1, bitorder="little")
    bursts = tuple(
        replace(b, payload=b.payload ^ int.from_bytes(row.tobytes(), "little"))
        for b, row in zip(capture.bursts, packed)
    )
    return replace(capture, bursts=bursts, bit_flips=capture.bit_flips + int(flips.sum()))


# --- block access shared with the attacker ----------------------------------

def blocks(bursts: Iterable[Burst], slot: int | None = None
           ) -> dict[tuple[int, str, int], dict[int, list[Burst]]]:
    """Bursts grouped by (slot, direction, block start) then by position 0..3."""
    out: dict[tuple[int, str, int], dict[int, list[Burst]]] = {}
    for b in bursts:
        if slot is not None and b.slot != slot:
            continue
        key = (b.slot, b.direction, b.frame - b.frame % 4)
        out.setdefault(key, {}).setdefault(b.frame % 4, []).append(b)
    return out


def control_blocks(capture: CaptureLog) -> list[tuple[str, int, list[int]]]:
    """Complete control-channel blocks as (direction, start frame, payloads)."""
    out = []
    for (_, direction, base), parts in sorted(blocks(capture.bursts, CONTROL_SLOT).items(),
                                              key=lambda kv: (kv[0][2], kv[0][1])):
        if all(len(parts.get(i, ())) == 1 for i in range(4)):
            out.append((direction, base, [parts[i][0].payload for i in range(4)]))
    return out


@dataclass(frozen=True)
class ReplayWitness:
    rand: bytes
    derived: SessionKey
    original: SessionKey | None

    @property
    def equal(self) -> bool | None:
        return None if self.original is None else self.derived == self.original


class NoChallengeError(LookupError):
    pass


def find_challenge(capture: CaptureLog) -> bytes:
    """RAND from the first cleartext authentication request in the capture."""
    for direction, _, payloads in control_blocks(capture):
        l2 = decode_frame(join_bursts(payloads)) if direction == "D" else None
        if l2 is not None and l2.kind is MessageKind.AUTH_REQUEST:
            return l2.info[1:17]
    raise NoChallengeError("capture holds no authentication request")


def replay_challenge(capture: CaptureLog, sim: SimModel) -> ReplayWitness:
    """Replay the recorded RAND to the handset's SIM, as a fake base station would."""
    rand = find_challenge(capture)
    derived = sim.derive(rand)
    original = capture.truth.kc if capture.truth is not None else None
    return ReplayWitness(rand, derived, original)
