"""Passive eavesdropper: known plaintext, keystream samples, key recovery, decoding.

Everything here works from an attacker-mode :class:`~gtl.gsm.CaptureLog`
(no ground truth attached); passing a capture that still carries its truth is
an error, so results can only be scored against the truth by the caller.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .a51 import BudgetExceeded, CipherState, SessionKey, recover_key
from .gsm import (
    CIPHER_IDS,
    CMC_INFO,
    CONTROL_SLOT,
    DATA_BITS,
    HALF_BITS,
    INFO_MAX,
    L2_LEN,
    MASK114,
    PAD_BYTE,
    PAYLOAD_BITS,
    SACCH_PERIOD,
    Burst,
    CaptureLog,
    Cipher,
    MessageKind,
    ReplayWitness,
    SimModel,
    _coded_from_bytes,
    blocks,
    cipher_frame,
    control_blocks,
    decipher,
    decode_frame,
    hop_index,
    join_bursts,
    parse_assignment,
    parse_system_info,
    replay_challenge,
)
from .tmto import KeystreamSample, TmtoTable, lookup_points

REPORT_SCHEMA = "gtl.attack_report/1"
LOOKUP_CHUNK = 64

SOURCES = ("padding", "system_info", "protocol_script")


def _require_attacker_mode(capture: CaptureLog) -> None:
    if capture.truth is not None or capture.cell is not None:
        raise ValueError("attack functions take attacker-mode captures (use attacker_view())")


@dataclass(frozen=True)
class PlaintextGuess:
    frame: int
    slot: int
    direction: str
    known_mask: int
    known_value: int
    source: str

    @property
    def positions(self) -> list[int]:
        return [i for i in range(2 * HALF_BITS) if (self.known_mask >> i) & 1]

    @property
    def known_bits(self) -> int:
        return bin(self.known_mask).count("1")


def _byte_mask(first: int, count: int) -> int:
    return ((1 << (8 * count)) - 1) << (8 * first)


def _mirror(mask: int) -> int:
    return mask | (mask << HALF_BITS)


def frame_guesses(kind: MessageKind, info: bytes, frame: int, slot: int, direction: str,
                  info_source: str, padding_known: bool) -> list[PlaintextGuess]:
    """Known coded bits of one message whose kind and info the attacker can predict."""
    n_pad = INFO_MAX - len(info)
    data = bytes([int(kind), len(info)]) + info + bytes([PAD_BYTE]) * n_pad
    value = _coded_from_bytes(data)
    header = _byte_mask(0, 2)
    body = _byte_mask(2, len(info))
    pad = _byte_mask(2 + len(info), n_pad) if padding_known else 0
    crc = ((1 << 16) - 1) << DATA_BITS
    fill = ((1 << (HALF_BITS - DATA_BITS - 16)) - 1) << (DATA_BITS + 16)
    masks = {"protocol_script": header | fill, "padding": pad}
    masks[info_source] = masks.get(info_source, 0) | body
    if padding_known or n_pad == 0:
        # the CRC is computable only once every data bit is known
        masks["padding" if n_pad else info_source] |= crc
    out = []
    for source in SOURCES:
        m = _mirror(masks.get(source, 0))
        if m:
            out.append(PlaintextGuess(frame, slot, direction, m, value & m, source))
    return out


def _clear_messages(capture: CaptureLog):
    for direction, base, payloads in control_blocks(capture):
        yield direction, base, decode_frame(join_bursts(payloads))


def extract_known_plaintext(capture: CaptureLog) -> list[PlaintextGuess]:
    """Guess plaintext of the cipher-mode-complete and of ciphered system info."""
    _require_attacker_mode(capture)
    si_info = None
    random_padding = False
    command_at = None
    for direction, base, l2 in _clear_messages(capture):
        if l2 is None:
            continue
        if l2.padding and set(l2.padding) != {PAD_BYTE}:
            random_padding = True
        if l2.kind is MessageKind.SYSTEM_INFO and si_info is None:
            si_info = l2.info
        if l2.kind is MessageKind.CIPHER_MODE_COMMAND and command_at is None:
            command_at = base

    guesses: list[PlaintextGuess] = []
    if command_at is not None:
        uplink = [base for d, base, _ in control_blocks(capture) if d == "U" and base > command_at]
        if uplink:
            guesses += frame_guesses(MessageKind.CIPHER_MODE_COMPLETE, CMC_INFO, min(uplink),
                                     CONTROL_SLOT, "U", "protocol_script", not random_padding)

    if si_info is not None:
        traffic = [k for k in blocks(capture.bursts) if k[0] != CONTROL_SLOT]
        if traffic:
            start = min(base for _, _, base in traffic)
            for slot, direction, base in sorted(traffic, key=lambda k: (k[2], k[0], k[1])):
                if direction == "D" and ((base - start) // 4) % SACCH_PERIOD == 0:
                    guesses += frame_guesses(MessageKind.SYSTEM_INFO, si_info, base, slot, "D",
                                             "system_info", not random_padding)
    return guesses


def _runs(mask: int, n: int) -> list[tuple[int, int]]:
    runs, i = [], 0
    while i < n:
        if (mask >> i) & 1:
            j = i
            while j < n and (mask >> j) & 1:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def derive_samples(capture: CaptureLog, guesses: Sequence[PlaintextGuess],
                   width: int | None = None) -> list[KeystreamSample]:
    """Keystream windows under every fully known ``width``-bit stretch of a burst."""
    width = width or capture.params.state_width
    wmask = (1 << width) - 1
    merged: dict[tuple[int, int, str], dict[str, int]] = {}
    values: dict[tuple[int, int, str], int] = {}
    for g in guesses:
        key = (g.frame, g.slot, g.direction)
        src = merged.setdefault(key, {})
        src[g.source] = src.get(g.source, 0) | g.known_mask
        values[key] = values.get(key, 0) | g.known_value

    index: dict[tuple[int, int, str], list[Burst]] = {}
    for b in capture.bursts:
        index.setdefault((b.frame, b.slot, b.direction), []).append(b)

    samples = []
    for key in sorted(merged):
        base, slot, direction = key
        total = 0
        for m in merged[key].values():
            total |= m
        for i in range(4):
            shift = PAYLOAD_BITS * i
            seg = (total >> shift) & MASK114
            if not seg:
                continue
            plain = (values[key] >> shift) & MASK114
            pad = (merged[key].get("padding", 0) >> shift) & MASK114
            sysi = (merged[key].get("system_info", 0) >> shift) & MASK114
            for burst in index.get((base + i, slot, direction), ()):
                ks = burst.payload ^ plain
                for a, b in _runs(seg, PAYLOAD_BITS):
                    for o in range(a, b - width + 1):
                        if (pad >> o) & wmask:
                            source = "padding"
                        elif (sysi >> o) & wmask:
                            source = "system_info"
                        else:
                            source = "protocol_script"
                        samples.append(KeystreamSample((ks >> o) & wmask, base + i, o,
                                                       direction, slot, burst.arfcn, source))
    return samples


# --- decoding with a key ----------------------------------------------------

def session_cipher(capture: CaptureLog) -> Cipher:
    """Cipher named by the cleartext cipher-mode command (A5/1 if none is seen)."""
    ids = {v: k for k, v in CIPHER_IDS.items()}
    for _, _, l2 in _clear_messages(capture):
        if l2 is not None and l2.kind is MessageKind.CIPHER_MODE_COMMAND and l2.info:
            return ids.get(l2.info[0], Cipher.A51)
    return Cipher.A51


def enciphered_blocks(capture: CaptureLog) -> list[tuple[int, int, str, list[int]]]:
    """Unambiguous, complete blocks that do not decode in the clear, in time order."""
    out = []
    for (slot, direction, base), parts in blocks(capture.bursts).items():
        if not all(len(parts.get(i, ())) == 1 for i in range(4)):
            continue
        payloads = [parts[i][0].payload for i in range(4)]
        if decode_frame(join_bursts(payloads)) is None:
            out.append((base, slot, direction, payloads))
    out.sort(key=lambda t: (t[0], t[1], t[2]))
    return out


@dataclass(frozen=True, order=True)
class TranscriptEntry:
    frame: int
    slot: int
    direction: str
    kind: str
    info: str

    @classmethod
    def of(cls, frame, slot, direction, kind: MessageKind, info: bytes) -> "TranscriptEntry":
        return cls(frame, slot, direction, kind.name.lower(), info.hex())


@dataclass
class Transcript:
    messages: list[TranscriptEntry] = field(default_factory=list)
    crc_failures: int = 0
    missing_bursts: int = 0
    traffic_frames: int = 0
    traffic_recovered: int = 0
    hop_parameters: dict | None = None

    def matches(self, truth_messages) -> bool:
        expected = sorted(TranscriptEntry.of(m.frame, m.slot, m.direction, m.kind, m.info)
                          for m in truth_messages)
        return sorted(self.messages) == expected


def _key_decrypts(capture: CaptureLog, kc: int, block, cipher: Cipher) -> bool:
    base, _, direction, payloads = block
    return decode_frame(decipher(payloads, kc, base, direction, cipher, capture.params)) is not None


def dehop_decrypt(capture: CaptureLog, kc: SessionKey | int) -> Transcript:
    """Decrypt signalling, learn hop parameters, follow the traffic channel."""
    _require_attacker_mode(capture)
    kc = int(kc)
    params = capture.params
    cipher = session_cipher(capture)
    out = Transcript()
    si = assignment = None
    control_arfcns = {b.arfcn for b in capture.bursts if b.slot == CONTROL_SLOT}

    for direction, base, payloads in control_blocks(capture):
        l2 = decode_frame(join_bursts(payloads))
        if l2 is None:
            l2 = decode_frame(decipher(payloads, kc, base, direction, cipher, params))
        if l2 is None:
            out.crc_failures += 1
            continue
        out.messages.append(TranscriptEntry.of(base, CONTROL_SLOT, direction, l2.kind, l2.info))
        if l2.kind is MessageKind.SYSTEM_INFO and si is None:
            si = parse_system_info(l2.info)
        elif l2.kind is MessageKind.ASSIGNMENT:
            assignment = parse_assignment(l2.info)

    if assignment is None:
        return out
    cell_channels = [a for a in (si[1] if si else ()) if a not in control_arfcns]
    ma = [a for i, a in enumerate(cell_channels) if (assignment.ma_bitmap >> i) & 1]
    out.hop_parameters = {"hopping": assignment.hopping, "hsn": assignment.hsn,
                          "maio": assignment.maio, "slot": assignment.slot,
                          "start": assignment.start, "allocation": ma}

    def channel(frame):
        if assignment.hopping and ma:
            return ma[hop_index(len(ma), assignment.hsn, assignment.maio, frame)]
        return assignment.arfcn

    index = {(b.frame, b.slot, b.direction, b.arfcn): b.payload for b in capture.bursts}
    last = max((b.frame for b in capture.bursts if b.slot == assignment.slot), default=-1)
    base = assignment.start
    while base <= last:
        for direction in "DU":
            found = [index.get((base + i, assignment.slot, direction, channel(base + i)))
                     for i in range(4)]
            if all(p is None for p in found):
                continue
            out.traffic_frames += 1
            if any(p is None for p in found):
                out.missing_bursts += sum(p is None for p in found)
                continue
            l2 = decode_frame(decipher(found, kc, base, direction, cipher, params))
            if l2 is None:
                out.crc_failures += 1
                continue
            out.traffic_recovered += 1
            out.messages.append(TranscriptEntry.of(base, assignment.slot, direction,
                                                   l2.kind, l2.info))
        base += 4
    return out


# --- cracking ---------------------------------------------------------------

class Outcome(str, enum.Enum):
    KEY_FOUND = "key_found"
    NOT_COVERED = "not_covered"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class AttackReport:
    outcome: Outcome
    samples_total: int
    samples_tried: int = 0
    key_found: SessionKey | None = None
    lookup_latency: float = 0.0
    candidate_states: int = 0
    candidate_keys: int = 0
    decrypted_frames: int = 0
    transcript: list[TranscriptEntry] = field(default_factory=list)
    winning_sample: KeystreamSample | None = None
    note: str = ""

    def to_dict(self) -> dict:
        d = {
            "schema": REPORT_SCHEMA,
            "outcome": self.outcome.value,
            "samples_total": self.samples_total,
            "samples_tried": self.samples_tried,
            "key_found": None if self.key_found is None else format(self.key_found.kc, "x"),
            "lookup_latency_s": self.lookup_latency,
            "candidate_states": self.candidate_states,
            "candidate_keys": self.candidate_keys,
            "decrypted_frames": self.decrypted_frames,
            "transcript": [asdict(m) for m in self.transcript],
            "winning_sample": None if self.winning_sample is None else asdict(self.winning_sample),
        }
        if self.note:
            d["note"] = self.note
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def crack_session(
    samples: Sequence[KeystreamSample],
    tables: Sequence[TmtoTable],
    capture: CaptureLog,
    max_samples: int | None = None,
    node_budget: int = 1 << 22,
) -> tuple[SessionKey | None, AttackReport]:
    """Try samples in capture order until a recovered key decrypts an independent frame.

    Lookups run in batches of ``LOOKUP_CHUNK`` samples.  The first verified key
    cancels all remaining work: later samples of its batch are never examined
    and never reach the report.  ``max_samples`` caps how many samples are tried.
    """
    _require_attacker_mode(capture)
    params = capture.params
    cipher = session_cipher(capture)
    verify_pool = enciphered_blocks(capture)
    report = AttackReport(Outcome.NOT_COVERED, len(samples))
    spent = 0.0

    limit = len(samples) if max_samples is None else min(max_samples, len(samples))
    budget_hit = limit < len(samples)
    state_tables = [t for t in tables if t.params.key_space is None]
    for lo in range(0, limit, LOOKUP_CHUNK):
        chunk = samples[lo:min(lo + LOOKUP_CHUNK, limit)]
        # lookups are batched; samples are still tried strictly in order
        t0 = time.perf_counter()
        found = (lookup_points(state_tables, [s.bits for s in chunk])
                 if state_tables else [set()] * len(chunk))
        per_sample = (time.perf_counter() - t0) / len(chunk)
        for sample, points in zip(chunk, found):
            report.samples_tried += 1
            spent += per_sample
            report.candidate_states += len(points)
            if not points:
                continue
            block = next((b for b in verify_pool if not b[0] <= sample.frame < b[0] + 4), None)
            if block is None:
                continue
            frame = cipher_frame(params, sample.frame)
            for point in sorted(points):
                state = CipherState.unpack(params, point)
                try:
                    keys = recover_key(params, state, frame, sample.stream_offset, node_budget)
                except BudgetExceeded:
                    budget_hit = True
                    continue
                report.candidate_keys += len(keys)
                for key in sorted(keys, key=lambda k: k.kc):
                    if _key_decrypts(capture, key.kc, block, cipher):
                        report.outcome = Outcome.KEY_FOUND
                        report.key_found = key
                        report.winning_sample = sample
                        report.lookup_latency = spent / report.samples_tried
                        return key, report

    if budget_hit:
        report.outcome = Outcome.BUDGET_EXHAUSTED
    report.lookup_latency = spent / report.samples_tried if report.samples_tried else 0.0
    return None, report


def eavesdrop(capture: CaptureLog, tables: Sequence[TmtoTable],
              max_samples: int | None = None) -> AttackReport:
    """All three stages: samples from guessed plaintext, key recovery, decoding."""
    samples = derive_samples(capture, extract_known_plaintext(capture))
    key, report = crack_session(samples, tables, capture, max_samples)
    if key is not None:
        transcript = dehop_decrypt(capture, key)
        report.transcript = transcript.messages
        report.decrypted_frames = len(transcript.messages)
    return report


@dataclass
class ReplayReport:
    witness: ReplayWitness
    transcript: Transcript
    recovered: bool


def downgrade_replay_demo(capture: CaptureLog, sim: SimModel) -> ReplayReport:
    """Replay the recorded challenge, take the repeated key, decrypt the old call.

    Breaking the replayed session's weak cipher is not modelled; the SIM's
    answer stands in for that (instant) break.
    """
    _require_attacker_mode(capture)
    witness = replay_challenge(capture, sim)
    transcript = dehop_decrypt(capture, witness.derived)
    recovered = (transcript.traffic_frames > 0 and transcript.crc_failures == 0
                 and transcript.missing_bursts == 0
                 and transcript.traffic_recovered == transcript.traffic_frames)
    return ReplayReport(witness, transcript, recovered)
