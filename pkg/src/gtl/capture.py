"""Text capture logs and their ground-truth sidecars.

A log is one header line followed by one line per burst::

    #GTLCAP 1 cell=1f2e preset=TOY epoch_us=1280000000000000 bursts=84 crc=1a2b3c4d
    2078004 0 D 1 0f3a...(29 hex) 1280001199098407.6

Payload hex lists payload bit 0 first (MSB of the first nibble) and ends in two
zero spare bits.  The timestamp is ``epoch_us`` plus the burst start time.
``crc`` is the CRC-32 of the header text before `` crc=`` followed by every
byte after the header line.  The sidecar is JSON next to the log, same stem,
``.truth`` suffix.
"""

from __future__ import annotations

import json
import re
import zlib
from pathlib import Path

from .a51 import SessionKey
from .gsm import (
    PAYLOAD_BITS,
    Burst,
    CaptureLog,
    CaptureMeta,
    CellConfig,
    MessageKind,
    Truth,
    TruthMessage,
)

FORMAT_VERSION = 1
TRUTH_SCHEMA = "gtl.truth/1"
_HEADER = re.compile(
    r"#GTLCAP (\d+) cell=([0-9a-f]{1,4}) preset=([A-Z]+) epoch_us=(\d+) bursts=(\d+) crc=([0-9a-f]{8})"
)


class CaptureFormatError(ValueError):
    """The capture log or its sidecar does not parse."""


def payload_hex(payload: int) -> str:
    bits = format(payload, f"0{PAYLOAD_BITS}b")[::-1] + "00"
    return format(int(bits, 2), "029x")


def parse_payload_hex(text: str) -> int:
    if len(text) != 29 or not re.fullmatch(r"[0-9a-f]+", text):
        raise CaptureFormatError(f"payload must be 29 lowercase hex digits, got {text!r}")
    v = int(text, 16)
    if v & 3:
        raise CaptureFormatError("spare payload bits must be zero")
    return int(format(v >> 2, f"0{PAYLOAD_BITS}b")[::-1], 2)


def _timestamp(epoch_us: int, burst: Burst) -> str:
    tenths = epoch_us * 10 + burst.start_tenths()
    return f"{tenths // 10}.{tenths % 10}"


def capture_text(capture: CaptureLog) -> str:
    meta = capture.meta
    body = "".join(
        f"{b.frame} {b.slot} {b.direction} {b.arfcn} {payload_hex(b.payload)} "
        f"{_timestamp(meta.epoch_us, b)}\n"
        for b in capture.bursts
    )
    head = (f"#GTLCAP {FORMAT_VERSION} cell={meta.cell_id:x} preset={meta.preset} "
            f"epoch_us={meta.epoch_us} bursts={len(capture.bursts)}")
    crc = zlib.crc32((head + body).encode("ascii"))
    return f"{head} crc={crc:08x}\n{body}"


def parse_capture(text: str) -> CaptureLog:
    """Attacker-mode capture from log text."""
    header, sep, body = text.partition("\n")
    m = _HEADER.fullmatch(header)
    if not sep or m is None:
        raise CaptureFormatError("missing or malformed #GTLCAP header")
    version, cell, preset, epoch, count, crc = m.groups()
    if int(version) != FORMAT_VERSION:
        raise CaptureFormatError(f"unsupported capture version {version}")
    if preset not in ("FULL", "TOY"):
        raise CaptureFormatError(f"unknown preset {preset}")
    head = header[:header.rindex(" crc=")]
    if zlib.crc32((head + body).encode("ascii", "replace")) != int(crc, 16):
        raise CaptureFormatError("capture checksum mismatch")
    meta = CaptureMeta(int(cell, 16), preset, int(epoch))
    lines = body.splitlines()
    if len(lines) != int(count):
        raise CaptureFormatError(f"header announces {count} bursts, found {len(lines)}")
    bursts = []
    seen = set()
    for n, line in enumerate(lines, 2):
        parts = line.split(" ")
        if len(parts) != 6 or parts[2] not in ("U", "D"):
            raise CaptureFormatError(f"line {n}: malformed burst record")
        try:
            frame, slot, arfcn = int(parts[0]), int(parts[1]), int(parts[3])
        except ValueError:
            raise CaptureFormatError(f"line {n}: non-numeric field") from None
        if not 0 <= slot <= 7:
            raise CaptureFormatError(f"line {n}: slot out of range")
        b = Burst(frame, arfcn, slot, parts[2], parse_payload_hex(parts[4]))
        if parts[5] != _timestamp(meta.epoch_us, b):
            raise CaptureFormatError(f"line {n}: timestamp disagrees with frame and slot")
        key = (frame, slot, parts[2], arfcn)
        if key in seen:
            raise CaptureFormatError(f"line {n}: duplicate burst")
        if bursts and (b.start_tenths(), b.direction, b.arfcn) < (
                bursts[-1].start_tenths(), bursts[-1].direction, bursts[-1].arfcn):
            raise CaptureFormatError(f"line {n}: bursts out of time order")
        seen.add(key)
        bursts.append(b)
    return CaptureLog(meta, tuple(bursts))


def truth_dict(capture: CaptureLog) -> dict:
    t, c = capture.truth, capture.cell
    if t is None or c is None:
        raise ValueError("capture carries no ground truth")
    return {
        "schema": TRUTH_SCHEMA,
        "kc": format(t.kc.kc, "x"),
        "weak": t.kc.weak,
        "ki": t.ki.hex(),
        "rand": t.rand.hex(),
        "traffic_start": t.traffic_start,
        "bit_flips": capture.bit_flips,
        "cell": {
            "arfcn_allocation": list(c.arfcn_allocation),
            "hsn": c.hsn,
            "maio": c.maio,
            "hopping_enabled": c.hopping_enabled,
            "assignment_mode": c.assignment_mode.value,
            "cipher": c.cipher.value,
            "random_padding": c.random_padding,
            "weak_keys": c.weak_keys,
            "preset": c.preset,
            "cell_id": c.cell_id,
            "bcch_arfcn": c.bcch_arfcn,
            "traffic_slot": c.traffic_slot,
            "decoy_load": c.decoy_load,
        },
        "messages": [
            {"frame": m.frame, "slot": m.slot, "direction": m.direction,
             "kind": m.kind.name.lower(), "info": m.info.hex(), "padding": m.padding.hex(),
             "enciphered": m.enciphered}
            for m in t.messages
        ],
    }


def attach_truth(capture: CaptureLog, data: dict) -> CaptureLog:
    try:
        if data.get("schema") != TRUTH_SCHEMA:
            raise CaptureFormatError("unknown truth schema")
        cell = CellConfig(**{**data["cell"], "arfcn_allocation": tuple(data["cell"]["arfcn_allocation"])})
        messages = tuple(
            TruthMessage(m["frame"], m["slot"], m["direction"], MessageKind[m["kind"].upper()],
                         bytes.fromhex(m["info"]), bytes.fromhex(m["padding"]), m["enciphered"])
            for m in data["messages"]
        )
        truth = Truth(SessionKey(int(data["kc"], 16), data["weak"]), bytes.fromhex(data["ki"]),
                      bytes.fromhex(data["rand"]), data["traffic_start"], messages)
        flips = int(data["bit_flips"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CaptureFormatError):
            raise
        raise CaptureFormatError(f"malformed truth sidecar: {exc}") from None
    return CaptureLog(capture.meta, capture.bursts, cell, truth, flips)


def truth_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".truth")


def write_capture(capture: CaptureLog, path: str | Path, with_truth: bool = True) -> Path:
    path = Path(path)
    path.write_text(capture_text(capture), encoding="ascii", newline="\n")
    if with_truth and capture.truth is not None:
        truth_path(path).write_text(json.dumps(truth_dict(capture), indent=1) + "\n")
    return path


def read_capture(path: str | Path, with_truth: bool = False) -> CaptureLog:
    """Parse a log; the sidecar is only read when ``with_truth`` is asked for."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("ascii")
    except UnicodeDecodeError:
        raise CaptureFormatError("capture log is not ASCII text") from None
    capture = parse_capture(text)
    if with_truth:
        try:
            data = json.loads(truth_path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CaptureFormatError(f"truth sidecar is not JSON: {exc}") from None
        capture = attach_truth(capture, data)
    return capture
