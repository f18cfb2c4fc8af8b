import math
import random
from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtl.a51 import TOY
from gtl.capture import (
    CaptureFormatError,
    capture_text,
    parse_capture,
    parse_payload_hex,
    payload_hex,
    read_capture,
    write_capture,
)
from gtl.gsm import (
    CMC_INFO,
    INFO_MAX,
    PAD_BYTE,
    AssignmentMode,
    Burst,
    CaptureLog,
    CaptureMeta,
    CellConfig,
    Cipher,
    L2Frame,
    MessageKind,
    NoChallengeError,
    SimModel,
    corrupt,
    decipher,
    decode_frame,
    encipher,
    encode_frame,
    hop_arfcn,
    hop_index,
    join_bursts,
    replay_challenge,
    run_session,
    split_bursts,
)
from oracles import TOY_GEOMETRY, bits_to_int, oracle_keystream_bits

# 95% quantile of chi-squared with 7 degrees of freedom
CHI2_7_95 = 14.067


@settings(max_examples=100)
@given(st.integers(1, 64), st.data())
def test_hsn0_is_cyclic(n, data):
    maio = data.draw(st.integers(0, n - 1))
    frame = data.draw(st.integers(0, 2_000_000))
    assert hop_index(n, 0, maio, frame) == (frame + maio) % n


def test_cyclic_example():
    cfg = CellConfig(arfcn_allocation=(10, 20, 30, 40), hsn=0, bcch_arfcn=1)
    assert [hop_arfcn(cfg, f) for f in range(8)] == [10, 20, 30, 40] * 2


@settings(max_examples=100)
@given(st.integers(1, 64), st.integers(0, 63), st.data())
def test_hop_index_in_range(n, hsn, data):
    maio = data.draw(st.integers(0, n - 1))
    assert 0 <= hop_index(n, hsn, maio, data.draw(st.integers(0, 3_000_000))) < n


def test_single_channel_is_constant():
    cfg = CellConfig(arfcn_allocation=(7,), hsn=21)
    assert {hop_arfcn(cfg, f) for f in range(500)} == {7}


def test_hsn21_uniform_by_chi_squared():
    n, frames = 8, 100_000
    counts = Counter(hop_index(n, 21, 0, f) for f in range(frames))
    expected = frames / n
    chi2 = sum((counts[i] - expected) ** 2 / expected for i in range(n))
    assert chi2 < CHI2_7_95


def test_hopping_disabled_uses_one_channel():
    cfg = CellConfig(hopping_enabled=False, maio=3)
    assert {hop_arfcn(cfg, f) for f in range(200)} == {cfg.arfcn_allocation[3]}


def test_cell_validation():
    for bad in (dict(arfcn_allocation=()), dict(arfcn_allocation=(5, 5)),
                dict(maio=8), dict(hsn=64), dict(arfcn_allocation=tuple(range(2, 70))),
                dict(bcch_arfcn=12), dict(decoy_load=2.0)):
        with pytest.raises(ValueError):
            CellConfig(**bad)


def test_slot_timing():
    b0, b1 = Burst(10, 1, 3, "D", 0), Burst(10, 1, 4, "D", 0)
    assert b1.start_time - b0.start_time == pytest.approx(576.9)
    assert Burst(1, 1, 0, "D", 0).start_time == pytest.approx(8 * 576.9)


# --- framing ---------------------------------------------------------------

@settings(max_examples=100)
@given(st.sampled_from(list(MessageKind)), st.binary(max_size=INFO_MAX), st.booleans(),
       st.integers(0, 2**32))
def test_encode_decode_roundtrip(kind, info, rnd, seed):
    l2 = L2Frame(kind, info)
    coded = encode_frame(l2, rnd, random.Random(seed))
    out = decode_frame(coded)
    assert out.kind == kind and out.info == info
    assert len(out.info) + len(out.padding) == INFO_MAX
    assert coded < 1 << 456


def test_empty_info_pads_with_2b():
    out = decode_frame(encode_frame(L2Frame(MessageKind.CIPHER_MODE_COMPLETE)))
    assert out.padding == bytes([PAD_BYTE]) * 21


def test_oversize_info_rejected():
    with pytest.raises(ValueError):
        L2Frame(MessageKind.TRAFFIC, bytes(22))


def test_random_padding_density():
    rng = random.Random(3)
    frames = [encode_frame(L2Frame(MessageKind.SYSTEM_INFO, b"ab"), True, rng) for _ in range(3000)]
    pads = b"".join(decode_frame(c).padding for c in frames)
    n, hits = len(pads), pads.count(PAD_BYTE)
    p = 1 / 256
    assert abs(hits - n * p) < 4 * math.sqrt(n * p * (1 - p))


def test_single_bit_error_breaks_decoding():
    coded = encode_frame(L2Frame(MessageKind.TRAFFIC, b"hello"))
    for i in (0, 100, 227, 228, 455):
        assert decode_frame(coded ^ (1 << i)) is None


def test_cipher_mode_complete_guessable_bits():
    # header, info, padding, CRC and fill are all predictable: the whole frame
    from gtl.attack import frame_guesses
    gs = frame_guesses(MessageKind.CIPHER_MODE_COMPLETE, CMC_INFO, 0, 0, "U",
                       "protocol_script", True)
    assert sum(g.known_bits for g in gs) >= 144
    padding_bits = sum(g.known_bits for g in gs if g.source == "padding")
    assert padding_bits >= 144


# --- ciphering -------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, (1 << 24) - 1), st.integers(0, 1 << 20), st.sampled_from("UD"),
       st.sampled_from(list(Cipher)))
def test_encipher_is_involution(kc, frame_base, direction, cipher):
    coded = encode_frame(L2Frame(MessageKind.TRAFFIC, b"xyz"))
    payloads = encipher(coded, kc, frame_base, direction, cipher, TOY)
    assert decipher(payloads, kc, frame_base, direction, cipher, TOY) == coded


def test_keys_give_different_ciphertexts():
    coded = encode_frame(L2Frame(MessageKind.TRAFFIC, b"xyz"))
    assert encipher(coded, 0, 40, "D") != encipher(coded, 1, 40, "D")


def test_ciphertext_xor_plaintext_is_oracle_keystream():
    coded = encode_frame(L2Frame(MessageKind.TRAFFIC, b"known"))
    kc, base = 0x5A5A5A, 1000
    for direction, half in (("D", 0), ("U", 1)):
        payloads = encipher(coded, kc, base, direction)
        for i, (p, c) in enumerate(zip(payloads, split_bursts(coded))):
            bits = oracle_keystream_bits(TOY_GEOMETRY, kc, (base + i) % 256)
            assert p ^ c == bits_to_int(bits[114 * half:114 * (half + 1)])


# --- sessions --------------------------------------------------------------

def test_session_is_deterministic():
    a, b = run_session(CellConfig(), 9), run_session(CellConfig(), 9)
    assert a == b and capture_text(a) == capture_text(b)
    assert run_session(CellConfig(), 10) != a


def test_session_script_order_and_encryption():
    cap = run_session(CellConfig(), 4)
    kinds = [(m.kind, m.enciphered, m.direction) for m in cap.truth.messages[:5]]
    assert kinds == [
        (MessageKind.SYSTEM_INFO, False, "D"),
        (MessageKind.AUTH_REQUEST, False, "D"),
        (MessageKind.CIPHER_MODE_COMMAND, False, "D"),
        (MessageKind.CIPHER_MODE_COMPLETE, True, "U"),
        (MessageKind.ASSIGNMENT, True, "D"),
    ]
    imm = run_session(CellConfig(assignment_mode=AssignmentMode.IMMEDIATE), 4)
    assignment = [m for m in imm.truth.messages if m.kind is MessageKind.ASSIGNMENT][0]
    command = [m for m in imm.truth.messages if m.kind is MessageKind.CIPHER_MODE_COMMAND][0]
    assert not assignment.enciphered and assignment.frame < command.frame


def test_session_bursts_sorted_and_unique():
    cap = run_session(CellConfig(decoy_load=0.5), 2)
    keys = [(b.frame, b.slot, b.direction, b.arfcn) for b in cap.bursts]
    assert len(set(keys)) == len(keys)
    times = [b.start_tenths() for b in cap.bursts]
    assert times == sorted(times)
    assert all(0 <= b.payload < 1 << 114 for b in cap.bursts)


def test_clear_session_payloads_are_plaintext():
    cap = run_session(CellConfig(cipher=Cipher.NONE), 5)
    by_pos = {(b.frame, b.slot, b.direction): b.payload for b in cap.bursts}
    for m in cap.truth.messages:
        coded = encode_frame(L2Frame(m.kind, m.info, m.padding))
        got = join_bursts([by_pos[(m.frame + i, m.slot, m.direction)] for i in range(4)])
        assert got == coded


def test_hopping_off_single_traffic_channel():
    cap = run_session(CellConfig(hopping_enabled=False), 5)
    assert len({b.arfcn for b in cap.bursts if b.slot != 0}) == 1
    hopping = run_session(CellConfig(), 5)
    assert len({b.arfcn for b in hopping.bursts if b.slot != 0}) > 1


def test_weak_keys_have_ten_zero_bits():
    for seed in range(30):
        kc = run_session(CellConfig(weak_keys=True), seed, traffic_blocks=0).truth.kc
        assert kc.kc & 0x3FF == 0 and kc.weak


def test_attacker_view_hides_truth():
    view = run_session(CellConfig(), 1).attacker_view()
    assert view.truth is None and view.cell is None


# --- corruption ------------------------------------------------------------

def _big_capture(n=1000):
    bursts = tuple(Burst(f, 1, 0, "D", 0) for f in range(n))
    return CaptureLog(CaptureMeta(1, "TOY", 0), bursts)


def test_corrupt_edge_rates():
    cap = run_session(CellConfig(), 1)
    assert corrupt(cap, 0.0, 3) == cap
    flipped = corrupt(cap, 1.0, 3)
    assert all(a.payload ^ b.payload == (1 << 114) - 1 for a, b in zip(cap.bursts, flipped.bursts))
    assert flipped.truth == cap.truth
    with pytest.raises(ValueError):
        corrupt(cap, 1.5, 0)


def test_corrupt_flip_count_binomial():
    cap = _big_capture(1000)  # 114,000 bits
    out = corrupt(cap, 1e-3, 7)
    n, p = 114_000, 1e-3
    flips = sum(bin(b.payload).count("1") for b in out.bursts)
    assert flips == out.bit_flips
    assert abs(flips - n * p) <= 3 * math.sqrt(n * p * (1 - p))


# --- replay ----------------------------------------------------------------

def test_replay_reproduces_key():
    for cipher in (Cipher.A51, Cipher.STRONG):
        cap = run_session(CellConfig(cipher=cipher), 12)
        w = replay_challenge(cap.attacker_view(), cap.sim_model())
        assert w.derived == cap.truth.kc
        assert w.rand == cap.truth.rand


def test_different_rand_different_key():
    sim = SimModel(b"k" * 16)
    keys = {sim.derive(bytes([i]) * 16).kc for i in range(50)}
    assert len(keys) == 50


def test_fresh_rand_sim_refuses_same_key():
    cap = run_session(CellConfig(cipher=Cipher.STRONG), 12)
    w = replay_challenge(cap.attacker_view(), cap.sim_model(fresh_rand=True))
    assert w.derived != cap.truth.kc


def test_no_challenge():
    with pytest.raises(NoChallengeError):
        replay_challenge(_big_capture(8), SimModel(b"k" * 16))


# --- capture files ---------------------------------------------------------

@settings(max_examples=100)
@given(st.integers(0, (1 << 114) - 1))
def test_payload_hex_roundtrip(p):
    h = payload_hex(p)
    assert len(h) == 29 and int(h, 16) & 3 == 0
    assert parse_payload_hex(h) == p


def test_payload_hex_bit_order():
    assert payload_hex(1) == "8" + "0" * 28
    assert payload_hex(1 << 113) == "0" * 28 + "4"


def test_capture_roundtrip_byte_exact(tmp_path):
    cap = corrupt(run_session(CellConfig(decoy_load=0.2), 3), 1e-3, 1)
    path = write_capture(cap, tmp_path / "s.cap")
    text = path.read_text()
    attacker = read_capture(path)
    assert attacker.truth is None and attacker.bursts == cap.bursts
    assert read_capture(path, with_truth=True) == cap
    assert capture_text(attacker) == text


def test_capture_without_truth(tmp_path):
    cap = run_session(CellConfig(), 3)
    path = write_capture(cap, tmp_path / "s.cap", with_truth=False)
    assert not (tmp_path / "s.truth").exists()
    with pytest.raises(FileNotFoundError):
        read_capture(path, with_truth=True)


def test_every_capture_header_byte_corruption_detected():
    text = capture_text(run_session(CellConfig(), 3))
    end = text.index("\n")
    for i in range(end):
        for ch in ("x", "0", " "):
            if text[i] == ch:
                continue
            bad = text[:i] + ch + text[i + 1:]
            with pytest.raises(CaptureFormatError):
                parse_capture(bad)


def test_capture_body_errors():
    text = capture_text(run_session(CellConfig(), 3))
    lines = text.splitlines(keepends=True)
    with pytest.raises(CaptureFormatError):
        parse_capture("".join(lines[:-1]))
    with pytest.raises(CaptureFormatError):
        parse_capture(lines[0] + lines[2] + lines[1] + "".join(lines[3:]))
    with pytest.raises(CaptureFormatError):
        parse_capture("")
