#!/usr/bin/env python3
# One hopping call from the air to plaintext, using only what a listener records.

# %%
from collections import Counter

from gtl.attack import crack_session, dehop_decrypt, derive_samples, extract_known_plaintext
from gtl.gsm import CellConfig, run_session
from gtl.tmto import build_table_set, toy_params

session = run_session(CellConfig(decoy_load=0.2), seed=3)
capture = session.attacker_view()  # no key, no plaintext
print(len(capture.bursts), "bursts on channels", sorted({b.arfcn for b in capture.bursts}))

# %%
guesses = extract_known_plaintext(capture)
for g in guesses:
    print(f"frame {g.frame} {g.direction} slot {g.slot}: {g.known_bits:3d} bits from {g.source}")
samples = derive_samples(capture, guesses)
print(len(samples), "keystream samples", dict(Counter(s.source for s in samples)))

# %%
tables = build_table_set(toy_params(), tables=4, chain_count=1 << 16, seed=7)
key, report = crack_session(samples, tables, capture)
print(report.outcome.value, "after", report.samples_tried, "samples")
print("key", key.hex(capture.params) if key else None,
      "truth", session.truth.kc.hex(capture.params))

# %%
if key is not None:
    transcript = dehop_decrypt(capture, key)
    print("hop parameters:", transcript.hop_parameters)
    for m in transcript.messages[:8]:
        print(m.frame, m.slot, m.direction, m.kind, m.info[:24])
    print("matches ground truth:", transcript.matches(session.truth.messages))
