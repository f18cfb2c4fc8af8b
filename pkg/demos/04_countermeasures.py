#!/usr/bin/env python3
# What random padding, a stronger cipher and weak keys change for the listener.

# %%
from gtl.attack import crack_session, derive_samples, downgrade_replay_demo, extract_known_plaintext
from gtl.gsm import CellConfig, Cipher, run_session
from gtl.tmto import build_table_set, toy_params

# sparse tables make the number of samples matter
sparse = build_table_set(toy_params(), tables=1, chain_count=48, seed=99)

for random_padding in (False, True):
    wins = total = 0
    for seed in range(40):
        view = run_session(CellConfig(random_padding=random_padding), seed).attacker_view()
        samples = derive_samples(view, extract_known_plaintext(view))
        total += len(samples)
        wins += crack_session(samples, sparse, view)[0] is not None
    print(f"random padding {random_padding!s:5}: {total / 40:.0f} samples/session, "
          f"cracked {wins}/40")

# %%
# a strong cipher with a reused key: replay the challenge, get the same key back
session = run_session(CellConfig(cipher=Cipher.STRONG), seed=5)
report = downgrade_replay_demo(session.attacker_view(), session.sim_model())
truth = session.truth.kc
print("replayed key equals the call's key:", report.witness.derived == truth,
      "| transcript recovered:", report.recovered)
hardened = downgrade_replay_demo(session.attacker_view(), session.sim_model(fresh_rand=True))
print("fresh-RAND SIM: key equal:", hardened.witness.derived == truth,
      "| recovered:", hardened.recovered)

# %%
weak = [run_session(CellConfig(weak_keys=True), s, traffic_blocks=0).truth.kc for s in range(5)]
print("weak keys:", [format(k.kc, "024b") for k in weak])
