#!/usr/bin/env python3
# A5/1 by hand: load a key, read keystream, then walk the registers backwards.

# %%
from gtl.a51 import FULL, TOY, advance, clock_backward, key_setup, keystream, recover_key

key = int.from_bytes(bytes.fromhex("1223456789abcdef"), "little")
frame = 0x134
state = key_setup(FULL, key, frame)
ks = keystream(FULL, state, 228)
print("registers after setup:", hex(state.r1), hex(state.r2), hex(state.r3))
print("first 32 keystream bits:", format(ks & 0xFFFFFFFF, "032b")[::-1])

# %%
# majority clocking is not a permutation: a state has 0..4 predecessors
for n in range(5):
    s = advance(FULL, state, n)
    print(n, "steps in, predecessors:", len(clock_backward(FULL, s)))

# %%
# from a state 40 bits into the stream back to the session key; the mixing
# clocks merge states, so several keys can land on the same one
later = advance(FULL, state, 40)
found = recover_key(FULL, later, frame, offset=40)
print(len(found), "keys reach this state; true key among them:",
      any(k.kc == key for k in found))

# %%
# only the true key also explains another frame
other = keystream(FULL, key_setup(FULL, key, frame + 1), 114)
survivors = [k for k in found if keystream(FULL, key_setup(FULL, k, frame + 1), 114) == other]
print("after checking frame", frame + 1, ":", [k.hex(FULL) for k in survivors])

# %%
# the toy geometry behaves the same at a size we can enumerate
toy_state = key_setup(TOY, 0xABCDEF, 17)
print("toy keystream:", format(keystream(TOY, toy_state, 24), "06x"))
toy_keys = recover_key(TOY, advance(TOY, toy_state, 100), 17, 100)
print("toy candidates:", len(toy_keys), "true key among them:", any(k.kc == 0xABCDEF for k in toy_keys))
