"""Nested random walks: build levels 0..6, check that every finer level
sampled at its even-crossing times is the coarser level doubled, then
recover the coarse levels from the finest one by first passages.
"""
import numpy as np

from twistshrink.walker import build_twisted_hierarchy, shrink, skorohod_embed

SEED, TOP, HORIZON = 3, 6, 4.0

hier = build_twisted_hierarchy(SEED, TOP, HORIZON)
for lo, hi in zip(hier[:-1], hier[1:]):
    k = min(lo.positions.size, hi.stopping_times.size)
    same = np.array_equal(hi.positions[hi.stopping_times[:k]], 2 * lo.positions[:k])
    print(f"level {hi.level}: {len(hi):6d} steps, {k:5d} stopping times, doubled level {lo.level}: {same}")

# the finest level carries all coarser ones
ref = shrink(hier[TOP])
for m in range(1, TOP):
    emb = skorohod_embed(ref, m, horizon=1.0)
    match = np.array_equal(emb.positions, hier[m].positions[: emb.n_steps + 1])
    print(f"first passages at distance 2^-{m}: {emb.n_steps} steps, equal to twisted level {m}: {match}")

# B_m(1) settles as m grows
print("B_m(1):", [float(shrink(tw)(1.0)) for tw in hier])
