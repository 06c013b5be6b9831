"""Anatomy of an affine maximizer auction.

The mechanism is a finite menu of (possibly fractional) allocation matrices,
one positive weight per bidder, and one boost per menu entry. Bids only enter
through the affine welfare `sum_i w_i * b_i(A) + boost(A)`; whoever submits
them, the menu itself is fixed, which is what makes the format truthful.
"""

import numpy as np

from amanet import AllocationMenu, AmaParameters, run_auction, winner_determination
from amanet.ama import deterministic_menu

# Three menu entries for a 2-bidder, 1-item auction.
menu = AllocationMenu(np.array([
    [[1.0], [0.0]],  # item to bidder 1
    [[0.0], [1.0]],  # item to bidder 2
    [[0.0], [0.0]],  # keep the item
]))

print("== plain second-price behavior ==")
params = AmaParameters(menu, weights=np.ones(2), boosts=np.zeros(3))
out = run_auction(np.array([[0.8], [0.5]]), params)
print(f"bids (0.8, 0.5): winner entry {out.winner_index}, "
      f"payments {out.payments}")  # bidder 1 wins, pays the second bid

print("\n== a boost on the empty allocation is a reserve price ==")
boosted = AmaParameters(menu, weights=np.ones(2), boosts=np.array([0.0, 0.0, 0.6]))
for bids in ([[0.5], [0.3]], [[0.9], [0.3]]):
    idx = winner_determination(np.array(bids), boosted)
    label = "no sale" if idx == 2 else f"sell to bidder {idx + 1}"
    print(f"bids {tuple(b[0] for b in bids)} -> {label}")
out = run_auction(np.array([[0.9], [0.3]]), boosted)
print(f"winning bidder pays {out.payments[0]:.2f} "
      "(the boost, converted through her weight, not the rival bid)")

print("\n== bidder weights tilt the allocation ==")
tilted = AmaParameters(menu, weights=np.array([0.4, 1.0]), boosts=np.zeros(3))
out = run_auction(np.array([[0.8], [0.5]]), tilted)
print(f"same bids, weights (0.4, 1.0): winner entry {out.winner_index}, "
      f"payments {np.round(out.payments, 4)}")

print("\n== the full deterministic menu reproduces textbook VCG ==")
menu22 = deterministic_menu(2, 2)
params22 = AmaParameters(menu22, np.ones(2), np.zeros(menu22.size))
bids = np.array([[0.9, 0.2], [0.4, 0.7]])
out = run_auction(bids, params22)
print(f"menu has {menu22.size} entries; allocation:\n{out.allocation}")
print(f"payments {out.payments} (per-item second prices: 0.4 and 0.2)")

print("\n== truthfulness, empirically ==")
values = np.array([[0.8], [0.5]])
truthful = run_auction(values, params).utilities[0]
print(f"bidder 1 value 0.8, truthful utility {truthful:.3f}")
for misreport in (0.2, 0.5, 0.65, 1.0, 2.0):
    bids = values.copy()
    bids[0, 0] = misreport
    out = run_auction(bids, params)
    utility = out.allocation[0, 0] * values[0, 0] - out.payments[0]
    print(f"  misreport {misreport:4.2f} -> utility {utility:+.3f} "
          f"(gain {utility - truthful:+.3f})")
