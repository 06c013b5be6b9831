"""Classical truthful baselines on the benchmark settings.

VCG (per-item second price) and the per-item Myerson auction with known
priors. The printed numbers line up with the standard references: uniform
items give VCG = m * E[second highest], and Myerson's reserve lifts revenue
above VCG everywhere it binds.
"""

import time

from amanet import SettingSpec, estimate_revenue
from amanet.baselines import (exponential_distribution, myerson_optimal_revenue,
                              uniform_distribution, OPTIMAL_REVENUE)
from amanet.evaluation import ItemMyersonMechanism, VcgMechanism

SAMPLES = 100_000

print("== revenue on the independent-uniform settings ==")
for n, m in ((2, 5), (5, 5), (3, 10)):
    spec = SettingSpec("C", n, m)
    t = time.perf_counter()
    vcg, se_v = estimate_revenue(VcgMechanism(), spec, SAMPLES, seed=7)
    myerson, se_m = estimate_revenue(ItemMyersonMechanism(spec), spec, SAMPLES,
                                     seed=7)
    print(f"{n}x{m}(C): VCG {vcg:.4f} (+-{se_v:.4f})  "
          f"Item-Myerson {myerson:.4f} (+-{se_m:.4f})  "
          f"[{time.perf_counter() - t:.1f}s]")

print("\n== exponential bidders: Myerson is optimal ==")
spec = SettingSpec("D", 3, 1)
vcg, _ = estimate_revenue(VcgMechanism(), spec, SAMPLES, seed=7)
myerson, _ = estimate_revenue(ItemMyersonMechanism(spec), spec, SAMPLES, seed=7)
optimal = myerson_optimal_revenue(exponential_distribution(3.0), 3, SAMPLES)
print(f"3x1(D): VCG {vcg:.4f}  Item-Myerson {myerson:.4f}  "
      f"optimal single-item {optimal:.4f}")
print(f"reserve price for Exp(mean 3): {exponential_distribution(3.0).reserve}")

print("\n== virtual values in one line ==")
u = uniform_distribution(0, 1)
print(f"U[0,1]: phi(0.7) = {u.virtual(0.7):.2f}, reserve = {u.reserve}")
print(f"two uniform bidders, optimal revenue "
      f"{myerson_optimal_revenue(u, 2, SAMPLES):.4f} (analytic 5/12 = 0.4167)")

print("\n== single-bidder two-item settings ==")
for tag in ("E", "F"):
    spec = SettingSpec(tag, 1, 2)
    vcg, _ = estimate_revenue(VcgMechanism(), spec, SAMPLES, seed=7)
    myerson, _ = estimate_revenue(ItemMyersonMechanism(spec), spec, SAMPLES,
                                  seed=7)
    reference = OPTIMAL_REVENUE[(tag, 1, 2)]
    print(f"1x2({tag}): VCG {vcg:.4f} (single bidder pays nothing)  "
          f"Item-Myerson {myerson:.4f}  known optimal {reference} "
          f"(ratio {myerson / reference:.3f})")
