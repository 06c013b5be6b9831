"""One model, many auction sizes.

No parameter of the menu network depends on the number of bidders or items,
so a model trained at one size runs unchanged at another. Here a network
trained on the five-bidder correlated-items setting is evaluated from three
to seven bidders and compared with per-item Myerson at each size.

Takes a few minutes (it trains a small model first). --fast trains less.
"""

import dataclasses
import sys
import time

from amanet import SettingSpec, estimate_revenue
from amanet.evaluation import (ItemMyersonMechanism, MenuNetMechanism, audit,
                               out_of_setting_eval)
from amanet.training import desk_preset, fit, model_from_checkpoint

train_spec = SettingSpec("B", 5, 2)
config, model_config = desk_preset(train_spec, seed=0)
if "--fast" in sys.argv:
    config = dataclasses.replace(config, iterations=40)

print(f"training on {train_spec.n}x{train_spec.m}({train_spec.tag}) "
      f"for {config.iterations} iterations...")
start = time.time()
checkpoint = fit(train_spec, config, model_config=model_config)
print(f"done in {time.time() - start:.0f}s "
      f"(in-setting revenue estimate {checkpoint.revenue_estimate:.4f})\n")

sizes = [(3, 2), (4, 2), (5, 2), (6, 2), (7, 2)]
reports = out_of_setting_eval(checkpoint, sizes, samples=20000, seed=9)

print("bidders  trained-model   item-myerson   audit(max gain)")
rows = []
for (n, m), report in zip(sizes, reports):
    spec = SettingSpec("B", n, m)
    myerson, _ = estimate_revenue(ItemMyersonMechanism(spec), spec, 20000, seed=9)
    mech = MenuNetMechanism(model_from_checkpoint(checkpoint))
    gain = audit(mech, spec, instances=100, misreports_per_bidder=20,
                 seed=2).max_gain
    rows.append((f"{n}x{m}", report.mean_revenue, myerson))
    print(f"  {n}x{m}    {report.mean_revenue:.4f}         {myerson:.4f}"
          f"         {gain:+.1e}")
print("\n(the audits stay at zero away from the training size: truthfulness"
      "\n is structural, not learned)")

try:
    from amanet.plots import plot_revenue_by_size
    plot_revenue_by_size(
        [("trained on 5x2", sizes, [r[1] for r in rows]),
         ("item-myerson", sizes, [r[2] for r in rows])],
        "/tmp/demo_oos.svg", x_label="bidders x items")
    print("plot -> /tmp/demo_oos.svg")
except Exception as exc:  # matplotlib is optional at demo time
    print(f"(skipping plot: {exc})")
