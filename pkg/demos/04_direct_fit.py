"""Direct fitting: learn beta and a network for u from exact derivatives.

Case 1 of the experiments with a reduced epoch budget so the demo runs in
well under a minute; pass a larger number on the command line to get the
full-accuracy result (the default case uses 80000 epochs).
"""
import sys

import numpy as np

from uniqode.experiments import run_case

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
report = run_case("case1_u_n", {"epochs": epochs})
print(f"epochs {report.epochs_run}, wall {report.wall_seconds:.1f} s")
print(f"beta = {report.constants['beta']:.5f}  ({report.percent_errors['beta']:.2f}% error)")
print(f"final residual loss {report.losses['total']:.2e}")

f = report.functions["u"]
y, t, p = (np.asarray(f[k]) for k in ("y", "true", "predicted"))
print("   N      u*(N)   u_net(N)")
for k in range(0, len(y), 25):
    print(f"{y[k]:6.3f}  {t[k]:7.4f}  {p[k]:8.4f}")
