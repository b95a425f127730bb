"""UPINN on noisy Lotka-Volterra data: no derivatives are given.

A trajectory network fits (x, y)(t); its time derivative feeds the ODE
residual, in which alpha, gamma and the interaction terms beta*x and
delta*y are unknown. Short run by default; pass an epoch count to go longer.
"""
import sys

from uniqode.experiments import run_case

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
for noise in (0.0, 0.10):
    r = run_case("case4", {"epochs": epochs, "noise": noise, "collocation_count": 256})
    print(f"noise {100 * noise:4.0f}%: alpha {r.constants['alpha']:.4f} ({r.percent_errors['alpha']:.2f}%), "
          f"gamma {r.constants['gamma']:.4f} ({r.percent_errors['gamma']:.2f}%), "
          f"R2 {r.r2:.5f}, data loss {r.losses['data']:.2e}, ode loss {r.losses['ode']:.2e}")
