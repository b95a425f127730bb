"""Why a structured ODE can have many solutions for (beta, u).

Logistic growth with a drug term,  dN/dt = beta * N(1-N) - N * u(N),
fits the same trajectory for *any* beta if u is shifted to absorb the
difference. With beta* = 1 and u*(N) = N, the pair beta = 2, u(N) = N**2
produces exactly the same right-hand side.
"""
import numpy as np

from uniqode.identifiability import counterexample_residual, counterexample_shift


def g(n):
    return n * (1 - n)


def u_true(n):
    return n


n = np.linspace(0.0, 1.0, 11)
u_alt = counterexample_shift(1.0, 2.0, u_true, g)
print("N        u*(N)    u_bar(N)  N**2")
for a, b, c in zip(n, u_true(n), u_alt(n)):
    print(f"{a:5.2f}  {b:8.4f}  {c:8.4f}  {a * a:8.4f}")

# the shifted system has zero residual against the original for every beta_bar
for beta_bar in [-3.0, 0.5, 2.0, 7.5]:
    r = counterexample_residual(1.0, beta_bar, u_true, g, np.linspace(0, 1, 1001))
    print(f"beta_bar = {beta_bar:5.2f}   max residual {r:.1e}")

print("Data on a single trajectory cannot tell these apart; the matched-pair")
print("demos show what extra structure in the data removes the ambiguity.")
