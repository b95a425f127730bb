"""Certified intervals when y only matches approximately.

If |y_i - y_j| <= D and u is L-Lipschitz, beta and u are pinned down to
intervals whose radius scales with L*D. Two readings of the beta
denominator are available; only the "alternative" one centres the interval
on the truth, so that is what we use for the certificate here.
"""
from dataclasses import replace

import numpy as np

from uniqode.errors import UnboundedCertificateError
from uniqode.identifiability import bound_t3, find_matched_pairs
from uniqode.odes import Case, builtin_system, rk4_integrate

# this run starts small, so N climbs, stalls while the dose is high, then
# climbs again: values around N = 0.25 are visited twice at different C.
# The growth shape N(1-N) is treated as known, with beta unknown.
system = builtin_system(Case.CHEMO_UNKNOWN_GROWTH)
term = replace(system.terms[0], g=lambda y: y[:, 0] * (1 - y[:, 0]), g_true=None, beta_true=1.0)
data = rk4_integrate(system, dt=1e-3)
L = 1.0  # u*(N) = N

print("   D      pairs   beta centre     radius   contains 1.0")
for D in [1e-3, 1e-4, 1e-5, 1e-6]:
    pairs = [p for p in find_matched_pairs(data, term.H1, term.C, d_tol=D) if abs(p.c_gap) > 0.05]
    if not pairs:
        print(f"{D:7.0e}  no informative pairs")
        continue
    rep = bound_t3(pairs, data, term, L, d_used=D, variant="alternative")
    inside = abs(rep.beta_center - 1.0) <= rep.beta_radius
    print(f"{D:7.0e}  {len(pairs):5d}   {rep.beta_center:11.6f}  {rep.beta_radius:9.2e}   {inside}")

# the printed denominator g_i*dC - dC gives a different centre
pairs = [p for p in find_matched_pairs(data, term.H1, term.C, d_tol=1e-4) if abs(p.c_gap) > 0.05]
try:
    rep = bound_t3(pairs, data, term, L, d_used=1e-4, variant="verbatim")
    print(f"verbatim reading: centre {rep.beta_center:.4f}, radius {rep.beta_radius:.2e}")
except UnboundedCertificateError as exc:
    print("verbatim reading:", exc)
