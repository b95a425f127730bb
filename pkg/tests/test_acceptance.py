"""Acceptance criteria 1-10, each reported as one PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
terminal summary; each test also asserts, so a failing criterion fails the
suite. Criteria 5-8 train networks and take most of the runtime.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, central_diff
from oracles import exact_instance, lipschitz_instance, rel_err
from uniqode.autodiff import Tape, backward, init_mlp, mlp_forward, taped_forward, taped_params
from uniqode.autodiff import tape as T
from uniqode.errors import UnboundedCertificateError
from uniqode.experiments import run_case, sweep_length, sweep_noise, table_rows
from uniqode.identifiability import (
    MatchedPair,
    bound_t3,
    bound_t4,
    counterexample_residual,
    find_matched_pairs,
    recover_t1,
    recover_t2,
)
from uniqode.odes import Case, builtin_system, lotka_volterra_invariant, rk4_integrate
from uniqode.odes import StructuredSystem

pytestmark = pytest.mark.acceptance

N_INSTANCES = 1000


def record(number, ok: bool, detail: str):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_exact_recovery_t1():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(N_INSTANCES):
        inst = exact_instance(np.random.default_rng(seed), known_growth=True)
        pair = find_matched_pairs(inst.data, inst.term.H1, inst.term.C)[0]
        cert = recover_t1(pair, inst.data, inst.term)
        idx = np.array(sorted(cert.recovered_u_values))
        got = np.array([cert.recovered_u_values[k] for k in idx])
        worst = max(worst, float(rel_err(cert.recovered_beta, inst.beta)), float(rel_err(got, inst.u[idx]).max()))
    wall = time.perf_counter() - start
    ok = worst < 1e-10 and wall < 10.0
    assert record(1, ok, f"max rel err {worst:.2e} over {N_INSTANCES} instances, {wall:.1f} s")


def test_criterion_2_exact_recovery_t2():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(N_INSTANCES):
        inst = exact_instance(np.random.default_rng(seed), known_growth=False, n_pairs=2)
        pairs = find_matched_pairs(inst.data, inst.term.H1, inst.term.C)
        cert = recover_t2(pairs[0], inst.data, inst.term, pairs=pairs)
        for k, v in cert.recovered_u_values.items():
            worst = max(worst, float(rel_err(v, inst.u[k])), float(rel_err(cert.recovered_g_values[k], inst.g[k])))
    wall = time.perf_counter() - start
    ok = worst < 1e-10
    assert record(2, ok, f"max rel err {worst:.2e} over {N_INSTANCES} instances, {wall:.1f} s")


def _t3_inside(inst, L, D, variant):
    rep = bound_t3(MatchedPair(0, 1, 0.0, 1.0), inst.data, inst.term, L, d_used=D, variant=variant)
    ok = abs(rep.beta_center - inst.beta) <= rep.beta_radius * (1 + 1e-9) + 1e-12
    for p, c in rep.u_centers.items():
        ok &= abs(c - inst.u[p]) <= rep.u_radii[p] * (1 + 1e-9) + 1e-12
    return bool(ok), rep


def _t4_inside(inst, L1, L2, D):
    rep = bound_t4(MatchedPair(0, 1, 0.0, 1.0), inst.data, inst.term, L1, L2, d_used=D)
    i = rep.pair.i
    ok = abs(rep.u_centers[i] - inst.u[i]) <= rep.u_radii[i] * (1 + 1e-9) + 1e-12
    ok &= abs(rep.g_centers[i] - inst.g[i]) <= rep.g_radii[i] * (1 + 1e-9) + 1e-12
    return bool(ok), rep


def test_criterion_3_bound_containment():
    start = time.perf_counter()
    hits3 = hits4 = verbatim_hits = verbatim_total = 0
    for seed in range(N_INSTANCES):
        rng = np.random.default_rng(seed)
        D = float(rng.uniform(0, 0.2))
        inst, L, _ = lipschitz_instance(rng, D, known_growth=True)
        hits3 += _t3_inside(inst, L, D, "alternative")[0]
        try:
            verbatim_hits += _t3_inside(inst, L, D, "verbatim")[0]
            verbatim_total += 1
        except UnboundedCertificateError:
            pass
        inst, L2, L1 = lipschitz_instance(rng, D, known_growth=False)
        hits4 += _t4_inside(inst, L1, L2, D)[0]

    zero_ok = True
    for seed in range(20):
        rng = np.random.default_rng(10_000 + seed)
        inst, L, _ = lipschitz_instance(rng, 0.0, known_growth=True)
        _, rep = _t3_inside(inst, L, 0.0, "alternative")
        zero_ok &= rep.beta_radius == 0.0 and set(rep.u_radii.values()) == {0.0}
        inst, L2, L1 = lipschitz_instance(rng, 0.0, known_growth=False)
        _, rep4 = _t4_inside(inst, L1, L2, 0.0)
        zero_ok &= set(rep4.u_radii.values()) == {0.0} and set(rep4.g_radii.values()) == {0.0}
    wall = time.perf_counter() - start

    ok = hits3 == N_INSTANCES and hits4 == N_INSTANCES and zero_ok and wall < 30.0
    record(3, ok, f"T3 (alternative denominator) {hits3}/{N_INSTANCES}, T4 {hits4}/{N_INSTANCES}, "
                  f"zero radii at D=0: {zero_ok}, {wall:.1f} s")
    ACCEPTANCE_LINES.append(f"  diagnostic: T3 verbatim denominator contains the truth in "
                            f"{verbatim_hits}/{verbatim_total} bounded instances")
    assert ok


def test_criterion_4_counterexample():
    rng = np.random.default_rng(0)
    xs = np.linspace(0.0, 1.0, 1001)
    worst = max(counterexample_residual(1.0, float(b), lambda x: x, lambda x: x * (1 - x), xs)
                for b in rng.uniform(-10, 10, size=100))
    assert record(4, worst < 1e-12, f"max residual {worst:.2e} over 100 shifts")


def test_criterion_5_case1():
    lines, ok = [], True
    start = time.perf_counter()
    for case in ("case1_u_n", "case1_u_n2"):
        r = run_case(case)
        good = r.percent_errors["beta"] < 1.0 and r.losses["total"] < 1e-4
        ok &= good
        lines.append(f"{case} beta={r.constants['beta']:.7f} ({r.percent_errors['beta']:.3f}%) "
                     f"loss={r.losses['total']:.2e}")
    wall = time.perf_counter() - start
    ok &= wall < 300.0
    assert record(5, ok, "; ".join(lines) + f"; {wall:.0f} s")


def _interior(f, frac=0.1):
    y = np.asarray(f["y"])
    lo, hi = y.min(), y.max()
    keep = (y >= lo + frac * (hi - lo)) & (y <= hi - frac * (hi - lo))
    t, p = np.asarray(f["true"])[keep], np.asarray(f["predicted"])[keep]
    return float(np.max(np.abs(p - t) / np.abs(t)))


def test_criterion_6_case3():
    r = run_case("case3")
    errs = {k: _interior(r.functions[k]) for k in ("beta_x", "delta_y")}
    ok = (r.percent_errors["alpha"] < 1.0 and r.percent_errors["gamma"] < 1.0
          and all(v < 0.05 for v in errs.values()) and r.wall_seconds < 300.0)
    assert record(6, ok, f"alpha={r.constants['alpha']:.5f} gamma={r.constants['gamma']:.5f} "
                         f"beta_x err {100 * errs['beta_x']:.2f}% delta_y err {100 * errs['delta_y']:.2f}% "
                         f"{r.wall_seconds:.0f} s")


def test_case2_agrees_on_paired_range():
    # not a numbered criterion: unknown growth is only pinned down where pairs exist
    r = run_case("case2")
    errs = {k: float(np.max(np.abs(np.asarray(f["predicted"]) - np.asarray(f["true"])) / np.abs(f["true"])))
            for k, f in r.paired_functions.items()}
    ok = bool(errs) and all(v < 0.05 for v in errs.values())
    lo, hi = r.paired_ranges["u"]
    ACCEPTANCE_LINES.append(f"case 2 (supplementary): {'PASS' if ok else 'FAIL'}  paired N in [{lo:.4f}, {hi:.4f}], "
                            + ", ".join(f"{k} err {100 * v:.2f}%" for k, v in errs.items()))
    assert ok


@pytest.fixture(scope="module")
def noise_sweep():
    start = time.perf_counter()
    reports = sweep_noise([0.0, 0.10, 0.30])
    return reports, time.perf_counter() - start


def test_criterion_7_noise_sweep(noise_sweep):
    reports, wall = noise_sweep
    t1 = table_rows("table1", reports)
    t2 = table_rows("table2", reports)
    limits = {0.0: (1.0, 0.999), 10.0: (4.0, 0.999), 30.0: (8.0, 0.99)}
    ok, parts = wall < 1800.0, []
    for row1, row2 in zip(t1, t2):
        a_lim, r2_lim = limits[round(row1[0], 6)]
        ok &= row1[3] <= a_lim and row2[3] >= r2_lim
        parts.append(f"{row1[0]:g}%: alpha err {row1[3]:.3f}% R2 {row2[3]:.6f}")
    assert record(7, ok, "; ".join(parts) + f"; {wall:.0f} s")


def test_noise_degrades_alpha_on_average(noise_sweep):
    reports, _ = noise_sweep
    mean = {lvl: np.mean([r.percent_errors["alpha"] for r in reports if r.config["noise"] == lvl])
            for lvl in (0.0, 0.30)}
    assert mean[0.30] > mean[0.0]


def test_criterion_8_length_sweep():
    start = time.perf_counter()
    reports = sweep_length([1024, 64, 8])
    four = sweep_length([4], [0])[0]
    wall = time.perf_counter() - start
    limits = {1024: 0.3, 64: 0.5, 8: 5.0}
    ok, parts = wall < 1800.0 and np.isfinite(four.percent_errors["beta"]), []
    for row in table_rows("table3", reports):
        ok &= row[2] <= limits[row[0]]
        parts.append(f"{row[0]}: beta err {row[2]:.4f}%")
    parts.append(f"4: beta err {four.percent_errors['beta']:.2f}% (reported only)")
    assert record(8, ok, "; ".join(parts) + f"; {wall:.0f} s")


def test_criterion_9_gradients():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(100):
        sizes = [int(rng.integers(1, 4)), *rng.integers(1, 8, size=int(rng.integers(1, 4))).tolist(),
                 int(rng.integers(1, 3))]
        net = init_mlp(sizes, seed=k)
        x = rng.normal(size=(4, sizes[0]))
        P = taped_params(Tape(), net)
        grads = backward(T.sum(T.square(taped_forward(P, x))))
        params = net.params()
        for i, p in enumerate(params):
            def f(v, i=i):
                ps = list(params)
                ps[i] = v
                return float(np.square(mlp_forward(net.with_params(ps), x)).sum())
            num = central_diff(f, p)
            # relative error, measured against a floor for entries that are ~0
            err = np.abs(grads[P[i]] - num) / np.maximum(np.abs(num), 1e-3)
            worst = max(worst, float(err.max()))
    assert record(9, worst < 1e-5, f"max rel err {worst:.2e} over 100 networks")


def test_criterion_10_rk4():
    def decay_error(dt):
        system = StructuredSystem("decay", 1, [], {0: lambda t, x: -x[:, 0]}, [1.0])
        traj = rk4_integrate(system, t_span=(0.0, 1.0), dt=dt)
        return abs(traj.states[-1, 0] - np.exp(-1.0))

    ratio = decay_error(0.1) / decay_error(0.05)
    v = lotka_volterra_invariant(rk4_integrate(builtin_system(Case.LOTKA_VOLTERRA), dt=1e-3).states)
    drift = float(np.max(np.abs(v - v[0])))
    ok = 14.0 <= ratio <= 18.0 and drift < 1e-6
    assert record(10, ok, f"error ratio {ratio:.3f}, LV drift {drift:.2e}")
