"""Matched pairs, exact recovery, error radii and the non-uniqueness shift.

Two samples form a matched pair when their reduced coordinates
``y = H1(x)`` coincide (to within a tolerance) while the known scaling
``C(x)`` differs. Subtracting the structured component at the two samples
eliminates the growth term and leaves ``u(y)`` alone, which is what makes
the unknown constant and function separable.

All indices are 0-based dataset rows.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from uniqode.errors import (
    DataError,
    DegeneratePairError,
    GZeroError,
    IdentifiabilityError,
    UnboundedCertificateError,
    UsageError,
)
from uniqode.odes import StructuredTerm, Trajectory

EXACT_Y_TOL = 1e-12
THRESHOLD = 1e-9
VARIANTS = ("verbatim", "alternative")


@dataclass(frozen=True)
class MatchedPair:
    i: int
    j: int
    y_distance: float
    c_gap: float
    g_at_yi: float | None = None

    def __post_init__(self):
        if self.i == self.j:
            raise UsageError("a matched pair needs two distinct indices")
        if self.y_distance < 0:
            raise UsageError("y_distance must be non-negative")

    def swapped(self) -> "MatchedPair":
        return MatchedPair(self.j, self.i, self.y_distance, -self.c_gap, None)


@dataclass
class Certificate:
    theorem: str
    pair: MatchedPair
    conditions_met: dict[str, bool]
    recovered_beta: float | None = None
    recovered_u_values: dict[int, float] = field(default_factory=dict)
    recovered_g_values: dict[int, float] = field(default_factory=dict)
    thresholds: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.conditions_met.values())

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "pair": asdict(self.pair),
            "conditions_met": dict(self.conditions_met),
            "recovered_beta": self.recovered_beta,
            "recovered_u_values": {str(k): v for k, v in self.recovered_u_values.items()},
            "recovered_g_values": {str(k): v for k, v in self.recovered_g_values.items()},
            "thresholds": dict(self.thresholds),
        }


@dataclass
class BoundReport:
    theorem: str
    pair: MatchedPair
    d_used: float
    lipschitz_u: float
    lipschitz_g: float | None = None
    variant: str | None = None
    beta_center: float | None = None
    beta_radius: float | None = None
    u_centers: dict[int, float] = field(default_factory=dict)
    u_radii: dict[int, float] = field(default_factory=dict)
    g_centers: dict[int, float] = field(default_factory=dict)
    g_radii: dict[int, float] = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("u_centers", "u_radii", "g_centers", "g_radii"):
            out[key] = {str(k): v for k, v in out[key].items()}
        return out


# ---------------------------------------------------------------- pair search

def _reduced(data: Trajectory, H1) -> np.ndarray:
    y = np.asarray(H1(data.states), dtype=np.float64)
    return y.reshape(len(data), -1)


def _close_pairs(y: np.ndarray, d_tol: float):
    """All (i, j), i < j, with ||y_i - y_j||_inf <= d_tol, via a sort-and-sweep."""
    order = np.argsort(y[:, 0], kind="stable")
    ys = y[order]
    m = len(ys)
    for a in range(m):
        b = a + 1
        while b < m and ys[b, 0] - ys[a, 0] <= d_tol:
            dist = float(np.max(np.abs(ys[b] - ys[a])))
            if dist <= d_tol:
                i, j = sorted((int(order[a]), int(order[b])))
                yield i, j, dist
            b += 1


def find_matched_pairs(data: Trajectory, H1, C, d_tol: float = EXACT_Y_TOL, g=None,
                       limit: int | None = None) -> list[MatchedPair]:
    """Index pairs whose y values agree within ``d_tol`` and whose C values differ.

    Sorted by y distance ascending, then by |C gap| descending.
    """
    if d_tol < 0:
        raise UsageError(f"d_tol must be non-negative, got {d_tol}")
    if len(data) < 2:
        return []
    y = _reduced(data, H1)
    c = np.asarray(C(data.states), dtype=np.float64)
    gy = None if g is None else np.asarray(g(y), dtype=np.float64)
    pairs = []
    for i, j, dist in _close_pairs(y, d_tol):
        gap = float(c[i] - c[j])
        if gap != 0.0:
            pairs.append(MatchedPair(i, j, dist, gap, None if gy is None else float(gy[i])))
    pairs.sort(key=lambda p: (p.y_distance, -abs(p.c_gap), p.i, p.j))
    return pairs[:limit] if limit is not None else pairs


def nearest_pairs(data: Trajectory, H1, C, count: int = 5) -> list[MatchedPair]:
    """Closest pairs in y regardless of the C gap, for diagnostics when no pair qualifies.

    The nearest neighbours of each point in sorted order are the only candidates
    for the global minimum when y is scalar; for k > 1 the first coordinate is
    used to seed a windowed search.
    """
    if len(data) < 2:
        return []
    y = _reduced(data, H1)
    c = np.asarray(C(data.states), dtype=np.float64)
    order = np.argsort(y[:, 0], kind="stable")
    cands = []
    window = 1 if y.shape[1] == 1 else 8
    for a in range(len(order)):
        for b in range(a + 1, min(a + 1 + window, len(order))):
            i, j = sorted((int(order[a]), int(order[b])))
            dist = float(np.max(np.abs(y[i] - y[j])))
            cands.append(MatchedPair(i, j, dist, float(c[i] - c[j])))
    cands.sort(key=lambda p: (p.y_distance, p.i, p.j))
    return cands[:count]


# ---------------------------------------------------------------- exact recovery

def _need_derivatives(data: Trajectory) -> None:
    if not data.has_derivatives:
        raise DataError("exact recovery needs derivative columns in the data")


def _parts(data: Trajectory, term: StructuredTerm):
    x = data.states
    y = _reduced(data, term.H1)
    dq = data.derivatives[:, term.q]
    return x, y, dq, np.asarray(term.C(x), float), np.asarray(term.d(x), float)


def _pair_u(dq, c, d, i, j) -> float:
    return ((dq[i] - dq[j]) + d[j] - d[i]) / (c[i] - c[j])


def recover_t1(pair: MatchedPair, data: Trajectory, term: StructuredTerm, *,
               y_tol: float = EXACT_Y_TOL, threshold: float = THRESHOLD,
               strict: bool = True) -> Certificate:
    """Recover beta exactly from one matched pair, then u at every sample with |C| > threshold.

    With ``strict=False`` a failed hypothesis yields a certificate with the
    failing flag set and no recovered values instead of raising.
    """
    _need_derivatives(data)
    if term.g is None:
        raise UsageError("recover_t1 needs a known growth shape g; use recover_t2")
    x, y, dq, c, d = _parts(data, term)
    g = np.asarray(term.g(y), dtype=np.float64)
    i, j = pair.i, pair.j
    flags = {
        "y_match": bool(float(np.max(np.abs(y[i] - y[j]))) <= y_tol),
        "c_gap_nonzero": bool(abs(c[i] - c[j]) > threshold),
        "g_nonzero": bool(abs(g[i]) > threshold),
    }
    cert = Certificate("T1", pair, flags, thresholds={"y_tol": y_tol, "threshold": threshold})
    if not cert.ok:
        if not strict:
            return cert
        if not flags["y_match"]:
            raise IdentifiabilityError(f"pair ({i}, {j}) does not match in y within {y_tol}")
        if not flags["c_gap_nonzero"]:
            raise DegeneratePairError(f"pair ({i}, {j}) has |C gap| <= {threshold}")
        raise GZeroError(f"|g(y_{i})| <= {threshold}")

    u_bar = _pair_u(dq, c, d, i, j)
    beta = (dq[i] - c[i] * u_bar - d[i]) / g[i]
    cert.recovered_beta = float(beta)
    ok = np.abs(c) > threshold
    u_all = np.full(len(data), np.nan)
    u_all[ok] = (dq[ok] - beta * g[ok] - d[ok]) / c[ok]
    u_all[i] = u_bar
    cert.recovered_u_values = {int(p): float(u_all[p]) for p in np.flatnonzero(np.isfinite(u_all))}
    return cert


def recover_t2(pair: MatchedPair, data: Trajectory, term: StructuredTerm, *,
               pairs: list[MatchedPair] | None = None, y_tol: float = EXACT_Y_TOL,
               threshold: float = THRESHOLD, strict: bool = True) -> Certificate:
    """Recover u and the (unknown) growth term at both ends of a matched pair.

    ``pairs`` extends the recovery to every index that appears in some pair;
    each index uses the first listed pair it belongs to.
    """
    _need_derivatives(data)
    x, y, dq, c, d = _parts(data, term)
    i, j = pair.i, pair.j
    flags = {
        "y_match": bool(float(np.max(np.abs(y[i] - y[j]))) <= y_tol),
        "c_gap_nonzero": bool(abs(c[i] - c[j]) > threshold),
    }
    cert = Certificate("T2", pair, flags, thresholds={"y_tol": y_tol, "threshold": threshold})
    if not cert.ok:
        if not strict:
            return cert
        if not flags["y_match"]:
            raise IdentifiabilityError(f"pair ({i}, {j}) does not match in y within {y_tol}")
        raise DegeneratePairError(f"pair ({i}, {j}) has |C gap| <= {threshold}")

    todo = [pair] + [p for p in (pairs or []) if p != pair]
    for p in todo:
        if abs(c[p.i] - c[p.j]) <= threshold or float(np.max(np.abs(y[p.i] - y[p.j]))) > y_tol:
            continue
        u_val = _pair_u(dq, c, d, p.i, p.j)
        for idx in (p.i, p.j):
            if idx in cert.recovered_u_values:
                continue
            cert.recovered_u_values[idx] = float(u_val)
            cert.recovered_g_values[idx] = float(dq[idx] - c[idx] * u_val - d[idx])
    return cert


# ---------------------------------------------------------------- error radii

def t3_denominator(c_i: float, c_j: float, g_i: float, variant: str = "verbatim") -> float:
    """Denominator of the beta radius.

    ``verbatim`` is g_i*(C_i - C_j) - (C_i - C_j), as the bound is usually
    printed; ``alternative`` drops the trailing term, which is what solving
    the interval construction gives when g(y_i) = g(y_j).
    """
    gap = c_i - c_j
    if variant == "verbatim":
        return g_i * gap - gap
    if variant == "alternative":
        return g_i * gap
    raise UsageError(f"unknown formula variant {variant!r}; expected one of {VARIANTS}")


def t3_beta_radius(c_i, c_j, g_i, L, D, variant: str = "verbatim", threshold: float = THRESHOLD) -> float:
    if L < 0 or D < 0:
        raise UsageError("Lipschitz constant and D must be non-negative")
    if abs(c_i - c_j) <= threshold:
        raise DegeneratePairError("|C gap| below threshold")
    if abs(g_i) <= threshold:
        raise GZeroError("|g(y_i)| below threshold")
    den = t3_denominator(c_i, c_j, g_i, variant)
    if abs(den) <= threshold:
        raise UnboundedCertificateError(
            f"denominator {den:.3g} below threshold ({variant} variant): radius is unbounded")
    return abs(c_i * c_j * L * D / den)


def t4_u_radius(c_i, c_j, L1, L2, D, threshold: float = THRESHOLD) -> float:
    # |C_j| rather than C_j: for C_j < 0 the one-sided estimates swap and the
    # sound radius is D*(L1 + |C_j| L2); identical to the printed form when C_j > 0
    if min(L1, L2, D) < 0:
        raise UsageError("Lipschitz constants and D must be non-negative")
    gap = c_i - c_j
    if abs(gap) <= threshold:
        raise DegeneratePairError("|C gap| below threshold")
    return abs(D * (L1 + abs(c_j) * L2) / gap)


def _as_pairs(pair_or_pairs) -> list[MatchedPair]:
    pairs = [pair_or_pairs] if isinstance(pair_or_pairs, MatchedPair) else list(pair_or_pairs)
    if not pairs:
        raise IdentifiabilityError("no candidate pairs supplied")
    return pairs


def bound_t3(pairs, data: Trajectory, term: StructuredTerm, L: float, d_used: float | None = None,
             *, variant: str = "verbatim", threshold: float = THRESHOLD) -> BoundReport:
    """Approximate recovery when y only matches within D and u is L-Lipschitz.

    Among the supplied pairs the one with the smallest beta radius is used
    (ties: smaller y distance). ``d_used`` defaults to the chosen pair's
    own y distance. Centres are the midpoints of the interval construction.
    """
    _need_derivatives(data)
    if term.g is None:
        raise UsageError("bound_t3 needs a known growth shape g; use bound_t4")
    if variant not in VARIANTS:
        raise UsageError(f"unknown formula variant {variant!r}; expected one of {VARIANTS}")
    x, y, dq, c, d = _parts(data, term)
    g = np.asarray(term.g(y), dtype=np.float64)

    best, errors = None, []
    for p in _as_pairs(pairs):
        D = p.y_distance if d_used is None else float(d_used)
        try:
            r = t3_beta_radius(c[p.i], c[p.j], g[p.i], L, D, variant, threshold)
        except IdentifiabilityError as exc:
            errors.append(exc)
            continue
        key = (r, p.y_distance)
        if best is None or key < best[0]:
            best = (key, p, D)
    if best is None:
        raise errors[0]
    (radius, _), p, D = best
    i, j = p.i, p.j
    dq_adj = dq - d
    center = (c[i] * dq_adj[j] - c[j] * dq_adj[i]) / t3_denominator(c[i], c[j], g[i], variant)
    ok = np.abs(c) > threshold
    rep = BoundReport("T3", p, D, float(L), None, variant, float(center), float(radius),
                      inputs={"threshold": threshold, "C_i": float(c[i]), "C_j": float(c[j]),
                              "g_i": float(g[i])})
    for q in np.flatnonzero(ok):
        rep.u_centers[int(q)] = float((dq_adj[q] - center * g[q]) / c[q])
        rep.u_radii[int(q)] = float(abs(g[q] / c[q]) * radius)
    return rep


def bound_t4(pairs, data: Trajectory, term: StructuredTerm, L1: float, L2: float,
             d_used: float | None = None, *, threshold: float = THRESHOLD) -> BoundReport:
    """Approximate recovery of u(y_i) and g(y_i) when g is unknown and L1-Lipschitz.

    Each pair is tried in both orientations; the one with the smallest u
    radius wins (ties: smaller y distance).
    """
    _need_derivatives(data)
    x, y, dq, c, d = _parts(data, term)
    best, errors = None, []
    for p in _as_pairs(pairs):
        D = p.y_distance if d_used is None else float(d_used)
        for q in (p, p.swapped()):
            try:
                r = t4_u_radius(c[q.i], c[q.j], L1, L2, D, threshold)
            except IdentifiabilityError as exc:
                errors.append(exc)
                continue
            key = (r, q.y_distance)
            if best is None or key < best[0]:
                best = (key, q, D)
    if best is None:
        raise errors[0]
    (u_rad, _), p, D = best
    i, j = p.i, p.j
    u_center = _pair_u(dq, c, d, i, j)
    g_center = dq[i] - c[i] * u_center - d[i]
    rep = BoundReport("T4", p, D, float(L2), float(L1),
                      inputs={"threshold": threshold, "C_i": float(c[i]), "C_j": float(c[j])})
    rep.u_centers[i] = float(u_center)
    rep.u_radii[i] = float(u_rad)
    rep.g_centers[i] = float(g_center)
    rep.g_radii[i] = float(abs(c[i]) * u_rad)
    return rep


# ---------------------------------------------------------------- non-uniqueness

def counterexample_shift(beta_true: float, beta_bar: float, u_true: Callable, g: Callable) -> Callable:
    """The function that compensates a wrong constant exactly.

    beta_bar * g + shifted == beta_true * g + u_true everywhere, so data on
    the structured component alone cannot tell the two apart.
    """
    shift = beta_true - beta_bar

    def shifted(x):
        return u_true(x) + shift * g(x)

    return shifted


def counterexample_residual(beta_true, beta_bar, u_true, g, xs) -> float:
    """Max |(beta_bar g + shifted) - (beta_true g + u_true)| over ``xs``."""
    xs = np.asarray(xs, dtype=np.float64)
    ubar = counterexample_shift(beta_true, beta_bar, u_true, g)
    lhs = beta_bar * g(xs) + ubar(xs)
    rhs = beta_true * g(xs) + u_true(xs)
    return float(np.max(np.abs(lhs - rhs))) if xs.size else 0.0

