"""Structured ODE systems, fixed-step RK4, sampling, noise and CSV I/O.

A structured component has the form

    dx_q/dt = beta * g(y) + C(x) * u(y) + d(x),    y = H1(x)

and the other components are known right-hand sides. All callables here
are vectorised over rows: ``x`` has shape ``(m, n)``, ``y`` has shape
``(m, k)``, and scalar-valued maps return ``(m,)``.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from uniqode.errors import ConfigurationError, DataError, IntegrationBlowupError

RowMap = Callable[[np.ndarray], np.ndarray]
TimeRowMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class StructuredTerm:
    """One component of the state obeying the structured form.

    ``g`` is ``None`` for the unknown-growth form, where the whole growth
    term is unknown and its ground truth sits in ``g_true``.
    """

    q: int
    C: RowMap
    d: RowMap
    H1: RowMap
    u_true: RowMap
    g: RowMap | None = None
    beta_true: float | None = None
    g_true: RowMap | None = None
    beta_name: str = "beta"
    u_name: str = "u"
    g_name: str = "g"

    @property
    def growth_known(self) -> bool:
        return self.g is not None

    def true_growth(self, y: np.ndarray) -> np.ndarray:
        if self.g is not None:
            return self.beta_true * self.g(y)
        return self.g_true(y)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        y = self.H1(x)
        return self.true_growth(y) + self.C(x) * self.u_true(y) + self.d(x)


@dataclass
class StructuredSystem:
    """An n-dimensional ODE where some components are structured terms.

    ``known`` maps component index to ``f(t, x) -> (m,)``. Every index in
    ``range(n)`` is covered by exactly one of ``known`` and ``terms``.
    Component indices are 0-based.
    """

    name: str
    n: int
    terms: list[StructuredTerm]
    known: dict[int, TimeRowMap]
    x0: np.ndarray
    state_names: list[str] = field(default_factory=list)
    constants: dict[str, float] = field(default_factory=dict)
    forcing: Callable[[np.ndarray], np.ndarray] | None = None
    t_span: tuple[float, float] = (0.0, 10.0)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        covered = sorted([t.q for t in self.terms] + list(self.known))
        if covered != list(range(self.n)):
            raise ConfigurationError(f"{self.name}: components {covered} do not cover 0..{self.n - 1}")
        if not self.state_names:
            self.state_names = [f"x{i + 1}" for i in range(self.n)]

    def term(self, q: int) -> StructuredTerm:
        for t in self.terms:
            if t.q == q:
                return t
        raise KeyError(q)

    def rhs(self, t, x) -> np.ndarray:
        """Right-hand side for a batch of states; ``t`` scalar or ``(m,)``."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        tb = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],))
        out = np.empty_like(xb)
        for term in self.terms:
            out[:, term.q] = term.evaluate(xb)
        for i, f in self.known.items():
            out[:, i] = f(tb, xb)
        return out[0] if single else out


@dataclass
class Trajectory:
    """Samples ``(t_i, x_i)`` with optional exact derivatives."""

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.states.shape[0] != self.times.shape[0]:
            raise DataError(f"{self.times.shape[0]} times but {self.states.shape[0]} state rows")
        if self.derivatives is not None:
            self.derivatives = np.asarray(self.derivatives, dtype=np.float64).reshape(self.states.shape)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError("times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def has_derivatives(self) -> bool:
        return self.derivatives is not None

    def subset(self, idx) -> "Trajectory":
        idx = np.asarray(idx)
        der = None if self.derivatives is None else self.derivatives[idx]
        return Trajectory(self.times[idx], self.states[idx], der)

    def to_csv(self, path=None) -> str:
        header = ["t"] + [f"x{i + 1}" for i in range(self.n)]
        cols = [self.times[:, None], self.states]
        if self.derivatives is not None:
            header += [f"dx{i + 1}" for i in range(self.n)]
            cols.append(self.derivatives)
        table = np.hstack(cols)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "Trajectory":
        text = path_or_text
        if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
            text = Path(path_or_text).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise DataError("empty trajectory CSV")
        header = [h.strip() for h in rows[0]]
        if not header or header[0] != "t":
            raise DataError(f"trajectory CSV must start with a 't' column, got {header[:1]}")
        xs = [h for h in header[1:] if h.startswith("x")]
        dxs = [h for h in header[1:] if h.startswith("dx")]
        n = len(xs)
        if xs != [f"x{i + 1}" for i in range(n)] or dxs not in ([], [f"dx{i + 1}" for i in range(n)]):
            raise DataError(f"unexpected trajectory header {header}")
        try:
            table = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"non-numeric entry in trajectory CSV: {exc}") from None
        if table.size == 0:
            raise DataError("trajectory CSV has no rows")
        table = table.reshape(-1, len(header))
        der = table[:, 1 + n:1 + 2 * n] if dxs else None
        return cls(table[:, 0], table[:, 1:1 + n], der)


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative noise: each entry becomes ``s * (1 + eps)``, eps ~ U[-fraction, fraction]."""

    fraction: float
    seed: int = 0


def rk4_integrate(system: StructuredSystem, x0=None, t_span=None, dt: float = 1e-3) -> Trajectory:
    """Classical fixed-step RK4; the last step is shortened to land on ``t1``.

    The derivative column is the analytic right-hand side at each stored state.
    """
    x = np.array(system.x0 if x0 is None else x0, dtype=np.float64)
    t0, t1 = system.t_span if t_span is None else t_span
    t0, t1 = float(t0), float(t1)
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if not t1 > t0:
        raise ConfigurationError(f"need t1 > t0, got ({t0}, {t1})")
    if x.shape != (system.n,):
        raise ConfigurationError(f"x0 has shape {x.shape}, system has n={system.n}")

    n_steps = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    times = t0 + dt * np.arange(n_steps + 1)
    times[-1] = t1
    states = np.empty((n_steps + 1, system.n))
    states[0] = x
    f = system.rhs
    # overflow is reported through the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            t = times[k]
            h = times[k + 1] - t
            k1 = f(t, x)
            k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(t + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationBlowupError(float(times[k + 1]))
            states[k + 1] = x
    return Trajectory(times, states, system.rhs(times, states))


def sample_dataset(traj: Trajectory, m: int) -> Trajectory:
    """Pick ``m`` stored samples nearest to equally spaced times, endpoints included."""
    m = int(m)
    if m < 1:
        raise ConfigurationError(f"sample count must be at least 1, got {m}")
    if m > len(traj):
        raise ConfigurationError(f"requested {m} samples from a trajectory of {len(traj)}")
    if m == len(traj):
        return traj.subset(np.arange(m))
    if m == 1:
        return traj.subset([0])
    targets = np.linspace(traj.times[0], traj.times[-1], m)
    idx = np.searchsorted(traj.times, targets)
    idx = np.clip(idx, 1, len(traj) - 1)
    left_closer = (targets - traj.times[idx - 1]) <= (traj.times[idx] - targets)
    idx = np.where(left_closer, idx - 1, idx)
    if np.unique(idx).size != m:
        raise ConfigurationError("sampling grid too fine for the stored trajectory")
    return traj.subset(idx)


def inject_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Proportional uniform noise on the states; derivatives are dropped."""
    frac = float(spec.fraction)
    if not 0.0 <= frac <= 1.0:
        raise ConfigurationError(f"noise fraction must lie in [0, 1], got {frac}")
    states = traj.states.copy()
    if frac > 0.0:
        rng = np.random.default_rng(spec.seed)
        states = states * (1.0 + rng.uniform(-frac, frac, size=states.shape))
    return Trajectory(traj.times.copy(), states, None)


def lotka_volterra_invariant(states: np.ndarray, alpha=1.0, beta=1.0, delta=1.0, gamma=1.0) -> np.ndarray:
    """First integral delta*x - gamma*ln x + beta*y - alpha*ln y."""
    x, y = states[:, 0], states[:, 1]
    return delta * x - gamma * np.log(x) + beta * y - alpha * np.log(y)


class Case(str, enum.Enum):
    CHEMO_INJECTION = "chemo_injection"
    CHEMO_UNKNOWN_GROWTH = "chemo_unknown_growth"
    LOTKA_VOLTERRA = "lotka_volterra"
    CHEMO_SCALED_INJECTION = "chemo_scaled_injection"


def _col(i):
    return lambda a: a[:, i]


def _zero(x):
    return np.zeros(x.shape[0])


def injection(amplitude: float = 1.0, tau: float = 5.0, center: float = 4.0):
    return lambda t: amplitude * np.exp(-tau * (np.asarray(t) - center) ** 2)


def _chemo(name, *, beta, gamma, N0, C0, u_true, amplitude, growth_known=True):
    # state (N, C); structured on N with drug term written as C(x) = -C
    inj = injection(amplitude)
    logistic = lambda y: y[:, 0] * (1.0 - y[:, 0])  # noqa: E731
    term = StructuredTerm(
        q=0,
        C=lambda x: -x[:, 1],
        d=_zero,
        H1=lambda x: x[:, :1],
        u_true=u_true,
        g=logistic if growth_known else None,
        beta_true=beta if growth_known else None,
        g_true=None if growth_known else (lambda y: beta * logistic(y)),
        g_name="g" if growth_known else "psi",
    )
    known = {1: lambda t, x: -gamma * x[:, 0] * x[:, 1] + inj(t)}
    consts = {"beta": beta, "gamma": gamma, "injection_amplitude": amplitude, "tau": 5.0}
    return StructuredSystem(name, 2, [term], known, [N0, C0], ["N", "C"], consts, inj)


def builtin_system(case, *, u_exponent: int = 1) -> StructuredSystem:
    """The four systems used in the experiments, with their published constants.

    ``u_exponent`` selects u*(N) = N or N**2 for the chemotherapy-with-injection case.
    """
    try:
        case = Case(case)
    except ValueError:
        raise ConfigurationError(f"unknown builtin system {case!r}; "
                                 f"choose from {[c.value for c in Case]}") from None

    if case is Case.CHEMO_INJECTION:
        if u_exponent not in (1, 2):
            raise ConfigurationError("u_exponent must be 1 or 2")
        u = (lambda y: y[:, 0]) if u_exponent == 1 else (lambda y: y[:, 0] ** 2)
        sys_ = _chemo("chemo_injection", beta=1.0, gamma=0.3, N0=1.0, C0=1.0, u_true=u, amplitude=1.0)
        sys_.constants["u_exponent"] = u_exponent
        return sys_
    if case is Case.CHEMO_UNKNOWN_GROWTH:
        return _chemo("chemo_unknown_growth", beta=1.0, gamma=0.5, N0=0.01, C0=0.1,
                      u_true=lambda y: y[:, 0], amplitude=1.0, growth_known=False)
    if case is Case.CHEMO_SCALED_INJECTION:
        return _chemo("chemo_scaled_injection", beta=2.0, gamma=0.3, N0=0.01, C0=0.1,
                      u_true=lambda y: 2.0 * y[:, 0], amplitude=5.0)

    a = b = dl = g = 1.0
    prey = StructuredTerm(
        q=0, C=lambda x: -x[:, 1], d=_zero, H1=lambda x: x[:, :1],
        u_true=lambda y: b * y[:, 0], g=lambda y: y[:, 0], beta_true=a,
        beta_name="alpha", u_name="beta_x",
    )
    predator = StructuredTerm(
        q=1, C=lambda x: x[:, 0], d=_zero, H1=lambda x: x[:, 1:2],
        u_true=lambda y: dl * y[:, 0], g=lambda y: -y[:, 0], beta_true=g,
        beta_name="gamma", u_name="delta_y",
    )
    return StructuredSystem("lotka_volterra", 2, [prey, predator], {}, [2.0, 4.0], ["x", "y"],
                            {"alpha": a, "beta": b, "delta": dl, "gamma": g})


def with_x0(system: StructuredSystem, x0) -> StructuredSystem:
    return replace(system, x0=np.asarray(x0, dtype=np.float64))
