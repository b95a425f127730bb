"""Fitting unknown constants and functions of a structured ODE.

Two regimes:

* ``direct_fit`` uses exact state derivatives, so only the unknown terms of
  the structured components are trained against the residual
  ``dx_q/dt - [beta g(y) + C(x) u(y) + d(x)]``.
* ``upinn_fit`` sees states only. A trajectory network ``t -> x(t)`` is fit
  to the samples, its time derivative comes from forward-mode tangents
  recorded on the tape, and every component's ODE residual is penalised at
  collocation times with weight ``omega_de``.

Both run full-batch Adam and update constants and network weights together.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from uniqode.autodiff import Mlp, Tape, adam_init, adam_step, backward, init_mlp, mlp_forward
from uniqode.autodiff import tape as T
from uniqode.autodiff.mlp import taped_forward, taped_forward_with_tangent
from uniqode.errors import ConfigurationError, DataError, DivergenceError, ShapeError, UsageError
from uniqode.odes import StructuredSystem, Trajectory

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = [20, 20, 20, 20]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    omega_de: float = 0.1
    collocation_count: int = 1024
    seed: int = 0
    # early stop when the best total loss improves by less than this
    # fraction over ``plateau_window`` epochs; None disables it
    plateau_rtol: float | None = None
    plateau_window: int = 500

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.omega_de < 0:
            raise ConfigurationError("omega_de must be non-negative")
        if self.collocation_count < 0:
            raise ConfigurationError("collocation_count must be non-negative")
        if self.plateau_window < 1:
            raise ConfigurationError("plateau_window must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComponentUnknowns:
    """Unknown pieces of one structured component.

    Either ``beta`` (an initial guess for the constant multiplying the known
    growth shape) or ``psi_net`` (the whole growth term) must be given.
    Networks may be replaced by plain callables, which are then held fixed.
    """

    q: int
    u_net: Mlp | Callable
    beta: float | None = None
    psi_net: Mlp | Callable | None = None
    beta_name: str = "beta"
    u_name: str = "u"
    psi_name: str = "psi"

    def __post_init__(self):
        if (self.beta is None) == (self.psi_net is None):
            raise ConfigurationError(
                f"component {self.q}: give exactly one of a constant guess or a growth network")


@dataclass
class UnknownSpec:
    components: list[ComponentUnknowns]
    trajectory_net: Mlp | Callable | None = None

    def component(self, q: int) -> ComponentUnknowns:
        for c in self.components:
            if c.q == q:
                return c
        raise KeyError(q)


@dataclass
class FitResult:
    mode: str
    constants: dict[str, float]
    initial_guesses: dict[str, float]
    networks: dict[str, Mlp]
    history: dict[str, np.ndarray]
    metrics: dict[str, float]
    config: dict
    final_losses: dict[str, float] = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return int(self.history["total"].shape[0])

    def predict(self, name: str, y) -> np.ndarray:
        """Evaluate a trained unknown function (``u``/``psi`` networks) at ``y``."""
        y = np.asarray(y, dtype=np.float64)
        batch = y.reshape(-1, 1) if y.ndim <= 1 else y
        return mlp_forward(self.networks[name], batch)[:, 0]

    def loss_csv(self) -> str:
        lines = ["epoch,total,data,ode"]
        h = self.history
        for k in range(self.epochs_run):
            lines.append(f"{k},{h['total'][k]!r},{h['data'][k]!r},{h['ode'][k]!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "constants": self.constants,
            "initial_guesses": self.initial_guesses,
            "metrics": self.metrics,
            "final_losses": self.final_losses,
            "epochs_run": self.epochs_run,
            "config": self.config,
            "networks": {k: v.to_dict() for k, v in self.networks.items()},
        }


# ------------------------------------------------------------------ defaults

def default_unknowns(system: StructuredSystem, *, seed: int = 0, beta_init=None,
                     u_hidden=None, psi_hidden=None, trajectory_hidden=None,
                     with_trajectory: bool = False) -> UnknownSpec:
    """One u network per structured term, a constant or growth network, and optionally a trajectory net.

    ``beta_init`` is a float (same guess everywhere) or a dict keyed by the
    constant's name. Seeds are offset per network so no two share weights.
    """
    u_hidden = DEFAULT_HIDDEN if u_hidden is None else list(u_hidden)
    psi_hidden = u_hidden if psi_hidden is None else list(psi_hidden)
    comps = []
    for k, term in enumerate(system.terms):
        width = int(np.asarray(term.H1(system.x0[None, :])).reshape(1, -1).shape[1])
        u = init_mlp([width, *u_hidden, 1], seed + 1 + 2 * k)
        if term.growth_known:
            guess = beta_init.get(term.beta_name) if isinstance(beta_init, dict) else beta_init
            if guess is None:
                raise ConfigurationError(f"no initial guess for {term.beta_name}")
            comps.append(ComponentUnknowns(term.q, u, beta=float(guess), beta_name=term.beta_name,
                                           u_name=term.u_name))
        else:
            psi = init_mlp([width, *psi_hidden, 1], seed + 2 + 2 * k)
            comps.append(ComponentUnknowns(term.q, u, psi_net=psi, u_name=term.u_name,
                                           psi_name=term.g_name))
    traj = None
    if with_trajectory:
        hidden = DEFAULT_HIDDEN if trajectory_hidden is None else list(trajectory_hidden)
        traj = init_mlp([1, *hidden, system.n], seed)
    return UnknownSpec(comps, traj)


# ------------------------------------------------------------------ parameter packing

class _Layout:
    """Flat list of trainable arrays plus where each unknown lives in it."""

    def __init__(self, spec: UnknownSpec, include_trajectory: bool):
        self.spec = spec
        self.arrays: list[np.ndarray] = []
        self.slots: dict[str, slice | int] = {}
        self.nets: dict[str, Mlp] = {}
        if include_trajectory and isinstance(spec.trajectory_net, Mlp):
            self._add_net("trajectory", spec.trajectory_net)
        for c in spec.components:
            if isinstance(c.u_net, Mlp):
                self._add_net(c.u_name, c.u_net)
            if isinstance(c.psi_net, Mlp):
                self._add_net(c.psi_name, c.psi_net)
            if c.beta is not None:
                self.slots[c.beta_name] = len(self.arrays)
                self.arrays.append(np.array(float(c.beta)))

    def _add_net(self, name, net: Mlp):
        if name in self.nets:
            raise ConfigurationError(f"duplicate unknown name {name!r}")
        start = len(self.arrays)
        self.arrays += [p.copy() for p in net.params()]
        self.slots[name] = slice(start, len(self.arrays))
        self.nets[name] = net

    def bind(self, P: list[T.Var]) -> dict:
        return {name: P[s] for name, s in self.slots.items()}

    def constants(self, arrays) -> dict[str, float]:
        return {c.beta_name: float(arrays[self.slots[c.beta_name]])
                for c in self.spec.components if c.beta is not None}

    def networks(self, arrays) -> dict[str, Mlp]:
        return {name: net.with_params(arrays[self.slots[name]]) for name, net in self.nets.items()}


def _call(fn, bound: dict, name: str, y):
    """Evaluate an unknown on ``y``; y may be an array or a Var, result is 1-d."""
    if name in bound:
        return taped_forward(bound[name], y)[:, 0]
    return fn(y)


def _structured_rhs(comp: ComponentUnknowns, term, bound: dict, x):
    y = term.H1(x)
    if comp.beta is not None:
        growth = bound[comp.beta_name] * term.g(y)
    else:
        growth = _call(comp.psi_net, bound, comp.psi_name, y)
    return growth + term.C(x) * _call(comp.u_net, bound, comp.u_name, y) + term.d(x)


def _check_spec(system: StructuredSystem, spec: UnknownSpec):
    terms = {t.q: t for t in system.terms}
    for c in spec.components:
        if c.q not in terms:
            raise ConfigurationError(f"component {c.q} is not a structured term of {system.name}")
        if c.beta is not None and terms[c.q].g is None:
            raise ConfigurationError(f"component {c.q}: growth shape unknown, needs a growth network")
        width = np.asarray(terms[c.q].H1(system.x0[None, :])).reshape(1, -1).shape[1]
        for net in (c.u_net, c.psi_net):
            if isinstance(net, Mlp) and (net.in_width != width or net.out_width != 1):
                raise ShapeError(f"component {c.q}: network {net.layer_sizes} does not map R^{width} -> R")
    return terms


def _history():
    return {"total": [], "data": [], "ode": []}


def _plateaued(best: list[float], window: int, rtol: float) -> bool:
    if len(best) <= window:
        return False
    old, new = best[-window - 1], best[-1]
    return old > 0 and (old - new) / old < rtol


def _run(cfg: TrainConfig, layout: _Layout, loss_fn) -> tuple[list, dict]:
    """Adam loop; returns the parameters with the lowest recorded total loss.

    Adam at a fixed rate has occasional loss spikes late in training, so the
    last iterate is not necessarily the best one.
    """
    params = layout.arrays
    keep = params
    state = adam_init(params)
    hist = _history()
    best: list[float] = []
    for epoch in range(cfg.epochs):
        tape = Tape()
        P = [tape.leaf(p) for p in params]
        total, data_l, ode_l = loss_fn(layout.bind(P))
        value = float(total.value)
        if not np.isfinite(value):
            raise DivergenceError(epoch)
        if not best or value < best[-1]:
            keep = params
        grads = backward(total)
        params, state = adam_step(params, [grads[p] for p in P], state, cfg.learning_rate)
        hist["total"].append(value)
        hist["data"].append(float(data_l))
        hist["ode"].append(float(ode_l))
        best.append(value if not best else min(best[-1], value))
        if cfg.plateau_rtol is not None and _plateaued(best, cfg.plateau_window, cfg.plateau_rtol):
            log.info("plateau at epoch %d (loss %.3e)", epoch, value)
            break
    return keep, {k: np.asarray(v) for k, v in hist.items()}


# ------------------------------------------------------------------ metrics

def evaluate_metrics(predictions, reference) -> dict[str, float]:
    """MSE, R^2 (per column, averaged) and MAPE in percent.

    MAPE skips reference entries with magnitude below 1e-12; the number
    skipped is returned as ``mape_skipped``.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if ref.size == 0:
        raise UsageError("reference is empty")
    if pred.shape != ref.shape:
        raise ShapeError(f"predictions {pred.shape} and reference {ref.shape} differ")
    p2 = pred.reshape(ref.shape[0], -1)
    r2d = ref.reshape(ref.shape[0], -1)
    err = p2 - r2d
    mse = float(np.mean(err**2))
    ss_res = np.sum(err**2, axis=0)
    ss_tot = np.sum((r2d - r2d.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2_cols = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, np.where(ss_res == 0, 1.0, -np.inf))
    keep = np.abs(r2d) >= 1e-12
    mape = float(np.mean(np.abs(err[keep]) / np.abs(r2d[keep])) * 100.0) if keep.any() else float("nan")
    return {"mse": mse, "r2": float(np.mean(r2_cols)), "mape": mape,
            "mape_skipped": int(keep.size - keep.sum())}


# ------------------------------------------------------------------ direct fit

def direct_fit(data: Trajectory, system: StructuredSystem, unknowns: UnknownSpec,
               cfg: TrainConfig) -> FitResult:
    """Fit the structured components against exact derivatives."""
    if not data.has_derivatives:
        raise DataError("direct fitting needs derivative columns; use the UPINN trainer instead")
    if data.n != system.n:
        raise ShapeError(f"data has {data.n} state columns, system has {system.n}")
    terms = _check_spec(system, unknowns)
    x = data.states
    targets = {c.q: data.derivatives[:, c.q] for c in unknowns.components}
    layout = _Layout(unknowns, include_trajectory=False)
    n_comp = len(unknowns.components)

    def loss_fn(bound):
        total = None
        for c in unknowns.components:
            r = targets[c.q] - _structured_rhs(c, terms[c.q], bound, x)
            term_loss = T.mean(T.square(r))
            total = term_loss if total is None else total + term_loss
        total = total * (1.0 / n_comp)
        return total, total.value, 0.0

    params, hist = _run(cfg, layout, loss_fn)
    nets = layout.networks(params)
    bound_np = {name: net for name, net in nets.items()}
    preds, refs = [], []
    for c in unknowns.components:
        preds.append(_eval_structured(c, terms[c.q], bound_np, layout.constants(params), x))
        refs.append(targets[c.q])
    metrics = evaluate_metrics(np.stack(preds, 1), np.stack(refs, 1))
    # loss at the returned parameters, which is the best one recorded
    final = float(hist["total"].min()) if len(hist["total"]) else float("nan")
    return FitResult(
        "direct", layout.constants(params), layout.constants(layout.arrays), nets, hist, metrics,
        {"train": cfg.to_dict(), "system": system.name, "samples": len(data)},
        {"total": final, "data": final, "ode": 0.0},
    )


def _eval_structured(comp, term, nets: dict, consts: dict, x) -> np.ndarray:
    y = np.asarray(term.H1(x), dtype=np.float64).reshape(x.shape[0], -1)

    def fn(f, name):
        return mlp_forward(nets[name], y)[:, 0] if name in nets else np.asarray(f(y))

    if comp.beta is not None:
        growth = consts[comp.beta_name] * term.g(y)
    else:
        growth = fn(comp.psi_net, comp.psi_name)
    return growth + term.C(x) * fn(comp.u_net, comp.u_name) + term.d(x)


# ------------------------------------------------------------------ UPINN

def collocation_times(data: Trajectory, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0)
    return np.linspace(data.times[0], data.times[-1], count)


def _trajectory(bound, traj_fn, t):
    """(x(t), dx/dt(t)) for column ``t``; fixed callables return arrays."""
    if "trajectory" in bound:
        return taped_forward_with_tangent(bound["trajectory"], t, np.ones_like(t))
    return traj_fn(t[:, 0])


def _upinn_losses(bound, system, terms, unknowns, data, t_data, t_col, traj_fn):
    comps = {c.q: c for c in unknowns.components}
    if "trajectory" in bound:
        x_data = taped_forward(bound["trajectory"], t_data)
    else:
        x_data = traj_fn(t_data[:, 0])[0]
    data_loss = T.mean(T.square(x_data - data.states)) if isinstance(x_data, T.Var) \
        else float(np.mean((np.asarray(x_data) - data.states) ** 2))
    if t_col.shape[0] == 0:
        return data_loss, None
    x_c, dx_c = _trajectory(bound, traj_fn, t_col)
    tc = t_col[:, 0]
    ode = None
    for k in range(system.n):
        if k in comps:
            rhs = _structured_rhs(comps[k], terms[k], bound, x_c)
        elif k in system.known:
            rhs = system.known[k](tc, x_c)
        else:
            raise ConfigurationError(f"component {k} has unknowns but no trainable spec")
        r = dx_c[:, k] - rhs
        sq = T.mean(T.square(r)) if isinstance(r, T.Var) else float(np.mean(np.asarray(r) ** 2))
        ode = sq if ode is None else ode + sq
    ode = ode * (1.0 / system.n)
    return data_loss, ode


def _check_traj_net(system, unknowns):
    net = unknowns.trajectory_net
    if net is None:
        raise ConfigurationError("UPINN fitting needs a trajectory network (or callable)")
    if isinstance(net, Mlp) and (net.in_width != 1 or net.out_width != system.n):
        raise ShapeError(f"trajectory network {net.layer_sizes} must map t -> R^{system.n}")


def _unknown_terms_covered(system, terms, unknowns):
    covered = {c.q for c in unknowns.components}
    missing = [t.q for t in system.terms if t.q not in covered]
    if missing:
        raise ConfigurationError(f"structured components {missing} have no unknown spec")


def loss_components(system: StructuredSystem, unknowns: UnknownSpec, data: Trajectory,
                    collocation, *, omega_de: float = 1.0) -> tuple[float, float]:
    """Evaluate (data_loss, ode_loss) for the current unknowns without training.

    ``unknowns.trajectory_net`` may be a callable ``t -> (x, dx/dt)`` and the
    unknown functions plain callables, e.g. to plug in the true solution.
    """
    _check_traj_net(system, unknowns)
    terms = _check_spec(system, unknowns)
    _unknown_terms_covered(system, terms, unknowns)
    t_col = np.asarray(collocation, dtype=np.float64).reshape(-1, 1)
    if t_col.shape[0] == 0 and omega_de > 0:
        raise ConfigurationError("no collocation points but omega_de > 0")
    if t_col.size and (t_col.min() < data.times[0] - 1e-12 or t_col.max() > data.times[-1] + 1e-12):
        raise ConfigurationError("collocation times must lie within the data's time span")
    layout = _Layout(unknowns, include_trajectory=True)
    tape = Tape()
    bound = layout.bind([tape.leaf(p) for p in layout.arrays])
    dl, ol = _upinn_losses(bound, system, terms, unknowns, data, data.times[:, None], t_col,
                           unknowns.trajectory_net)
    val = lambda v: float(v.value) if isinstance(v, T.Var) else (0.0 if v is None else float(v))  # noqa: E731
    return val(dl), val(ol)


def upinn_fit(data: Trajectory, system: StructuredSystem, unknowns: UnknownSpec, cfg: TrainConfig,
              reference: Trajectory | None = None) -> FitResult:
    """Joint fit of a trajectory network and the unknown terms from state samples alone.

    ``reference`` (noiseless states at the same times) is what the final
    metrics are computed against; it defaults to ``data``.
    """
    if data.n != system.n:
        raise ShapeError(f"data has {data.n} state columns, system has {system.n}")
    _check_traj_net(system, unknowns)
    terms = _check_spec(system, unknowns)
    _unknown_terms_covered(system, terms, unknowns)
    if cfg.omega_de > 0 and cfg.collocation_count == 0:
        raise ConfigurationError("no collocation points but omega_de > 0")
    t_data = data.times[:, None]
    t_col = collocation_times(data, cfg.collocation_count if cfg.omega_de > 0 else 0)[:, None]
    layout = _Layout(unknowns, include_trajectory=True)
    w = float(cfg.omega_de)

    def loss_fn(bound):
        dl, ol = _upinn_losses(bound, system, terms, unknowns, data, t_data, t_col, None)
        if ol is None:
            return dl, dl.value, 0.0
        return dl + w * ol, dl.value, ol.value

    params, hist = _run(cfg, layout, loss_fn)
    nets = layout.networks(params)
    ref = data if reference is None else reference
    pred = mlp_forward(nets["trajectory"], ref.times[:, None])
    metrics = evaluate_metrics(pred, ref.states)

    final = {"total": float("nan"), "data": float("nan"), "ode": float("nan")}
    if len(hist["total"]):
        # losses at the returned parameters, not the pre-step ones logged in history
        final_spec = _respec(unknowns, nets, layout.constants(params))
        t_eval = collocation_times(data, cfg.collocation_count or 1024)
        dl, ol = loss_components(system, final_spec, data, t_eval, omega_de=0.0)
        final = {"total": dl + w * ol, "data": dl, "ode": ol}
    return FitResult(
        "upinn", layout.constants(params), layout.constants(layout.arrays), nets, hist, metrics,
        {"train": cfg.to_dict(), "system": system.name, "samples": len(data)}, final,
    )


def _respec(spec: UnknownSpec, nets: dict[str, Mlp], consts: dict[str, float]) -> UnknownSpec:
    comps = []
    for c in spec.components:
        comps.append(ComponentUnknowns(
            c.q, nets.get(c.u_name, c.u_net),
            beta=consts.get(c.beta_name) if c.beta is not None else None,
            psi_net=nets.get(c.psi_name, c.psi_net) if c.psi_net is not None else None,
            beta_name=c.beta_name, u_name=c.u_name, psi_name=c.psi_name))
    return UnknownSpec(comps, nets.get("trajectory", spec.trajectory_net))
