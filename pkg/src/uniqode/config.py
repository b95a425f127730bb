"""JSON run configuration for the command line.

Sections: ``system``, ``data``, ``unknowns``, ``train``, ``identify`` and
``experiments``. Unknown keys anywhere are rejected. Inline systems use
small arithmetic expressions over ``t``, ``x1..xn`` and ``y1..yk``.
"""
from __future__ import annotations

import ast
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from uniqode.autodiff import Var
from uniqode.autodiff import tape as T
from uniqode.errors import ConfigurationError
from uniqode.identifiability import EXACT_Y_TOL, THRESHOLD, VARIANTS
from uniqode.odes import Case, StructuredSystem, StructuredTerm, builtin_system
from uniqode.training import TrainConfig

SEED_ENV = "UNIQODE_SEED"

_SECTIONS = {
    "system": {"builtin", "u_exponent", "inline", "x0", "t_span"},
    "data": {"t_span", "dt", "samples", "noise"},
    "unknowns": {"beta_init", "u_hidden", "psi_hidden", "trajectory_hidden"},
    "train": {"learning_rate", "epochs", "omega_de", "collocation_count", "seed", "plateau_rtol",
              "plateau_window"},
    "identify": {"d_tol", "threshold", "lipschitz", "formula_variant", "d_used"},
    "experiments": {"overrides", "seeds", "levels", "lengths", "workers"},
}
_NOISE_KEYS = {"fraction", "seed"}
_LIPSCHITZ_KEYS = {"L", "L1", "L2"}
_INLINE_KEYS = {"n", "x0", "state_names", "t_span", "terms", "known"}
_TERM_KEYS = {"q", "C", "d", "H1", "u_true", "g", "beta_true", "g_true", "beta_name", "u_name", "g_name"}


def _reject_unknown(where: str, got: dict, allowed: set):
    if not isinstance(got, dict):
        raise ConfigurationError(f"{where}: expected an object, got {type(got).__name__}")
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigurationError(f"{where}: unknown key(s) {extra}; allowed {sorted(allowed)}")


# ------------------------------------------------------------------ expressions

_FUNCS = {"exp": (np.exp, T.exp), "log": (np.log, T.log), "tanh": (np.tanh, T.tanh)}
_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _validate(node, names: set, text: str):
    for sub in ast.walk(node):
        if isinstance(sub, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Load)) or isinstance(sub, _OPS):
            continue
        if isinstance(sub, ast.Constant) and isinstance(sub.value, (int, float)) \
                and not isinstance(sub.value, bool):
            continue
        if isinstance(sub, ast.Name) and (sub.id in names or sub.id in _FUNCS):
            continue
        if isinstance(sub, ast.Call) and isinstance(sub.func, ast.Name) and sub.func.id in _FUNCS \
                and len(sub.args) == 1 and not sub.keywords:
            continue
        raise ConfigurationError(f"expression {text!r}: unsupported element {ast.dump(sub)[:40]}")


def compile_expr(text, prefix: str, width: int, with_time: bool = False):
    """Compile ``text`` into ``f(a[, t])`` where ``a`` has columns ``prefix1..prefix<width>``.

    The result is always a length-m vector; taped inputs stay on the tape.
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ConfigurationError(f"expected an expression string, got {text!r}")
    names = {f"{prefix}{i + 1}" for i in range(width)} | ({"t"} if with_time else set())
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"expression {text!r}: {exc.msg}") from None
    _validate(tree, names, text)
    code = compile(tree, "<expr>", "eval")

    def fn(a, t=None):
        taped = isinstance(a, Var)
        env = {"__builtins__": {}}
        env.update({k: (v[1] if taped else v[0]) for k, v in _FUNCS.items()})
        for i in range(width):
            env[f"{prefix}{i + 1}"] = a[:, i]
        m = a.value.shape[0] if taped else np.asarray(a).shape[0]
        if with_time:
            env["t"] = np.broadcast_to(np.asarray(t, dtype=np.float64), (m,))
        out = eval(code, env)  # noqa: S307 - tree validated above
        if isinstance(out, Var):
            return out
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (m,)).copy()

    return fn


def _columns(exprs, n):
    """H1 from a list of expressions in x; plain names become a column slice."""
    if not isinstance(exprs, list) or not exprs:
        raise ConfigurationError("H1 must be a non-empty list of expressions")
    plain = [e for e in exprs if isinstance(e, str) and e.startswith("x") and e[1:].isdigit()
             and 1 <= int(e[1:]) <= n]
    if len(plain) == len(exprs):
        idx = [int(e[1:]) - 1 for e in exprs]
        if idx == list(range(idx[0], idx[0] + len(idx))):
            sl = slice(idx[0], idx[0] + len(idx))
            return lambda x: x[:, sl]
        return lambda x: x[:, idx]
    fns = [compile_expr(e, "x", n) for e in exprs]

    def H1(x):
        cols = [f(x) for f in fns]
        if isinstance(x, Var) or any(isinstance(c, Var) for c in cols):
            return T.concat([T.reshape(c, (-1, 1)) if isinstance(c, Var) else c[:, None] for c in cols], axis=1)
        return np.column_stack(cols)

    return H1


def inline_system(spec: dict) -> StructuredSystem:
    _reject_unknown("system.inline", spec, _INLINE_KEYS)
    try:
        n = int(spec["n"])
        x0 = [float(v) for v in spec["x0"]]
        terms_spec = spec.get("terms", [])
        known_spec = spec.get("known", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"system.inline: missing or malformed field ({exc})") from None
    if len(x0) != n:
        raise ConfigurationError(f"system.inline: x0 has {len(x0)} entries, n = {n}")
    terms = []
    for k, ts in enumerate(terms_spec):
        where = f"system.inline.terms[{k}]"
        _reject_unknown(where, ts, _TERM_KEYS)
        for key in ("q", "C", "H1", "u_true"):
            if key not in ts:
                raise ConfigurationError(f"{where}: missing {key!r}")
        q = int(ts["q"])
        if not 1 <= q <= n:
            raise ConfigurationError(f"{where}: q must lie in 1..{n}")
        width = len(ts["H1"]) if isinstance(ts["H1"], list) else 0
        if not 1 <= width <= n:
            raise ConfigurationError(f"{where}: H1 must list between 1 and {n} expressions")
        has_g = "g" in ts
        if has_g == ("g_true" in ts):
            raise ConfigurationError(f"{where}: give exactly one of 'g' (with beta_true) or 'g_true'")
        if has_g and "beta_true" not in ts:
            raise ConfigurationError(f"{where}: 'g' needs 'beta_true'")
        terms.append(StructuredTerm(
            q=q - 1,
            C=compile_expr(ts["C"], "x", n),
            d=compile_expr(ts.get("d", "0"), "x", n),
            H1=_columns(ts["H1"], n),
            u_true=compile_expr(ts["u_true"], "y", width),
            g=compile_expr(ts["g"], "y", width) if has_g else None,
            beta_true=float(ts["beta_true"]) if has_g else None,
            g_true=None if has_g else compile_expr(ts["g_true"], "y", width),
            beta_name=ts.get("beta_name", "beta"), u_name=ts.get("u_name", "u"),
            g_name=ts.get("g_name", "g" if has_g else "psi"),
        ))
    if not isinstance(known_spec, dict):
        raise ConfigurationError("system.inline.known must map component numbers to expressions")
    known = {}
    for key, expr in known_spec.items():
        try:
            q = int(key)
        except ValueError:
            raise ConfigurationError(f"system.inline.known: bad component {key!r}") from None
        f = compile_expr(expr, "x", n, with_time=True)
        known[q - 1] = (lambda f: lambda t, x: f(x, t))(f)
    t_span = tuple(float(v) for v in spec.get("t_span", (0.0, 10.0)))
    names = spec.get("state_names") or [f"x{i + 1}" for i in range(n)]
    return StructuredSystem("inline", n, terms, known, x0, list(names), {}, None, t_span)


# ------------------------------------------------------------------ run config

@dataclass
class RunConfig:
    system: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    unknowns: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    identify: dict = field(default_factory=dict)
    experiments: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        _reject_unknown(source, doc, set(_SECTIONS))
        for name, allowed in _SECTIONS.items():
            _reject_unknown(f"{source}: section {name!r}", doc.get(name, {}), allowed)
        noise = doc.get("data", {}).get("noise")
        if noise is not None:
            _reject_unknown(f"{source}: data.noise", noise, _NOISE_KEYS)
        lip = doc.get("identify", {}).get("lipschitz")
        if lip is not None:
            _reject_unknown(f"{source}: identify.lipschitz", lip, _LIPSCHITZ_KEYS)
        return cls(**{k: doc.get(k, {}) for k in _SECTIONS})

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    # -------------------------------------------------------------- views

    def build_system(self) -> StructuredSystem:
        s = self.system
        if "inline" in s and "builtin" in s:
            raise ConfigurationError("system: give either 'builtin' or 'inline', not both")
        if "inline" in s:
            system = inline_system(s["inline"])
        elif "builtin" in s:
            try:
                case = Case(s["builtin"])
            except ValueError:
                raise ConfigurationError(f"system.builtin: unknown system {s['builtin']!r}; "
                                         f"choose from {[c.value for c in Case]}") from None
            kw = {"u_exponent": int(s["u_exponent"])} if "u_exponent" in s else {}
            system = builtin_system(case, **kw)
        else:
            raise ConfigurationError("config needs a 'system' section naming a builtin or inline system")
        if "x0" in s:
            system.x0 = np.asarray(s["x0"], dtype=np.float64)
            if system.x0.shape != (system.n,):
                raise ConfigurationError(f"system.x0 must have {system.n} entries")
        if "t_span" in s:
            system.t_span = _span(s["t_span"], "system.t_span")
        return system

    def seed(self, flag: int | None, fallback: int = 0) -> int:
        """--seed flag, else the UNIQODE_SEED environment variable, else the config value."""
        if flag is not None:
            return int(flag)
        env = os.environ.get(SEED_ENV)
        if env not in (None, ""):
            try:
                return int(env)
            except ValueError:
                raise ConfigurationError(f"{SEED_ENV}={env!r} is not an integer") from None
        return int(fallback)

    def seed_forced(self, flag: int | None) -> bool:
        return flag is not None or os.environ.get(SEED_ENV) not in (None, "")

    def train_config(self, seed_flag: int | None = None) -> TrainConfig:
        t = dict(self.train)
        t["seed"] = self.seed(seed_flag, t.get("seed", 0))
        try:
            return TrainConfig(**t)
        except TypeError as exc:
            raise ConfigurationError(f"train: {exc}") from None

    def noise(self, seed_flag: int | None = None) -> tuple[float, int]:
        n = self.data.get("noise") or {}
        frac = float(n.get("fraction", 0.0))
        return frac, self.seed(seed_flag, n.get("seed", 0))

    def identify_options(self, variant_flag: str | None) -> dict:
        i = self.identify
        variant = variant_flag or i.get("formula_variant", "verbatim")
        if variant not in VARIANTS:
            raise ConfigurationError(f"identify.formula_variant must be one of {VARIANTS}")
        lip = i.get("lipschitz") or {}
        for k, v in lip.items():
            if not isinstance(v, (int, float)) or v < 0:
                raise ConfigurationError(f"identify.lipschitz.{k} must be a non-negative number")
        d_tol = float(i.get("d_tol", EXACT_Y_TOL))
        if d_tol < 0:
            raise ConfigurationError("identify.d_tol must be non-negative")
        return {"d_tol": d_tol, "threshold": float(i.get("threshold", THRESHOLD)), "variant": variant,
                "lipschitz": dict(lip), "d_used": i.get("d_used")}


def _span(value, where):
    try:
        t0, t1 = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{where} must be a pair of numbers") from None
    if not t1 > t0:
        raise ConfigurationError(f"{where} must satisfy t1 > t0")
    return t0, t1
