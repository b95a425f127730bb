"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 identifiability failure,
4 data error (including integration blow-up and training divergence).
Every command computes all of its outputs first and then writes each file
through a temporary file and an atomic rename.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from uniqode.config import RunConfig
from uniqode.errors import ConfigurationError, DataError, IdentifiabilityError, UniqodeError
from uniqode.experiments import (
    LENGTHS,
    NOISE_LEVELS,
    CaseId,
    reports_json,
    run_case,
    sweep_length,
    sweep_noise,
    table_csv,
)
from uniqode.identifiability import (
    bound_t3,
    bound_t4,
    find_matched_pairs,
    nearest_pairs,
    recover_t1,
    recover_t2,
)
from uniqode.odes import NoiseSpec, Trajectory, inject_noise, rk4_integrate, sample_dataset
from uniqode.training import default_unknowns, direct_fit, upinn_fit

log = logging.getLogger("uniqode")

REPRODUCE_IDS = ["case1", "case2", "case3", "case4", "case5", "table1", "table2", "table3", "table4"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Write every file via a temp file in the same directory, then rename into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, out_dir / name)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def _load_data(path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read data {path}: {exc.strerror}") from None
    return Trajectory.from_csv(text)


# ------------------------------------------------------------------ commands

def cmd_simulate(args, cfg: RunConfig) -> dict[str, str]:
    system = cfg.build_system()
    d = cfg.data
    t_span = tuple(d["t_span"]) if "t_span" in d else None
    traj = rk4_integrate(system, t_span=t_span, dt=float(d.get("dt", 1e-3)))
    if d.get("samples") is not None:
        traj = sample_dataset(traj, int(d["samples"]))
    frac, seed = cfg.noise(args.seed)
    if frac > 0:
        traj = inject_noise(traj, NoiseSpec(frac, seed))
    return {"trajectory.csv": traj.to_csv()}


def _structured_pairs(data, term, opts):
    pairs = find_matched_pairs(data, term.H1, term.C, opts["d_tol"])
    if not pairs:
        near = nearest_pairs(data, term.H1, term.C)
        lines = [f"  ({p.i}, {p.j}) y_distance={p.y_distance:.3e} c_gap={p.c_gap:.3e}" for p in near]
        raise IdentifiabilityError(
            f"component {term.q + 1}: no matched pairs within d_tol={opts['d_tol']:g}; nearest misses:\n"
            + "\n".join(lines))
    return pairs


def _bounds_for(term, data, pairs, opts):
    lip = opts["lipschitz"]
    if term.growth_known:
        if "L" not in lip:
            return None
        return bound_t3(pairs, data, term, lip["L"], opts["d_used"], variant=opts["variant"],
                        threshold=opts["threshold"])
    if "L1" not in lip or "L2" not in lip:
        return None
    return bound_t4(pairs, data, term, lip["L1"], lip["L2"], opts["d_used"], threshold=opts["threshold"])


def cmd_identify(args, cfg: RunConfig) -> dict[str, str]:
    system = cfg.build_system()
    data = _load_data(args.data)
    if not data.has_derivatives:
        raise DataError("identify needs derivative columns dx1..dxn in the data")
    if data.n != system.n:
        raise DataError(f"data has {data.n} state columns, system has {system.n}")
    opts = cfg.identify_options(args.formula_variant)
    out = {"formula_variant": opts["variant"], "d_tol": opts["d_tol"], "certificates": [], "bounds": []}
    for term in system.terms:
        pairs = _structured_pairs(data, term, opts)
        recover = recover_t1 if term.growth_known else recover_t2
        kw = {} if term.growth_known else {"pairs": pairs}
        cert = None
        for p in pairs:
            cert = recover(p, data, term, y_tol=opts["d_tol"], threshold=opts["threshold"], strict=False, **kw)
            if cert.ok:
                break
        if not cert.ok:
            failed = [k for k, v in cert.conditions_met.items() if not v]
            raise IdentifiabilityError(f"component {term.q + 1}: no pair meets the hypotheses (failed: {failed})")
        entry = cert.to_dict()
        entry["component"] = term.q + 1
        out["certificates"].append(entry)
        rep = _bounds_for(term, data, pairs, opts)
        if rep is not None:
            out["bounds"].append({"component": term.q + 1, **rep.to_dict()})
    return {"certificate.json": _dump(out)}


def cmd_bounds(args, cfg: RunConfig) -> dict[str, str]:
    system = cfg.build_system()
    data = _load_data(args.data)
    if not data.has_derivatives:
        raise DataError("bounds needs derivative columns dx1..dxn in the data")
    opts = cfg.identify_options(args.formula_variant)
    if not opts["lipschitz"]:
        raise ConfigurationError("bounds needs identify.lipschitz constants (L, or L1 and L2)")
    out = {"formula_variant": opts["variant"], "d_tol": opts["d_tol"], "bounds": []}
    for term in system.terms:
        pairs = _structured_pairs(data, term, opts)
        rep = _bounds_for(term, data, pairs, opts)
        if rep is None:
            need = "L" if term.growth_known else "L1 and L2"
            raise ConfigurationError(f"component {term.q + 1} needs identify.lipschitz {need}")
        out["bounds"].append({"component": term.q + 1, **rep.to_dict()})
    return {"bounds.json": _dump(out)}


def cmd_fit(args, cfg: RunConfig) -> dict[str, str]:
    system = cfg.build_system()
    data = _load_data(args.data)
    tc = cfg.train_config(args.seed)
    u = cfg.unknowns
    try:
        spec = default_unknowns(system, seed=tc.seed, beta_init=u.get("beta_init"), u_hidden=u.get("u_hidden"),
                                psi_hidden=u.get("psi_hidden"), trajectory_hidden=u.get("trajectory_hidden"),
                                with_trajectory=args.mode == "upinn")
    except TypeError as exc:
        raise ConfigurationError(f"unknowns: {exc}") from None
    if args.mode == "direct":
        res = direct_fit(data, system, spec, tc)
    else:
        res = upinn_fit(data, system, spec, tc)
    return {"fit.json": _dump(res.to_dict()), "loss.csv": res.loss_csv()}


def _experiment_settings(cfg: RunConfig, args):
    e = cfg.experiments
    overrides = dict(e.get("overrides", {}))
    seeds = list(e.get("seeds", [0, 1, 2]))
    if cfg.seed_forced(args.seed):
        seeds = [cfg.seed(args.seed)]
    return overrides, seeds, int(e.get("workers", 1))


def _case_files(tag: str, report) -> dict[str, str]:
    files = {f"{tag}.json": _dump(report.to_dict())}
    for name in report.functions:
        files[f"{tag}_{name}.csv"] = report.function_csv(name)
    return files


def cmd_reproduce(args, cfg: RunConfig) -> dict[str, str]:
    overrides, seeds, workers = _experiment_settings(cfg, args)
    ident = args.id
    if ident.startswith("case"):
        cases = {"case1": [CaseId.CASE1_U_N, CaseId.CASE1_U_N2], "case2": [CaseId.CASE2],
                 "case3": [CaseId.CASE3], "case4": [CaseId.CASE4], "case5": [CaseId.CASE5]}[ident]
        files = {}
        for c in cases:
            ov = dict(overrides)
            if cfg.seed_forced(args.seed):
                ov["seed"] = seeds[0]
            files.update(_case_files(c.value, run_case(c, ov)))
        return files
    if ident in ("table1", "table2"):
        reports = sweep_noise(cfg.experiments.get("levels", NOISE_LEVELS), seeds, overrides, workers)
    else:
        reports = sweep_length(cfg.experiments.get("lengths", LENGTHS), seeds, overrides, workers)
    return {f"{ident}.csv": table_csv(ident, reports), f"{ident}_reports.json": reports_json(reports)}


def cmd_sweep_noise(args, cfg: RunConfig) -> dict[str, str]:
    overrides, seeds, workers = _experiment_settings(cfg, args)
    levels = args.levels if args.levels is not None else cfg.experiments.get("levels", NOISE_LEVELS)
    seeds = args.seeds if args.seeds is not None else seeds
    reports = sweep_noise(levels, seeds, overrides, workers)
    return {"table1.csv": table_csv("table1", reports), "table2.csv": table_csv("table2", reports),
            "noise_reports.json": reports_json(reports)}


def cmd_sweep_length(args, cfg: RunConfig) -> dict[str, str]:
    overrides, seeds, workers = _experiment_settings(cfg, args)
    lengths = args.lengths if args.lengths is not None else cfg.experiments.get("lengths", LENGTHS)
    seeds = args.seeds if args.seeds is not None else seeds
    reports = sweep_length(lengths, seeds, overrides, workers)
    return {"table3.csv": table_csv("table3", reports), "table4.csv": table_csv("table4", reports),
            "length_reports.json": reports_json(reports)}


# ------------------------------------------------------------------ parser

def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="JSON run configuration")
    p.add_argument("--out", default=default if suppress else ".", help="output directory")
    p.add_argument("--seed", type=int, default=default, help="override every seed in the config")
    p.add_argument("--formula-variant", choices=["verbatim", "alternative"], default=default,
                   help="reading of the beta-radius denominator used by identify/bounds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uniqode", description="Identify unknown constants and functions in structured ODEs.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="integrate a system and write trajectory.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", parents=[common], help="exact recovery certificates from matched pairs")
    p.add_argument("data", help="trajectory CSV with derivative columns")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("bounds", parents=[common], help="error radii under Lipschitz assumptions")
    p.add_argument("data")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("fit", parents=[common], help="train the unknown terms")
    p.add_argument("data")
    p.add_argument("--mode", choices=["direct", "upinn"], required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reproduce", parents=[common], help="rerun a published case or table")
    p.add_argument("id", help="one of " + ", ".join(REPRODUCE_IDS))
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("sweep-noise", parents=[common], help="case 4 over noise levels")
    p.add_argument("--levels", type=float, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep_noise)

    p = sub.add_parser("sweep-length", parents=[common], help="case 5 over dataset lengths")
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep_length)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "reproduce" and args.id not in REPRODUCE_IDS:
        print(f"uniqode: error: unknown id {args.id!r}; choose from {', '.join(REPRODUCE_IDS)}", file=sys.stderr)
        return 2
    try:
        cfg = RunConfig.load(args.config)
        files = args.func(args, cfg)
        write_outputs(Path(args.out), files)
    except UniqodeError as exc:
        print(f"uniqode: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    for name in files:
        print(Path(args.out) / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
