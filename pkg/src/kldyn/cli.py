"""Command-line front end.

Subcommands ``simulate``, ``certify``, ``levelset`` and ``rates`` each take a
TOML run configuration (see :mod:`kldyn.config`) and write their artifacts to
an output directory; ``report`` merges ``rate_report.json`` files into one
summary CSV.

Exit codes
----------
0
    The command completed.  Pass/fail verdicts of ``levelset`` and ``rates``
    live in the artifacts; ``certify`` exits 0 only when the certificate holds.
1
    Invalid input: missing or malformed config, out-of-range value, unknown
    potential, or an analysis the potential cannot support (e.g. no Hessian).
2
    Numerical failure: the integrator gave up, or the quasi-gradient
    certificate was not established.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dynamics, levelset, rates
from .config import ConfigError, RunConfig, load_config
from .deformation import DeformedEnergy, certify_quasigradient, lambda_star, lambda_zero
from .errors import CapabilityError, InputError, IntegrationError, KLDynError
from .potential import hessian_bound

log = logging.getLogger("kldyn")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2
SUMMARY_FIELDS = ["potential", "gamma", "classification", "theta_hat", "law", "param",
                  "envelope_automaj", "envelope_majgrad1"]


class CertificateFailed(KLDynError):
    """The sampled angle condition or rest-point equivalence did not hold."""


def _write_json(path: Path, data):
    with open(path, "w") as fh:
        fh.write(json.dumps(rates.to_jsonable(data), indent=2, sort_keys=True) + "\n")


def _say(quiet: bool, line: str):
    if not quiet:
        print(line, flush=True)


# ---------------------------------------------------------------- analyses


def _integrate(cfg: RunConfig, out: Path):
    spec = cfg.build_potential()
    try:
        traj = dynamics.integrate(spec, cfg.dynamics, cfg.initial_state())
    except IntegrationError as exc:
        if exc.partial is not None:
            exc.partial.to_csv(out / "trajectory.csv")
        raise
    traj.to_csv(out / "trajectory.csv")
    final = {"t": traj.times[-1], "u": traj.u[-1], "v": traj.v[-1],
             "E_total": traj.energies[-1], "grad_norm": traj.grad_norms[-1]}
    _write_json(out / "run.json", {"config": cfg.echo(),
                                   "classification": traj.classification.to_dict(),
                                   "final_state": final, "samples": len(traj.times)})
    return spec, traj


def _certify(cfg: RunConfig, out: Path) -> dict:
    spec = cfg.build_potential()
    spec.require_hessian()
    s = cfg.certify
    M, _ = hessian_bound(spec, s.R, seed=cfg.seed)
    lam_star = lambda_star(cfg.gamma, M)
    lam = lam_star if s.lam is None else s.lam
    if lam != 0 and not lam < lambda_zero(cfg.gamma, M):
        raise ConfigError(f"must lie in [0, {lambda_zero(cfg.gamma, M)!r}), got {lam!r}",
                          "certify.lambda")
    de = DeformedEnergy(spec, cfg.gamma, lam)
    cert = certify_quasigradient(de, s.R, s.budget, cfg.seed, M, allow_zero=True)
    data = {**cert.to_dict(), "lambda_star": lam_star, "potential": spec.name, "seed": cfg.seed}
    data["holds"] = bool(cert.alpha_sampled > 0 and cert.rest_point_equivalence_checked)
    _write_json(out / "certificate.json", data)
    return data


def _levelset(cfg: RunConfig, out: Path):
    spec = cfg.build_potential()
    s = cfg.levelset
    if s.ubar is not None:
        ubar = np.array(s.ubar, dtype=float)
    elif spec.known_critical_point is not None:
        ubar = spec.known_critical_point
    else:
        raise ConfigError("potential has no known critical point; set it", "levelset.ubar")
    if ubar.size != spec.dimension:
        raise ConfigError(f"expected {spec.dimension} components", "levelset.ubar")
    try:
        profile = levelset.psi_profile(spec, ubar, (s.r_max, s.r_min), s.points_per_decade,
                                       s.starts, s.r_ball, cfg.seed)
    except InputError as exc:
        raise ConfigError(str(exc), "levelset") from None
    profile.to_csv(out / "psi_profile.csv")
    return profile


def _rates(cfg: RunConfig, out: Path, traj=None):
    spec = cfg.build_potential()
    desing = cfg.build_desingularizer()
    if desing is None and not cfg.analysis["exponent"]:
        desing = spec.known_desingularizer
        if desing is None:
            raise ConfigError("exponent estimation is off and no desingularizer is known",
                              "desingularizer")
    s = cfg.rates
    report, _ = rates.end_to_end(spec, cfg.dynamics, cfg.initial_state(), desing, cfg.seed,
                                 s.budget, s.t_start, s.fit_window, s.exponent_window, traj)
    report.to_json(out / "rate_report.json")
    return report


def _rates_line(report) -> str:
    row = report.summary_row()
    return " ".join(f"{k}={_fmt(row[k])}" for k in SUMMARY_FIELDS)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else f"{x:.6g}"
    return str(x)


# ---------------------------------------------------------------- subcommands


def cmd_simulate(cfg: RunConfig, out: Path, quiet: bool) -> int:
    _, traj = _integrate(cfg, out)
    c = traj.classification
    _say(quiet, f"{cfg.name}: {c.kind} at t={c.time:.6g} ({len(traj.times)} samples)")
    if cfg.analysis["certify"]:
        cert = _certify(cfg, out)
        _say(quiet, f"{cfg.name}: certificate holds={cert['holds']}")
    if cfg.analysis["levelset"]:
        prof = _levelset(cfg, out)
        _say(quiet, f"{cfg.name}: psi profile {prof.verdict}")
    if cfg.analysis["rates"]:
        _say(quiet, f"{cfg.name}: {_rates_line(_rates(cfg, out, traj))}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig, out: Path, quiet: bool) -> int:
    cert = _certify(cfg, out)
    _say(quiet, f"{cfg.name}: lambda={cert['lambda']:.6g} alpha_certified="
                f"{cert['alpha_certified']:.6g} alpha_sampled={cert['alpha_sampled']:.6g} "
                f"holds={cert['holds']}")
    if not cert["holds"]:
        raise CertificateFailed(f"angle condition not established at lambda={cert['lambda']!r}"
                                f" (sampled cosine {cert['alpha_sampled']!r})")
    return EXIT_OK


def cmd_levelset(cfg: RunConfig, out: Path, quiet: bool) -> int:
    prof = _levelset(cfg, out)
    _say(quiet, f"{cfg.name}: verdict={prof.verdict} ratio_max={prof.ratio_max:.6g}")
    return EXIT_OK


def cmd_rates(cfg: RunConfig, out: Path, quiet: bool) -> int:
    _say(quiet, f"{cfg.name}: {_rates_line(_rates(cfg, out))}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify,
            "levelset": cmd_levelset, "rates": cmd_rates}


def run_one(command: str, config_path, out=None, seed=None, quiet=False) -> int:
    """Run one subcommand on one config file and map failures to exit codes."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        target = cfg.output_dir(out)
        target.mkdir(parents=True, exist_ok=True)
        return COMMANDS[command](cfg, target, quiet)
    except (InputError, CapabilityError) as exc:
        log.error("%s: %s", config_path, exc)
        return EXIT_INPUT
    except KLDynError as exc:
        log.error("%s: %s", config_path, exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        log.error("%s: %s", config_path, exc)
        return EXIT_INPUT


def _run_star(args):
    command, path, out, seed, quiet, level = args
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return run_one(command, path, out, seed, quiet)


def run_batch(command: str, pattern: str, out=None, seed=None, quiet=False, workers=None) -> int:
    """Run ``command`` on every config matching ``pattern`` in parallel.

    With ``out`` each run writes to ``out/<config stem>``.  Returns the largest
    exit code.
    """
    paths = sorted(glob.glob(pattern))
    if not paths:
        log.error("no config files match %r", pattern)
        return EXIT_INPUT
    stems = [Path(p).stem for p in paths]
    if out is not None and len(set(stems)) != len(stems):
        log.error("config file names must be distinct when --out is shared")
        return EXIT_INPUT
    level = log.getEffectiveLevel()
    jobs = [(command, p, None if out is None else Path(out) / Path(p).stem, seed, quiet, level)
            for p in paths]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        codes = list(pool.map(_run_star, jobs))
    return max(codes)


def cmd_report(pattern, out, quiet: bool) -> int:
    """Merge ``rate_report.json`` files into ``summary.csv``."""
    out = Path(out) if out is not None else Path.cwd()
    if pattern is not None:
        found = []
        for p in sorted(glob.glob(pattern)):
            p = Path(p)
            found += sorted(p.rglob("rate_report.json")) if p.is_dir() else [p]
    else:
        found = sorted(out.rglob("rate_report.json"))
    if not found:
        log.error("no rate_report.json found")
        return EXIT_INPUT
    rows = []
    for path in found:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            log.error("%s: %s", path, exc)
            return EXIT_INPUT
        law = data.get("empirical_law") or {}

        def verdict(env):
            return "" if env is None else ("pass" if env.get("passed") else "fail")

        rows.append({
            "potential": data.get("potential", ""), "gamma": data.get("gamma", ""),
            "classification": data.get("classification", ""),
            "theta_hat": "" if data.get("theta_hat") is None else data["theta_hat"],
            "law": law.get("law", ""), "param": "" if law.get("param") is None else law["param"],
            "envelope_automaj": verdict(data.get("envelope_automaj")),
            "envelope_majgrad1": verdict(data.get("envelope_majgrad1")),
        })
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    _say(quiet, f"summary of {len(rows)} runs written to {out / 'summary.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kldyn",
        description="Damped gradient systems: simulation, quasi-gradient certificates, "
                    "level-set profiles and convergence-rate checks.",
        epilog="Exit codes: 0 completed, 1 invalid input or unsupported analysis, "
               "2 numerical failure or certificate not established.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "report"]:
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--config", help="TOML run configuration")
            p.add_argument("--seed", type=int, help="override the config seed")
            p.add_argument("--workers", type=int, default=None,
                           help="parallel workers for --batch (default: CPU count)")
        p.add_argument("--batch", metavar="GLOB",
                       help="config files to run in parallel" if name != "report"
                       else "run directories or rate_report.json files to merge")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)
    if args.command == "report":
        return cmd_report(args.batch, args.out, args.quiet)
    if (args.config is None) == (args.batch is None):
        log.error("give exactly one of --config or --batch")
        return EXIT_INPUT
    if args.batch is not None:
        return run_batch(args.command, args.batch, args.out, args.seed, args.quiet, args.workers)
    return run_one(args.command, args.config, args.out, args.seed, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
