"""Command line experiment runner.

Exit codes: 0 success, 1 a verification check failed, 2 invalid
configuration or unsupported combination, 3 solver failure, 4 missing or
tampered artifacts.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

from . import __version__, torus
from .config import ConfigError, load_config, parse_override
from .envelope import OracleError, envelope_beta_limit, envelope_psor, rooftop
from .fieldio import (
    ArtifactError,
    archive_envelope,
    archive_solution,
    archive_sweep,
    load_envelope,
    load_sweep,
    write_jsonl,
)
from .newton import SolverError, continuation_sweep, solve_beta
from .presets import PresetError, make_obstacle
from .torus import MetricError, build_geometry

log = logging.getLogger("pshenv")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SOLVER, EXIT_ARTIFACT = 0, 1, 2, 3, 4


class UsageError(Exception):
    """Valid keys, unsupported combination."""


def _versions() -> dict:
    out = dict(pshenv=__version__, python=platform.python_version(), platform=platform.platform())
    for dist in ("numpy", "scipy", "numba", "matplotlib"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _setup(args, cmd):
    overrides = dict(parse_override(s) for s in args.set or [])
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.threads is not None:
        overrides["run.threads"] = args.threads
    cfg = load_config(args.config, overrides)
    out = Path(args.out or Path("runs") / cmd)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.resolved.toml")
    (out / "versions.json").write_text(json.dumps(_versions(), indent=2, sort_keys=True) + "\n")
    torus.set_fft_workers(cfg["run.threads"])
    geom = build_geometry(cfg["geometry.n"], cfg.metric())
    return cfg, out, geom


def _obstacle(cfg, geom, spec=None):
    return make_obstacle(spec or cfg["obstacle.preset"], geom, cfg["geometry.N"], cfg["run.seed"])


def _solver_kw(cfg) -> dict:
    return dict(tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                dense_limit=cfg["solver.dense_limit"])


def _sweep(cfg, v):
    return continuation_sweep(v, cfg["beta.schedule"], **_solver_kw(cfg))


def _require_n1(cfg, what):
    if cfg["geometry.n"] != 1:
        raise UsageError(f"{what} needs geometry.n = 1: the complementarity oracle is "
                         "only available in complex dimension one")


def _contact_kappa(cfg):
    k = cfg["envelope.contact_kappa"]
    return None if k == "auto" else k


def _eps(cfg):
    e = cfg["envelope.eps"]
    return None if e == "auto" else e


def cmd_solve(args) -> int:
    cfg, out, geom = _setup(args, "solve")
    v = _obstacle(cfg, geom)
    beta = cfg["beta.value"]
    # cold start at the bottom of a doubling ladder, warm starts up to beta
    ladder = [float(2**k) for k in range(0, 64) if 2**k < beta] + [beta]
    sweep = continuation_sweep(v, ladder, **_solver_kw(cfg))
    sol = sweep[-1]
    archive_solution(out / "solution", sol, cfg["run.binary"])
    write_jsonl(out / "newton_log.jsonl", [r for s in sweep.solutions for r in s.records])
    print(f"beta={sol.beta:g} residual={sol.residual_sup:.3e} newton_iters={sol.newton_iters} "
          f"sup|u_beta|={sol.u_beta.sup_norm():.6e} -> {out / 'solution'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, out, geom = _setup(args, "sweep")
    v = _obstacle(cfg, geom)
    sweep = _sweep(cfg, v)
    archive_sweep(out / "sweep", sweep, cfg["run.binary"])
    with open(out / "gaps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "gap_to_previous", "newton_iters", "residual", "positivity_margin"])
        for i, s in enumerate(sweep.solutions):
            gap = sweep.successive_gaps[i - 1] if i else ""
            w.writerow([s.beta, gap, s.newton_iters, s.residual_sup, s.positivity_margin])
    print(f"{len(sweep)} betas, final residual {sweep[-1].residual_sup:.3e} -> {out / 'sweep'}")
    return EXIT_OK


def _run_envelope(cfg, geom, method):
    if method == "psor":
        _require_n1(cfg, "envelope.method = psor")
        v = _obstacle(cfg, geom)
        return envelope_psor(v, tol=cfg["envelope.psor_tol"], omega=cfg["envelope.omega"])
    if method == "beta-limit":
        v = _obstacle(cfg, geom)
        return envelope_beta_limit(_sweep(cfg, v), contact_kappa=_contact_kappa(cfg))
    specs = [cfg["obstacle.preset"], *cfg["obstacle.extra"]]
    vs = [_obstacle(cfg, geom, s) for s in specs]
    inner = cfg["envelope.rooftop_method"]
    if inner == "psor":
        _require_n1(cfg, "envelope.rooftop_method = psor")
        return rooftop(vs, "psor", tol=cfg["envelope.psor_tol"], omega=cfg["envelope.omega"])
    return rooftop(vs, "beta-limit", eps=_eps(cfg), schedule=cfg["beta.schedule"],
                   contact_kappa=_contact_kappa(cfg), **_solver_kw(cfg))


def _report_envelope(env, directory):
    full = bool(env.contact_mask.all())
    print(f"method={env.method} contact_fraction={env.contact_mask.mean():.4f} "
          f"full_contact={full} sup|u_theta|={env.u_theta.sup_norm():.3e} -> {directory}")


def cmd_envelope(args, method=None, name="envelope") -> int:
    cfg, out, geom = _setup(args, name)
    env = _run_envelope(cfg, geom, method or cfg["envelope.method"])
    archive_envelope(out / name, env, cfg["run.binary"])
    if cfg["run.figures"]:
        from .plotting import plot_envelope

        plot_envelope(env, out / f"{name}.png")
    _report_envelope(env, out / name)
    return EXIT_OK


def cmd_rooftop(args) -> int:
    return cmd_envelope(args, "rooftop", "rooftop")


def cmd_oracle(args) -> int:
    return cmd_envelope(args, "psor", "oracle")


def _write_table(rows, path):
    cols = ["beta", "e_beta", "c_beta", "sup_lambda1", "sup_q", "sup_third", "gap",
            "newton_iters", "residual"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else repr(float(r[k]))) for k in cols})


def cmd_verify(args) -> int:
    from .suite import run_checks

    cfg, out, geom = _setup(args, "verify")
    src = cfg["verify.archive"]
    if src:
        src = Path(src)
        sweep = load_sweep(src / "sweep")
        oracle = load_envelope(src / "oracle") if (src / "oracle").exists() else None
        if oracle is None and geom.complex_dim == 1:
            raise ArtifactError(f"missing oracle archive in {src}")
    else:
        v = _obstacle(cfg, geom)
        sweep = _sweep(cfg, v)
        archive_sweep(out / "sweep", sweep, cfg["run.binary"])
        oracle = None
        if geom.complex_dim == 1:
            oracle = envelope_psor(v, tol=cfg["envelope.psor_tol"], omega=cfg["envelope.omega"])
            archive_envelope(out / "oracle", oracle, cfg["run.binary"])
    res = run_checks(sweep, oracle, cfg)
    rep = out / "report"
    rep.mkdir(exist_ok=True)
    write_jsonl(rep / "report.jsonl", [r.as_dict() for r in res.records])
    _write_table(res.table, rep / "rates.csv")
    if res.envelope is not None:
        archive_envelope(out / "envelope", res.envelope, cfg["run.binary"])
    if cfg["run.figures"]:
        from . import plotting

        kappa = res.rate.kappa if res.rate is not None else None
        plotting.plot_rate(res.table, rep / "rate.png", kappa, self_reference=oracle is None)
        plotting.plot_hessian(res.table, rep / "hessian.png")
        plotting.plot_q(res.table, rep / "q.png")
        env = oracle if oracle is not None else res.envelope
        if env is not None:
            plotting.plot_envelope(env, rep / "envelope.png")
    width = max(len(r.name) for r in res.records)
    for r in res.records:
        meas = "-" if r.measured is None else f"{r.measured:.4g}"
        thr = "-" if r.threshold is None else f"{r.threshold:.4g}"
        print(f"{r.name:<{width}}  {r.status:<7}  measured={meas:<11} threshold={thr}")
    print(f"report -> {rep / 'report.jsonl'}")
    return EXIT_OK if res.passed else EXIT_CHECKS


COMMANDS = {
    "solve": (cmd_solve, "solve the beta-equation at beta.value"),
    "sweep": (cmd_sweep, "continuation over beta.schedule"),
    "envelope": (cmd_envelope, "envelope by envelope.method"),
    "rooftop": (cmd_rooftop, "rooftop envelope of obstacle.preset and obstacle.extra"),
    "verify": (cmd_verify, "run the verification suite and write the report"),
    "oracle": (cmd_oracle, "complementarity oracle (n = 1)"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="output directory (default runs/<command>)")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--threads", type=int, help="overrides run.threads")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. --set geometry.N=128")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="pshenv", description=__doc__.splitlines()[0],
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, help=help_, parents=[common])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except (ConfigError, PresetError, MetricError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OracleError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
