"""Command-line entry point: ``popgame simulate|certify|verify <scenario.json...>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import scenario as sc
from .certify import certify_weighted_contraction, sproc_soundness_check
from .core import SupplyRate
from .edm import verify_delta_dissipativity
from .games import Box
from .pdm import verify_pdm_dissipativity
from .sim import NumericalError, detect_rest_point, integrate_closed_loop, integrate_memoryless, lyapunov_monitor

log = logging.getLogger("popgame")

EXIT_OK = 0
EXIT_REFUTED = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4

CERTIFY_CODES = {"certified": EXIT_OK, "refuted": EXIT_REFUTED, "inconclusive": EXIT_INCONCLUSIVE}


def cmd_simulate(scenario: sc.Scenario, out: Path) -> int:
    """Integrate the closed loop; write ``trajectory.csv`` and ``summary.json``."""
    x0 = scenario.initial_state()
    try:
        if scenario.pdm is None:
            traj = integrate_memoryless(scenario.game, scenario.protocol, x0, scenario.horizon,
                                        scenario.step, scenario.stride)
        else:
            traj = integrate_closed_loop(scenario.pdm, scenario.protocol, x0,
                                         scenario.initial_pdm_state(x0), scenario.horizon,
                                         scenario.step, scenario.stride)
    except NumericalError as exc:
        log.error("%s: numerical abort: %s", scenario.name, exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("%s: invalid initial condition: %s", scenario.name, exc)
        return EXIT_INPUT
    report = lyapunov_monitor(traj, scenario.monitor_tolerance)
    rest = detect_rest_point(traj, scenario.tolerance)
    residual = traj.velocity_norms[-1]
    if traj.pdm_rate_norms is not None:
        residual += traj.pdm_rate_norms[-1]
    final_gap = float(traj.nash_gaps[-1])
    summary = {
        "converged": bool(rest is not None and final_gap <= scenario.tolerance),
        "final_nash_gap": final_gap,
        "lyapunov_violations": len(report.flags),
        "rate_violations": report.rate_violations,
        "final_time": float(traj.times[-1]),
        "final_residual": float(residual),
        "samples": len(traj),
        "step_halvings": traj.halvings,
    }
    sc.validate(summary, "summary")
    out.mkdir(parents=True, exist_ok=True)
    sc.write_csv(out / "trajectory.csv", traj.csv_header(), traj.csv_rows())
    sc.write_json(out / "summary.json", summary)
    log.info("%s: converged=%s gap=%.3e", scenario.name, summary["converged"], final_gap)
    return EXIT_OK


def run_certification(scenario: sc.Scenario):
    envelope = scenario.game.envelope()
    if envelope is None:
        return None
    return certify_weighted_contraction(
        envelope, scenario.structure, weights=scenario.certify_weights, budget=scenario.budget,
        margin=scenario.margin, game=scenario.game, seed=scenario.seed)


def cmd_certify(scenario: sc.Scenario, out: Path) -> int:
    """Search a weighted-contraction certificate; write ``certificate.json``."""
    cert = run_certification(scenario)
    if cert is None:
        log.error("%s: game has no Jacobian envelope to certify", scenario.name)
        return EXIT_INPUT
    out.mkdir(parents=True, exist_ok=True)
    sc.write_json(out / "certificate.json", {"scenario": scenario.name, **cert.to_json()})
    log.info("%s: %s (lambda_max=%.3e)", scenario.name, cert.verdict, cert.lambda_max)
    return CERTIFY_CODES[cert.verdict]


def cmd_verify(scenario: sc.Scenario, out: Path) -> int:
    """Run the sampling checks; write ``verify.json``; exit 0 iff there are no violations."""
    s = scenario.structure
    weights = (np.asarray(scenario.certify_weights, dtype=float) if scenario.certify_weights
               else scenario.game.contraction_weights())
    supply = SupplyRate.weighted(s, weights)
    protocol = scenario.protocol
    sigma_fn = None
    if scenario.corrupt_sigma:
        sigma_fn = lambda x, p, w=None: -protocol.sigma(x, p, w)
    reports = {}
    edm = verify_delta_dissipativity(protocol, supply, scenario.verify_samples, scenario.seed,
                                     weights=weights, sigma_fn=sigma_fn)
    reports["edm"] = edm.to_json()
    failed = not edm.ok
    if scenario.pdm is not None:
        pdm = verify_pdm_dissipativity(scenario.pdm, supply, scenario.verify_samples, scenario.seed)
        reports["pdm"] = pdm.to_json()
        failed |= not pdm.ok
    envelope = scenario.game.envelope()
    if isinstance(envelope, Box):
        cert = run_certification(scenario)
        if cert.certified:
            snd = sproc_soundness_check(cert, envelope, s, scenario.soundness_samples, scenario.seed)
            reports["soundness"] = snd.to_json()
            failed |= not snd.ok
        else:
            reports["soundness"] = {"skipped": f"no certificate ({cert.verdict})"}
    out.mkdir(parents=True, exist_ok=True)
    sc.write_json(out / "verify.json", {"scenario": scenario.name, "ok": not failed, **reports})
    log.info("%s: verify %s", scenario.name, "ok" if not failed else "FAILED")
    return EXIT_REFUTED if failed else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify, "verify": cmd_verify}


def _run_one(command: str, path: str, out_root: Path, overrides: dict) -> int:
    try:
        scenario = sc.load(path).with_overrides(**overrides)
    except sc.ScenarioError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    out = out_root / Path(path).stem
    return COMMANDS[command](scenario, out)


def thread_cap(n_jobs: int) -> int:
    env = os.environ.get("POPGAME_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer POPGAME_THREADS=%r", env)
    return max(1, min(cap, n_jobs))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popgame",
        description="Simulate, certify and verify population games under evolutionary dynamics.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("scenarios", nargs="+", metavar="scenario.json",
                        help="scenario files; a missing path falls back to the bundled scenario "
                             "of the same name")
    parser.add_argument("--out", default="popgame-out",
                        help="output root; each scenario writes to OUT/<scenario name>/")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--step", type=float, help="override the integration step")
    parser.add_argument("--horizon", type=float, help="override the simulation horizon")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.step is not None and args.step <= 0:
        log.error("--step must be positive")
        return EXIT_INPUT
    if args.horizon is not None and args.horizon < 0:
        log.error("--horizon must be nonnegative")
        return EXIT_INPUT
    overrides = {"seed": args.seed, "step": args.step, "horizon": args.horizon}
    out_root = Path(args.out)
    stems = [Path(p).stem for p in args.scenarios]
    if len(set(stems)) != len(stems):
        log.error("scenario names must be distinct in a batch (outputs go to OUT/<name>/)")
        return EXIT_INPUT
    jobs = [(args.command, p, out_root, overrides) for p in args.scenarios]
    if len(jobs) == 1:
        codes = [_run_one(*jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=thread_cap(len(jobs))) as pool:
            codes = list(pool.map(lambda job: _run_one(*job), jobs))
    # first failure in input order decides the exit status
    return next((c for c in codes if c != EXIT_OK), EXIT_OK)


if __name__ == "__main__":
    sys.exit(main())
