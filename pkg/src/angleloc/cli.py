"""Command-line interface: generate, analyze, solve-sdp, simulate-blp, experiment.

Exit codes: 0 success, 2 precondition/input errors, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from angleloc import blp, experiment, rigidity, sdp
from angleloc.core import (
    Bounded,
    Exact,
    Gaussian,
    NetworkFormatError,
    load_network,
    save_network,
    synthesize_measurements,
)

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NO_CONVERGENCE = 3


def _regime(args):
    if args.regime == "exact":
        return Exact()
    if args.regime == "gaussian":
        return Gaussian(args.sigma)
    return Bounded(args.tau_max)


def _emit(doc, args):
    text = json.dumps(doc, indent=1) + "\n" if args.format == "json" else doc
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=sdp.DEFAULT_TOL)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["json", "csv"], default="json")


def _add_regime(p):
    p.add_argument("--regime", choices=["exact", "gaussian", "bounded"], default="exact")
    p.add_argument("--sigma", type=float, default=0.005)
    p.add_argument("--tau-max", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="angleloc",
                                 description="Angle-based planar sensor network localization")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a random network file")
    g.add_argument("--kind", choices=["acute_triangulated", "bilateration"],
                   default="acute_triangulated")
    g.add_argument("-n", type=int, required=True)
    g.add_argument("--n-anchors", type=int, default=3)
    g.add_argument("--extra-edges", type=int, default=0)
    _add_common(g)

    a = sub.add_parser("analyze", help="rigidity / fixability / localizability report")
    a.add_argument("--input", required=True)
    _add_common(a)

    s = sub.add_parser("solve-sdp", help="centralized SDP localization")
    s.add_argument("--input", required=True)
    s.add_argument("--decompose", action="store_true")
    s.add_argument("--rank-mode", choices=["none", "d", "lambda", "all"], default=None)
    _add_regime(s)
    _add_common(s)

    b = sub.add_parser("simulate-blp", help="distributed protocol simulation")
    b.add_argument("--input", required=True)
    b.add_argument("--max-rounds", type=int, default=None)
    _add_regime(b)
    _add_common(b)

    e = sub.add_parser("experiment", help="batch generate/solve/evaluate runs")
    e.add_argument("--kind", choices=["acute_triangulated", "bilateration", "from_file"],
                   default="acute_triangulated")
    e.add_argument("--input", default=None, help="network file for --kind from_file")
    e.add_argument("-n", type=int, default=10)
    e.add_argument("--n-anchors", type=int, default=3)
    e.add_argument("--methods", default="sdp",
                   help="comma-separated subset of sdp,sdp_decomposed,blp")
    e.add_argument("--reps", type=int, default=1)
    e.add_argument("--extra-edges", type=int, default=0)
    _add_regime(e)
    _add_common(e)
    return ap


def _cmd_generate(args) -> int:
    net = experiment.generate_network(args.kind, args.n, args.n_anchors, args.seed,
                                      extra_edges=args.extra_edges)
    if not args.out:
        print("--out is required for generate", file=sys.stderr)
        return EXIT_PRECONDITION
    save_network(net, args.out)
    return EXIT_OK


def _cmd_analyze(args) -> int:
    net = load_network(args.input)
    report = rigidity.is_infinitesimally_angle_rigid(net.grounded_framework())
    cert = rigidity.certify_angle_fixability(net.grounded_framework())
    localizable, reason = rigidity.is_angle_localizable(net)
    blp_ok, blp_reason = blp.check_blp_preconditions(net)
    _emit({
        "n": net.n,
        "n_anchors": net.n_anchors,
        "jacobian_rank": report.jacobian_rank,
        "required_rank": report.required_rank,
        "infinitesimally_rigid": report.infinitesimally_rigid,
        "fixability": cert.status,
        "fixability_reason": cert.reason,
        "angle_localizable": localizable,
        "localizability_reason": reason,
        "blp_applicable": blp_ok,
        "blp_reason": blp_reason,
    }, args)
    return EXIT_OK


def _cmd_solve_sdp(args) -> int:
    net = load_network(args.input)
    regime = _regime(args)
    data = synthesize_measurements(net, regime, seed=args.seed)
    if isinstance(regime, Exact):
        prog = sdp.build_exact_program(net, data)
    elif isinstance(regime, Bounded):
        prog = sdp.build_disturbed_program(net, data)
    else:
        prog = sdp.build_noisy_program(net, data)
    if args.rank_mode is not None:
        prog = sdp.apply_rank_mode(prog, args.rank_mode)
    if args.decompose:
        prog = sdp.decompose_program(prog, net)
    if prog.rank_targets:
        sol = sdp.iterative_rank_minimization(prog, tol=args.tol)
    else:
        sol = sdp.solve(prog, tol=args.tol)
    if sol.status == "infeasible":
        _emit({"status": "infeasible"}, args)
        return EXIT_NO_CONVERGENCE
    est, diag = sdp.extract_positions(sol, net, prog)
    truth = net.framework.config[net.n_anchors:]
    _emit({
        "status": sol.status,
        "positions": {str(i): list(map(float, est[idx]))
                      for idx, i in enumerate(net.unknowns)},
        "error": experiment.evaluate(truth, est),
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "iterations": sol.iterations,
        "rank_trace": sol.rank_trace,
        "eigenvalues": {k: list(map(float, v)) for k, v in diag.eigenvalues.items()},
        "rank_y": diag.rank_y,
        "rank_d": diag.rank_d,
        "rank_z": diag.rank_z,
        "gram_residual": diag.gram_residual,
        "verdict": diag.verdict,
        "wall_time_s": sol.wall_time,
    }, args)
    return EXIT_OK


def _cmd_simulate_blp(args) -> int:
    net = load_network(args.input)
    ok, reason = blp.check_blp_preconditions(net)
    world = blp.build_world(net, _regime(args), seed=args.seed)
    stalled = None
    try:
        result = blp.run_blp(world, max_rounds=args.max_rounds)
    except blp.Stalled as exc:
        stalled = exc
        result = blp.BlpResult(exc.logs, np.full((net.n, 2), np.nan), None, ())
    doc = {
        "preconditions": {"ok": ok, "reason": reason},
        "rounds": [{
            "round": log.round,
            "newly_localized": list(log.newly_localized),
            "messages_sent": log.messages_sent,
            "cumulative_error": log.cumulative_error,
        } for log in result.logs],
        "converged_round": result.converged_round,
        "localized": list(result.localized),
        "stalled": None if stalled is None else {"unlocalized": stalled.unlocalized},
    }
    if stalled is None and result.converged_round is not None:
        doc["error"] = blp.localization_error(result, net)
        doc["positions"] = {str(i): list(map(float, result.positions[i - 1]))
                            for i in net.unknowns}
    _emit(doc, args)
    return EXIT_OK if stalled is None else EXIT_NO_CONVERGENCE


def _cmd_experiment(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    spec = experiment.ExperimentSpec(
        generator=args.kind, n=args.n, n_a=args.n_anchors, regime=_regime(args),
        methods=methods, seed=args.seed, repetitions=args.reps,
        path=args.input, tol=args.tol, extra_edges=args.extra_edges)
    rows = experiment.run_experiment(spec)
    if args.format == "csv":
        args.format = "csv"
        _emit(experiment.rows_to_csv(rows), args)
    else:
        _emit([r.__dict__ for r in rows], args)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "analyze": _cmd_analyze,
        "solve-sdp": _cmd_solve_sdp,
        "simulate-blp": _cmd_simulate_blp,
        "experiment": _cmd_experiment,
    }
    try:
        return handlers[args.command](args)
    except (NetworkFormatError, FileNotFoundError, ValueError,
            experiment.GenerationFailed, sdp.EmptyAnchorSet,
            sdp.NotDecomposable, blp.CollinearBasis, blp.CollinearRays) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (sdp.NoConvergence, sdp.NumericalFailure, blp.Stalled) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
