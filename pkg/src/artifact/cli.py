"""Command-line front end.

Exit codes: 0 on success, 2 when some sweep cells failed or a margin is
infeasible, 1 on any fatal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .bounds import (
    BOUND_CSV_HEADER,
    CodeParams,
    gallager_matrix_bound,
    optimized_bound,
    rare_transition_bound,
    type_sum_bound,
)
from .channel import (
    ContinuousDynamics,
    FscSpec,
    block_generator_rates,
    csi_capacity,
    gilbert_elliott_generator,
    state_law,
)
from .exact import failure_matrix_exact, undetected_matrix_exact
from .montecarlo import SimConfig, coupled_dominance_experiment, simulate_queue, simulate_random_code_failure
from .occupation import continuous_occupancy_law, discrete_occupancy_law
from .queueing import QUEUE_CSV_HEADER, SuccessMatrix, TrafficSpec, completion_probability, queue_tail
from .study import (
    CellResult,
    RunConfig,
    calibrate_traffic,
    cell_failure,
    emit_figure_data,
    evaluate_cell,
    load_config,
    run_sweep,
    select_margin,
    write_csv,
)

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override the config file)")
    g.add_argument("--config", help="key = value file with sections")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--eps1", type=float)
    g.add_argument("--eps2", type=float)
    g.add_argument("--decoder", choices=("ml", "md"))
    g.add_argument("--target", type=float, help="undetected-error target for margin selection")
    g.add_argument("--rho-step", dest="rho_step", type=float)
    g.add_argument("--conversion", dest="bound_conversion", choices=("fixed", "linear", "log"))
    g.add_argument("--mu", dest="bound_mu", type=float, help="generator rate out of state 1 for 'fixed'")
    g.add_argument("--xi", dest="bound_xi", type=float, help="generator rate out of state 2 for 'fixed'")
    g.add_argument("--lam", type=float, help="arrival rate in packets per channel use")
    g.add_argument("--p-geo", dest="p_geo", type=float)
    g.add_argument("--threshold", type=int)
    g.add_argument("--jobs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--output", "-o", help="write CSV here instead of stdout")


def _cell(p: argparse.ArgumentParser, pipeline: bool = False) -> None:
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--rate", type=float, required=True, help="information bits per code bit")
    if pipeline:
        p.add_argument("--pipeline", choices=("exact", "bound"), default="exact")


OVERRIDES = ("alpha", "beta", "eps1", "eps2", "decoder", "target", "rho_step", "bound_conversion", "bound_mu",
             "bound_xi", "lam", "p_geo", "threshold", "jobs", "seed", "pipeline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    ch = sub.add_parser("channel", help="channel summary").add_subparsers(dest="action", required=True)
    p = ch.add_parser("info", help="stationary law, CSI capacity and generator conversions")
    _common(p)
    p.add_argument("--N", type=int, help="block length for the generator conversions")
    p.add_argument("--spec", help="channel JSON file instead of the two-state parameters")

    bd = sub.add_parser("bound", help="error-exponent bound matrices").add_subparsers(dest="action", required=True)
    for name in ("gallager", "type-sum", "rare"):
        p = bd.add_parser(name)
        _common(p)
        _cell(p)
        p.add_argument("--rho", type=float, help="fixed rho; optimized per entry when omitted")
        p.add_argument("--averaged", action="store_true", help="print the stationary-averaged value only")

    ex = sub.add_parser("exact", help="exact random-coding failure matrices").add_subparsers(dest="action", required=True)
    for name in ("ml", "md", "undetected"):
        p = ex.add_parser(name)
        _common(p)
        _cell(p)
        p.add_argument("--nu", type=float, default=0.0)
        p.add_argument("--averaged", action="store_true")

    mg = sub.add_parser("margin", help="smallest margin meeting the undetected target").add_subparsers(dest="action", required=True)
    p = mg.add_parser("select")
    _common(p)
    _cell(p, pipeline=True)

    qu = sub.add_parser("queue", help="analytic queue tail for one cell").add_subparsers(dest="action", required=True)
    p = qu.add_parser("tail")
    _common(p)
    _cell(p, pipeline=True)
    p.add_argument("--margin", type=float, help="skip margin selection and use this nu or tau")

    mc = sub.add_parser("mc", help="Monte Carlo checks").add_subparsers(dest="action", required=True)
    p = mc.add_parser("code", help="random-codebook simulation against the exact matrix")
    _common(p)
    _cell(p)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=100_000)
    for name in ("queue", "dominance"):
        p = mc.add_parser(name)
        _common(p)
        _cell(p, pipeline=(name == "queue"))
        p.add_argument("--margin", type=float)
        p.add_argument("--steps", type=int, default=1_000_000)
        p.add_argument("--q-max", type=int, default=10)

    p = sub.add_parser("sweep", help="margin selection and queue tail over the (N, rate) grid")
    _common(p)
    p.add_argument("--pipeline", choices=("exact", "bound"))
    p.add_argument("--summary", help="write the JSON summary here instead of stderr")

    p = sub.add_parser("figure", help="CSV data for one figure")
    _common(p)
    p.add_argument("figure_id", type=int, choices=(2, 3, 4, 5))

    p = sub.add_parser("calibrate", help="fit p_geo to one published queue tail")
    _common(p)
    _cell(p, pipeline=True)
    p.add_argument("--margin", type=float, required=True)
    p.add_argument("--tail", type=float, required=True, help="published P(Q > threshold)")
    return parser


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in OVERRIDES}
    return load_config(getattr(args, "config", None), overrides)


def _emit(args, text: str) -> None:
    if getattr(args, "output", None):
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _matrix_rows(kind: str, code: CodeParams, values: np.ndarray, tau: float | None = None) -> list[list[str]]:
    tau_s = "" if tau is None else f"{tau:.12g}"
    return [[kind, str(code.N), f"{code.R_bits:.12g}", "", "", tau_s, str(i + 1), str(j + 1), f"{values[i, j]:.12g}"]
            for i in range(values.shape[0]) for j in range(values.shape[1])]


def cmd_channel(args, cfg: RunConfig) -> int:
    if args.spec:
        with open(args.spec) as fh:
            spec = FscSpec.from_json(fh.read())
    else:
        spec = cfg.channel
    doc = {
        "crossover": list(spec.crossover),
        "dynamics": spec.dynamics.kind,
        "matrix": spec.dynamics.matrix.tolist(),
        "stationary": state_law(spec).tolist(),
        "csi_capacity_bits": csi_capacity(spec),
    }
    if args.N and spec.is_discrete and spec.num_states == 2:
        P = spec.dynamics.matrix
        doc["generator_rates"] = {c: block_generator_rates(P[0, 1], P[1, 0], args.N, c) for c in ("log", "linear")}
    _emit(args, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_bound(args, cfg: RunConfig) -> int:
    code = CodeParams(args.N, args.rate)
    if args.action == "rare":
        mu, xi = cfg.bound_rates(args.N)
        spec = FscSpec((cfg.eps1, cfg.eps2), ContinuousDynamics(gilbert_elliott_generator(mu, xi)))
        law = continuous_occupancy_law(mu, xi)
        kind, fn = "rare_transition", lambda r: rare_transition_bound(law, spec, code, r)
    else:
        spec = cfg.channel
        if args.action == "gallager":
            kind, fn = "gallager_matrix", lambda r: gallager_matrix_bound(spec, code, r)
        else:
            P = spec.dynamics.matrix
            law = discrete_occupancy_law(P[0, 1], P[1, 0], args.N)
            kind, fn = "type_sum", lambda r: type_sum_bound(law, spec, code, r)
    result = optimized_bound(kind, fn, code, args.rho, cfg.rho_step)
    if args.averaged:
        _emit(args, f"{result.averaged(state_law(spec)):.12g}\n")
    else:
        _emit(args, write_csv(BOUND_CSV_HEADER, result.csv_rows()))
    return EXIT_OK


def cmd_exact(args, cfg: RunConfig) -> int:
    code = CodeParams(args.N, args.rate)
    spec = cfg.channel
    if args.action == "undetected":
        values = undetected_matrix_exact(spec, code, cfg.rule(args.nu))
        kind = f"exact_undetected_{cfg.decoder}"
    else:
        values = failure_matrix_exact(spec, code, replace(cfg, decoder=args.action).rule(args.nu))
        kind = f"exact_{args.action}"
    if args.averaged:
        _emit(args, f"{float(state_law(spec) @ values.sum(axis=1)):.12g}\n")
    else:
        _emit(args, write_csv(BOUND_CSV_HEADER, _matrix_rows(kind, code, values, args.nu)))
    return EXIT_OK


def cmd_margin(args, cfg: RunConfig) -> int:
    code = CodeParams(args.N, args.rate)
    spec = cfg.channel if args.pipeline == "exact" else cfg.bound_channel(args.N)
    margin = select_margin(args.pipeline, spec, code, cfg.target, cfg.rule(), cfg.nu_max, cfg.tau_step,
                           cfg.tau_max, cfg.rho_step)
    kind = "nu" if args.pipeline == "exact" else "tau"
    _emit(args, json.dumps({"N": args.N, "R_bits": args.rate, "margin_kind": kind, "margin": margin,
                            "feasible": margin is not None}) + "\n")
    return EXIT_OK if margin is not None else EXIT_PARTIAL


def _cell_csv(args, cell: CellResult) -> int:
    _emit(args, write_csv(QUEUE_CSV_HEADER, [cell.csv_row()]))
    if cell.status != "ok":
        logging.warning("cell N=%d R=%.2f is %s", cell.N, cell.R_bits, cell.status)
    return EXIT_OK if cell.status in ("ok", "unstable") else EXIT_PARTIAL


def cmd_queue(args, cfg: RunConfig) -> int:
    return _cell_csv(args, evaluate_cell(cfg, args.N, args.rate, args.margin))


def cmd_mc(args, cfg: RunConfig) -> int:
    sim = SimConfig(seed=cfg.seed, trials=getattr(args, "trials", 0) or 1)
    if args.action == "code":
        code = CodeParams(args.N, args.rate)
        if not code.is_integral:
            raise ValueError("simulation needs an integer number of codewords (N * rate integral)")
        M = int(round(2 ** code.info_bits))
        rule = cfg.rule(args.nu)
        fail, und = simulate_random_code_failure(cfg.channel, args.N, M, rule, sim)
        exact = failure_matrix_exact(cfg.channel, code, rule)
        rows = [[str(i + 1), str(j + 1), f"{exact[i, j]:.12g}", f"{fail.value[i, j]:.12g}",
                 f"{fail.stderr[i, j]:.12g}"] for i in range(2) for j in range(2)]
        _emit(args, write_csv(["i", "j", "exact", "simulated", "stderr"], rows))
        return EXIT_OK
    if cfg.p_geo is None:
        raise ValueError("p_geo is required (see the calibrate command)")
    traffic = TrafficSpec(cfg.lam, cfg.p_geo)
    rho_r = completion_probability(cfg.p_geo, args.rate, args.N)
    if args.action == "queue":
        margin, failure, channel = cell_failure(cfg, args.N, args.rate, args.margin)
        if failure is None:
            raise ValueError("no margin meets the target at this cell")
        success = SuccessMatrix.from_failure(channel, failure, cfg.pipeline)
        res = simulate_queue(success, traffic, rho_r, args.N, args.steps, sim, args.q_max)
        analytic = [queue_tail(success, traffic, args.rate, args.N, q).tail for q in range(args.q_max + 1)]
        rows = [[str(q), f"{analytic[q]:.12g}", f"{res.tail[q]:.12g}", f"{res.stderr[q]:.12g}"]
                for q in range(args.q_max + 1)]
        _emit(args, write_csv(["q", "analytic", "simulated", "stderr"], rows))
        return EXIT_OK
    # dominance: exact ML failures against the bound pipeline on the same per-codeword channel
    exact_cfg = replace(cfg, pipeline="exact")
    bound_cfg = replace(cfg, pipeline="bound", bound_conversion="log")
    _, f_exact, channel = cell_failure(exact_cfg, args.N, args.rate, args.margin if args.margin is not None else 0.0)
    _, f_bound, _ = cell_failure(bound_cfg, args.N, args.rate, 0.0)
    f_bound = np.minimum(np.maximum(f_bound, f_exact), channel)
    report = coupled_dominance_experiment(SuccessMatrix.from_failure(channel, f_exact),
                                          SuccessMatrix.from_failure(channel, f_bound, "bound"),
                                          traffic, rho_r, args.N, args.steps, sim, args.q_max)
    rows = [[str(q), f"{report.exact_tail[q]:.12g}", f"{report.bound_tail[q]:.12g}"] for q in range(args.q_max + 1)]
    _emit(args, write_csv(["q", "exact_tail", "bound_tail"], rows))
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    result = run_sweep(cfg)
    _emit(args, result.to_csv())
    summary = json.dumps(result.summary(), indent=2) + "\n"
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(summary)
    else:
        sys.stderr.write(summary)
    return EXIT_PARTIAL if result.partial else EXIT_OK


def cmd_figure(args, cfg: RunConfig) -> int:
    _emit(args, emit_figure_data(args.figure_id, cfg))
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    threshold = cfg.threshold
    res = calibrate_traffic(cfg, args.N, args.rate, args.margin, threshold, args.tail)
    _emit(args, json.dumps({"p_geo": res.p_geo, "tail": res.tail, "relative_residual": res.relative_residual,
                            "degenerate": res.degenerate, "message": res.message}, indent=2) + "\n")
    return EXIT_OK if (res.p_geo is not None or res.degenerate) and not res.message else EXIT_PARTIAL


COMMANDS = {"channel": cmd_channel, "bound": cmd_bound, "exact": cmd_exact, "margin": cmd_margin,
            "queue": cmd_queue, "mc": cmd_mc, "sweep": cmd_sweep, "figure": cmd_figure, "calibrate": cmd_calibrate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors are fatal, not partial
        return EXIT_OK if exc.code == 0 else EXIT_FATAL
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except Exception as exc:
        logging.getLogger("artifact").error("%s: %s", type(exc).__name__, exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
