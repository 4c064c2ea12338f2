"""Experiment layer: margin selection, per-cell pipelines, sweeps, calibration, figure data.

A *cell* is one ``(N, R_bits)`` pair. The exact pipeline picks the smallest
integer margin ``nu`` that keeps every undetected-error bound under the
target, computes exact failure probabilities and solves the queue. The
bound pipeline does the same with the exponent margin ``tau`` and the
rare-transition bounds.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Literal, Sequence

import numpy as np
from scipy import optimize

from .bounds import (
    CodeParams,
    gallager_matrix_bound,
    max_undetected_bound,
    optimized_bound,
    rare_transition_bound,
    undetected_and_error_bounds,
)
from .channel import (
    ContinuousDynamics,
    FscSpec,
    block_generator_rates,
    build_gilbert_elliott,
    expm_taylor,
    gilbert_elliott_generator,
    sampled_two_state,
    stationary_distribution,
)
from .exact import DecoderRule, failure_matrix_exact, undetected_matrix_exact
from .occupation import continuous_occupancy_law, discrete_occupancy_law
from .queueing import QUEUE_CSV_HEADER, SuccessMatrix, TrafficSpec, UnstableQueueError, queue_tail

log = logging.getLogger(__name__)

Pipeline = Literal["exact", "bound"]
RATES = tuple(round(0.25 + 0.05 * k, 2) for k in range(11))


@dataclass(frozen=True)
class RunConfig:
    """Everything a sweep needs; every field has a documented default."""

    alpha: float = 0.0533
    beta: float = 0.08
    eps1: float = 0.01
    eps2: float = 0.1
    N_list: tuple[int, ...] = (75, 125, 170, 225)
    rates: tuple[float, ...] = RATES
    pipeline: Pipeline = "exact"
    decoder: Literal["ml", "md"] = "ml"
    target: float = 1e-5
    nu_max: int = 64
    tau_step: float = 0.001
    tau_max: float = 1.0
    rho_step: float = 0.01
    bound_conversion: Literal["fixed", "linear", "log"] = "fixed"
    bound_mu: float = 4.0
    bound_xi: float = 6.0
    bound_form: Literal["continuous", "discrete"] = "continuous"
    lam: float = 1.0 / 575.0
    p_geo: float | None = None
    threshold: int = 5
    fractional_cells: Literal["compute", "skip"] = "skip"
    jobs: int = 1
    seed: int = 20240601

    @property
    def channel(self) -> FscSpec:
        return build_gilbert_elliott(self.alpha, self.beta, self.eps1, self.eps2)

    def rule(self, nu: float = 0.0) -> DecoderRule:
        return DecoderRule.ml(self.eps1, self.eps2, nu) if self.decoder == "ml" else DecoderRule.md(nu)

    def bound_rates(self, N: int) -> tuple[float, float]:
        return block_generator_rates(self.alpha, self.beta, N, self.bound_conversion,
                                     (self.bound_mu, self.bound_xi))

    def bound_channel(self, N: int) -> FscSpec:
        mu, xi = self.bound_rates(N)
        return FscSpec((self.eps1, self.eps2), ContinuousDynamics(gilbert_elliott_generator(mu, xi)))

    def cells(self) -> list[tuple[int, float]]:
        out = []
        for N in self.N_list:
            for r in self.rates:
                if not CodeParams(N, r).is_integral:
                    if self.fractional_cells == "skip":
                        log.warning("skipping cell N=%d R=%.2f: N*R is not an integer", N, r)
                        continue
                    log.info("cell N=%d R=%.2f has fractional N*R; M = 2^(N R) taken as real", N, r)
                out.append((N, r))
        return out


_SECTIONS = {
    "channel": ("alpha", "beta", "eps1", "eps2"),
    "code": ("N_list", "rates", "decoder", "fractional_cells"),
    "margin": ("pipeline", "target", "nu_max", "tau_step", "tau_max", "rho_step"),
    "bound": ("bound_conversion", "bound_mu", "bound_xi", "bound_form"),
    "traffic": ("lam", "p_geo", "threshold"),
    "run": ("jobs", "seed"),
}


def _coerce(name: str, text: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    kind = types[name]
    if name in ("N_list",):
        return tuple(int(x) for x in text.replace(",", " ").split())
    if name in ("rates",):
        return tuple(float(x) for x in text.replace(",", " ").split())
    if "int" in kind and "float" not in kind:
        return int(text)
    if "float" in kind:
        if text.strip().lower() in ("", "none"):
            return None
        if "/" in text:
            num, den = text.split("/")
            return float(num) / float(den)
        return float(text)
    return text.strip()


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a ``key = value`` file with sections, then apply ``overrides``."""
    values: dict = {}
    if path:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        known = {k: s for s, keys in _SECTIONS.items() for k in keys}
        for section in parser.sections():
            for key, text in parser.items(section):
                if key not in known:
                    raise ValueError(f"unknown config key {section}.{key}")
                values[key] = _coerce(key, text)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# margin selection
# ---------------------------------------------------------------------------


def _bound_law(spec: FscSpec, N: int):
    if spec.is_discrete:
        P = spec.dynamics.matrix
        return discrete_occupancy_law(P[0, 1], P[1, 0], N)
    Q = spec.dynamics.matrix
    return continuous_occupancy_law(Q[0, 1], Q[1, 0])


def _smallest_index(ok, hi: int) -> int | None:
    """Smallest ``k`` in ``[0, hi]`` with ``ok(k)`` for a monotone predicate."""
    if ok(0):
        return 0
    if not ok(hi):
        return None
    lo = 0
    step = 1
    while step < hi and not ok(step):
        lo = step
        step *= 2
    hi = min(step, hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def select_margin(pipeline: Pipeline, spec: FscSpec, code: CodeParams, target: float,
                  rule: DecoderRule | None = None, nu_max: int = 64, tau_step: float = 0.001,
                  tau_max: float = 1.0, rho_step: float = 0.01) -> float | None:
    """Smallest margin whose worst undetected-error bound is at most ``target``.

    ``nu`` is searched over integers for the exact pipeline, ``tau`` over a
    grid of step ``tau_step`` for the bound pipeline. Returns None when no
    margin in range meets the target.
    """
    if not 0.0 < target <= 1.0:
        raise ValueError("target must lie in (0, 1]")
    if pipeline == "exact":
        base = rule or DecoderRule.ml(*spec.crossover)
        ok = lambda nu: undetected_matrix_exact(spec, code, replace(base, nu=float(nu))).max() <= target
        nu = _smallest_index(ok, nu_max)
        return None if nu is None else float(nu)
    law = _bound_law(spec, code.N)
    ok = lambda k: max_undetected_bound(law, spec, code, k * tau_step, rho_step) <= target
    k = _smallest_index(ok, int(round(tau_max / tau_step)))
    return None if k is None else round(k * tau_step, 12)


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    N: int
    R_bits: float
    margin_kind: str
    margin_value: float | None
    threshold: int
    tail_probability: float
    drift: float
    residual: float
    status: str  # ok | infeasible | unstable | error
    failure: np.ndarray | None = field(default=None, compare=False)

    def csv_row(self) -> list[str]:
        mv = "" if self.margin_value is None else f"{self.margin_value:.12g}"
        return [str(self.N), f"{self.R_bits:.12g}", self.margin_kind, mv, str(self.threshold),
                f"{self.tail_probability:.12g}", f"{self.drift:.12g}", f"{self.residual:.12g}"]


def cell_failure(config: RunConfig, N: int, R_bits: float, margin: float | None = None):
    """Margin, failure matrix and per-codeword channel transition for one cell.

    The margin is selected unless given. Returns ``(margin, failure, channel)``
    with ``failure`` None when no margin meets the target.
    """
    code = CodeParams(N, R_bits)
    if config.pipeline == "exact":
        spec = config.channel
        if margin is None:
            margin = select_margin("exact", spec, code, config.target, config.rule(), config.nu_max)
        channel = np.linalg.matrix_power(spec.dynamics.matrix, N)
        if margin is None:
            return None, None, channel
        return margin, failure_matrix_exact(spec, code, config.rule(margin)), channel
    spec = config.bound_channel(N)
    Q = spec.dynamics.matrix
    channel = expm_taylor(Q)
    if config.bound_form == "discrete":
        a, b = sampled_two_state(Q[0, 1], Q[1, 0], N)
        spec = build_gilbert_elliott(a, b, config.eps1, config.eps2)
        channel = np.linalg.matrix_power(spec.dynamics.matrix, N)
    if margin is None:
        margin = select_margin("bound", spec, code, config.target, tau_step=config.tau_step,
                               tau_max=config.tau_max, rho_step=config.rho_step)
    if margin is None:
        return None, None, channel
    bounds = undetected_and_error_bounds(_bound_law(spec, N), spec, code, margin, config.target, config.rho_step)
    return margin, bounds.failure.values, channel


def evaluate_cell(config: RunConfig, N: int, R_bits: float, margin: float | None = None) -> CellResult:
    """Margin selection, failure matrix and queue tail for one cell."""
    if config.p_geo is None:
        raise ValueError("p_geo is required for queue evaluation (see the calibrate command)")
    kind = "nu" if config.pipeline == "exact" else "tau"
    try:
        margin, failure, channel = cell_failure(config, N, R_bits, margin)
        if failure is None:
            return CellResult(N, R_bits, kind, None, config.threshold, 1.0, math.nan, 0.0, "infeasible")
        success = SuccessMatrix.from_failure(channel, failure, config.pipeline)
        res = queue_tail(success, TrafficSpec(config.lam, config.p_geo), R_bits, N, config.threshold)
        status = "ok" if res.stable else "unstable"
        return CellResult(N, R_bits, kind, margin, config.threshold, res.tail, res.drift, res.residual,
                          status, failure)
    except Exception as exc:  # a failing cell is reported, never fatal to a sweep
        log.error("cell N=%d R=%.2f failed: %s", N, R_bits, exc)
        return CellResult(N, R_bits, kind, None, config.threshold, math.nan, math.nan, math.nan, "error")


def _evaluate_star(args):
    return evaluate_cell(*args)


@dataclass(frozen=True)
class SweepResult:
    cells: list[CellResult]

    @property
    def argmin(self) -> tuple[int, float] | None:
        ok = [c for c in self.cells if c.status == "ok"]
        if not ok:
            return None
        best = min(ok, key=lambda c: c.tail_probability)
        return best.N, best.R_bits

    @property
    def partial(self) -> bool:
        return any(c.status == "error" for c in self.cells)

    def to_csv(self) -> str:
        return write_csv(QUEUE_CSV_HEADER, [c.csv_row() for c in self.cells])

    def summary(self) -> dict:
        return {
            "argmin": self.argmin,
            "cells": len(self.cells),
            "flagged": [(c.N, c.R_bits, c.status) for c in self.cells if c.status != "ok"],
        }


def run_sweep(config: RunConfig) -> SweepResult:
    """Evaluate every cell of the grid; cells run in a process pool of ``config.jobs`` workers."""
    jobs = [(config, N, r) for N, r in config.cells()]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            cells = list(pool.map(_evaluate_star, jobs))
    else:
        cells = [_evaluate_star(j) for j in jobs]
    return SweepResult(cells)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    p_geo: float | None
    tail: float | None
    relative_residual: float | None
    degenerate: bool = False
    message: str = ""


def calibrate_traffic(config: RunConfig, N: int, R_bits: float, margin: float, threshold: int,
                      published_tail: float, rtol: float = 0.005) -> CalibrationResult:
    """Fit ``p_geo`` so the cell's queue tail equals ``published_tail``.

    The tail decreases as ``p_geo`` grows (shorter packets), so a bracketing
    root search on ``log tail`` over the stable range of ``p_geo`` suffices.
    """
    if config.lam == 0.0:
        return CalibrationResult(None, 0.0, None, True, "no arrivals: every p_geo gives an empty queue")
    _, failure, channel = cell_failure(config, N, R_bits, margin)
    success = SuccessMatrix.from_failure(channel, failure, config.pipeline)
    traffic = lambda p: TrafficSpec(config.lam, p)

    def tail(p: float) -> float:
        try:
            return queue_tail(success, traffic(p), R_bits, N, threshold).tail
        except UnstableQueueError:
            return 1.0

    need = config.lam * N / success.mean_success()
    if need >= 1.0:
        return CalibrationResult(None, None, None, False, "queue unstable for every p_geo")
    p_crit = -math.expm1(math.log1p(-need) / (R_bits * N))
    p_hi = 1.0 - 1e-12
    f = lambda p: math.log(max(tail(p), 1e-300)) - math.log(published_tail)
    if f(p_hi) > 0:
        return CalibrationResult(None, tail(p_hi), None, False, "published tail below the fastest service")
    # Walk down toward the stability edge, where the tail tends to 1.
    p_lo = p_hi
    for _ in range(60):
        p_lo = p_crit + (p_lo - p_crit) / 4.0
        if f(p_lo) > 0:
            break
    else:
        return CalibrationResult(None, None, None, False, "no stable p_geo reaches the published tail")
    p = optimize.brentq(f, p_lo, p_hi, xtol=1e-15, rtol=1e-14)
    t = tail(p)
    rel = abs(t - published_tail) / published_tail
    msg = "" if rel <= rtol else f"fit residual {rel:.3g} exceeds {rtol}"
    return CalibrationResult(p, t, rel, False, msg)


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------


def write_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


FIGURE_HEADER = ["x", "series", "value"]


def gallager_curve(N: int, R_bits: float, mu: float = 4.0, xi: float = 6.0, eps=(0.01, 0.1),
                   rho_step: float = 0.01) -> float:
    """State-averaged, per-entry optimized matrix bound for the channel with ``alpha = mu/N``, ``beta = xi/N``."""
    spec = build_gilbert_elliott(mu / N, xi / N, *eps)
    code = CodeParams(N, R_bits)
    fb = optimized_bound("gallager_matrix", lambda r: gallager_matrix_bound(spec, code, r), code, None, rho_step)
    return fb.averaged(stationary_distribution(spec.dynamics.matrix))


def rare_curve(N: int, R_bits: float, mu: float, xi: float, eps=(0.01, 0.1), rho_step: float = 0.01) -> float:
    """State-averaged, per-entry optimized rare-transition bound for generator rates ``(mu, xi)``."""
    spec = FscSpec(tuple(eps), ContinuousDynamics(gilbert_elliott_generator(mu, xi)))
    law = continuous_occupancy_law(mu, xi)
    code = CodeParams(N, R_bits)
    fb = optimized_bound("rare_transition", lambda r: rare_transition_bound(law, spec, code, r), code, None, rho_step)
    return fb.averaged(np.array([xi, mu]) / (mu + xi))


def exact_curve(N: int, R_bits: float, decoder: str, alpha: float = 0.0533, beta: float = 0.08,
                eps=(0.01, 0.1)) -> float:
    """State-averaged exact failure probability without margin."""
    spec = build_gilbert_elliott(alpha, beta, *eps)
    rule = DecoderRule.ml(*eps) if decoder == "ml" else DecoderRule.md()
    f = failure_matrix_exact(spec, CodeParams(N, R_bits), rule)
    return float(stationary_distribution(spec.dynamics.matrix) @ f.sum(axis=1))


def figure_config(figure_id: int, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    if figure_id == 4:
        return replace(base, pipeline="bound", N_list=(75, 125, 170, 225, 275, 325, 375))
    if figure_id == 5:
        return replace(base, pipeline="exact", N_list=(75, 125, 170, 225))
    raise ValueError("queue figures are 4 and 5")


def emit_figure_data(figure_id: int, config: RunConfig | None = None,
                     N_list: Sequence[int] | None = None, rates: Sequence[float] | None = None) -> str:
    """CSV ``(x, series, value)`` of one figure's curves; ``x`` is the rate."""
    config = config or RunConfig()
    rows = []
    fmt = lambda v: f"{v:.12g}"
    if figure_id == 2:
        for N in N_list or (50, 75, 100):
            for r in rates or RATES:
                rows.append([fmt(r), f"gallager N={N}", fmt(gallager_curve(N, r, rho_step=config.rho_step))])
                rows.append([fmt(r), f"rare N={N}", fmt(rare_curve(N, r, 4.0, 6.0, rho_step=config.rho_step))])
    elif figure_id == 3:
        eps = (config.eps1, config.eps2)
        for N in N_list or (50, 75):
            mu, xi = block_generator_rates(config.alpha, config.beta, N, "linear")
            for r in rates or RATES:
                for dec in ("ml", "md"):
                    v = exact_curve(N, r, dec, config.alpha, config.beta, eps)
                    rows.append([fmt(r), f"{dec.upper()} N={N}", fmt(v)])
                rows.append([fmt(r), f"rare N={N}", fmt(rare_curve(N, r, mu, xi, eps, config.rho_step))])
    elif figure_id in (4, 5):
        cfg = figure_config(figure_id, config)
        if N_list:
            cfg = replace(cfg, N_list=tuple(N_list))
        if rates:
            cfg = replace(cfg, rates=tuple(rates))
        for c in run_sweep(cfg).cells:
            rows.append([fmt(c.R_bits), f"N={c.N}", fmt(c.tail_probability)])
    else:
        raise ValueError("figures are 2, 3, 4 and 5")
    return write_csv(FIGURE_HEADER, rows)
