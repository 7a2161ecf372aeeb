"""Config builders and one runner per ``run`` subcommand.

Runners take a validated config and an output directory, write their
artifacts there and return a RunResult listing files, a summary and the
failed assertions. They never raise on a failed check; configuration and
window errors propagate.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from django.conf import settings

from apps.driving.services import (
    build_markov_driving,
    build_rotation_driving,
    build_shift_driving,
    sample_fiber_path,
)
from apps.driving.selectors import path_rows
from apps.driving.types import DrivingSystem, FiberPath, ParameterAssignment
from apps.evt.closed_forms import chain_theta, example1_theta, example2_theta, example3_theta
from apps.evt.selectors import (
    gumbel_rows,
    hitting_rows,
    husler_row,
    qhat_rows,
    schedule_rows,
    theta_rows,
    theta_summary,
)
from apps.evt.services import (
    gumbel_check,
    hitting_time_mc,
    husler_consistency,
    qhat_mass,
    schedule_cocycle,
    solve_thresholds,
    theta_estimate,
)
from apps.evt.types import ObservableSpec, ThetaReport, ThresholdSchedule
from apps.experiments import plots
from apps.experiments.constants import ASSUMPTION_EPS0, REPORT_FIBERS
from apps.experiments.types import RunResult
from apps.experiments.writers import write_csv, write_json, write_svg
from apps.interval_maps.assumptions import verify_assumptions
from apps.interval_maps.selectors import assumption_rows, branch_rows
from apps.interval_maps.services import maps_for_path
from apps.interval_maps.types import WeightFunction
from apps.limits.constants import MARTINGALE_TOL
from apps.limits.selectors import (
    azuma_constants,
    azuma_rows,
    borel_cantelli_rows,
    clt_row,
    correlation_rows,
    variance_row,
)
from apps.limits.services import azuma_bound_check, borel_cantelli_count, clt_check, variance_estimate
from apps.limits.types import (
    BirkhoffObservable,
    DegenerateVarianceError,
    RadiusSchedule,
    SummableScheduleError,
)
from apps.perturb.selectors import check_rows, first_order_rows
from apps.perturb.services import check_first_order, perturbation_ledger, random_positive_cocycle
from apps.thermo.constants import DECAY_STEPS, SURVIVOR_MEASURES
from apps.thermo.selectors import escape_rows, survivor_rows, thermo_rows
from apps.thermo.services import (
    conditionally_invariant,
    correlation_check,
    escape_rate,
    multiplier_monotonicity,
    perturbation_identity,
    survivor_measure,
    thermo_window,
)
from apps.thermo.types import DegenerateHoleError, ThermoWindow
from apps.transfer_op.selectors import matrix_rows
from apps.transfer_op.services import build_cocycle, grid_size_for, lasota_yorke_diagnostic
from apps.transfer_op.types import OperatorCocycle, WindowError


logger = logging.getLogger(__name__)


def assignment_for(config: dict[str, Any]) -> ParameterAssignment:
    return ParameterAssignment.build(
        map_family=config["maps"]["family"],
        map_params=config["maps"]["params"],
        observable_params=config["observable"]["params"],
        scaling=config["scaling"],
    )


def driving_for(config: dict[str, Any]) -> DrivingSystem:
    """Driving system of a config; raises ValueError when the rules do not fit the kind."""
    driving = config["driving"]
    assignment = assignment_for(config)
    if driving["kind"] == "circle-rotation":
        return build_rotation_driving(
            alpha=driving["alpha"], parameter_assignment=assignment, base_point=driving.get("base_point")
        )
    if driving["kind"] == "markov-shift":
        return build_markov_driving(transition=driving["transition"], parameter_assignment=assignment)
    size = driving["alphabet_size"]
    return build_shift_driving(
        alphabet_size=size,
        weights=driving.get("weights") or [1.0 / size] * size,
        parameter_assignment=assignment,
        transition=driving.get("transition"),
    )


def path_for(config: dict[str, Any]) -> FiberPath:
    window = config["window"]
    return sample_fiber_path(driving=driving_for(config), seed=config["seeds"]["path"], K=window["K"], N=window["N"])


def grid_for(config: dict[str, Any], path: FiberPath) -> int:
    cells = config["grid"]["cells"]
    if not config["grid"]["align"]:
        return cells
    n, aligned = grid_size_for(maps=maps_for_path(path), requested=cells)
    if not aligned:
        logger.warning(f"Grid of {n} cells is not aligned with the branch endpoints")
    return n


def observable_for(config: dict[str, Any]) -> ObservableSpec:
    observable = config["observable"]
    return ObservableSpec(
        family=observable["family"],
        center=observable["center"],
        circle=observable["circle"],
        jitter=observable["jitter"],
    )


def limits_observable_for(config: dict[str, Any]) -> BirkhoffObservable:
    observable = config["limits"]["observable"]
    return BirkhoffObservable(
        kind=observable["kind"],
        interval=tuple(observable["interval"]),
        frequency=observable["frequency"],
        values=tuple(observable["values"]),
    )


class ExperimentContext:
    """Lazily built operator data shared by the runners of one invocation."""

    def __init__(self, config: dict[str, Any]):
        self.config = config

    @cached_property
    def path(self) -> FiberPath:
        return path_for(self.config)

    @cached_property
    def weight(self) -> WeightFunction:
        return WeightFunction(exponent=self.config["weight_exponent"])

    @cached_property
    def cocycle(self) -> OperatorCocycle:
        return build_cocycle(path=self.path, weight=self.weight, n=grid_for(self.config, self.path))

    @cached_property
    def closed(self) -> ThermoWindow:
        return thermo_window(cocycle=self.cocycle)

    @cached_property
    def observable(self) -> ObservableSpec:
        return observable_for(self.config)

    @cached_property
    def schedule(self) -> ThresholdSchedule:
        evt = self.config["evt"]
        hi = self.closed.hi if evt["hi"] is None else evt["hi"]
        return solve_thresholds(
            closed=self.closed,
            observable=self.observable,
            ladder=evt["ladder"],
            bias=evt["bias"],
            lo=evt["lo"],
            hi=hi,
        )

    @cached_property
    def scheduled(self) -> OperatorCocycle:
        return schedule_cocycle(cocycle=self.cocycle, schedule=self.schedule)

    @property
    def threads(self) -> int:
        return self.config["threads"]


def closed_form_for(context: ExperimentContext) -> Optional[Callable[[int], float]]:
    """Exact theta per fiber when the config is one of the worked families.

    A set period selects the periodic-centre formula, a distance observable at
    1/2 of the example1 family the fixed-point formula and one at 0 of beta maps
    the left-hole formula. Anything else uses the orbit-chain limit.
    """
    config = context.config
    closed, observable = context.closed, context.observable
    evt = config["evt"]
    centred = "center" not in config["observable"]["params"]
    family = config["maps"]["family"]
    if evt["period"] is not None:
        return lambda k: example3_theta(tmap=closed.cocycle.tmap(k), x0=observable.center, period=evt["period"])
    if centred and observable.family == "distance" and not observable.circle:
        if family == "example1" and observable.center == 0.5:
            return lambda k: example1_theta(closed=closed, k=k, center=0.5)
        if family == "beta" and observable.center == 0.0:
            return lambda k: example2_theta(closed=closed, k=k)
    return lambda k: chain_theta(closed=closed, observable=observable, k=k, k_max=evt["k_max"])


def theta_fibers_for(context: ExperimentContext) -> range:
    evt = context.config["evt"]
    schedule, closed = context.schedule, context.closed
    start = max(schedule.lo, closed.lo) + evt["k_max"]
    stop = min(start + evt["theta_fibers"], schedule.hi + 1, closed.hi + 1)
    if stop <= start:
        raise WindowError(f"No fiber has {evt['k_max']} predecessors inside the schedule [{schedule.lo}, {schedule.hi}]")
    return range(start, stop)


def theta_integral_for(context: ExperimentContext, report: Optional[ThetaReport] = None) -> float:
    """Fiber average of t * theta: the configured theta times the mean t, else the estimated integral."""
    theta = context.config["evt"]["theta"]
    if theta is not None:
        return theta * float(np.mean(context.schedule.t))
    if report is None:
        report = estimate_theta(context)
    return report.integral


def estimate_theta(context: ExperimentContext) -> ThetaReport:
    evt = context.config["evt"]
    return theta_estimate(
        cocycle=context.scheduled,
        closed=context.closed,
        schedule=context.schedule,
        fibers=theta_fibers_for(context),
        k_max=evt["k_max"],
        closed_form=closed_form_for(context),
    )


def _report_fibers(lo: int, hi: int) -> range:
    return range(lo, min(hi, lo + REPORT_FIBERS - 1) + 1)


def run_assumptions(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Standing assumptions on the schedule holes, plus the Lasota-Yorke diagnostic on exact grids."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="assumptions")
    path, schedule = context.path, context.schedule
    report = verify_assumptions(
        maps=maps_for_path(path),
        ladder=[schedule.holes[N] for N in schedule.ladder],
        weight=context.weight,
        eps0=ASSUMPTION_EPS0,
        fibers=list(range(path.first, path.last + 1)),
    )
    rows = assumption_rows(report)
    for condition in report.failures():
        where = "" if condition.fiber is None else f" at fiber {condition.fiber}"
        result.fail(f"assumption {condition.name}", f"{condition.name} fails{where}: {condition.detail}")

    if context.cocycle.exact and report.n_prime:
        k0 = config["evt"]["fiber"]
        for label in (None, schedule.ladder[-1]):
            diagnostic = lasota_yorke_diagnostic(
                cocycle=context.scheduled, label=label, k0=k0, n_prime=report.n_prime
            )
            rows.append(
                {
                    "condition": "lasota-yorke",
                    "passed": int(diagnostic.passed),
                    "fiber": k0,
                    "witness": f"bound={diagnostic.bound!r};ratio={diagnostic.empirical_ratio!r}",
                    "detail": "closed" if label is None else f"N={label}",
                }
            )
            if not diagnostic.passed:
                result.fail("lasota-yorke", f"variation ratio exceeds the bound at N={label}",
                            diagnostic.empirical_ratio, diagnostic.bound)
    else:
        logger.info("Lasota-Yorke diagnostic skipped: grid not exact or no n' found")

    result.files.append(str(write_csv(out / "assumptions.csv", rows)))
    result.summary = {
        "passed": report.passed,
        "n_prime": report.n_prime,
        "conditions": {c.name: c.passed for c in report.conditions},
    }
    return result


def run_thermo(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Open windows for the schedule ladder, escape rates and the perturbation identities."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="thermo")
    tolerances = config["tolerances"]
    closed, schedule = context.closed, context.schedule
    lo, hi = max(schedule.lo, closed.lo), min(schedule.hi, closed.hi)
    windows = {
        N: thermo_window(cocycle=context.scheduled, label=N, lo=lo, hi=hi, closed=closed) for N in schedule.ladder
    }
    listed = _report_fibers(lo, hi)
    rows = [row for window in (closed, *windows.values()) for row in thermo_rows(window) if row["fiber"] in listed]
    result.files.append(str(write_csv(out / "thermo.csv", rows)))

    escape = escape_rate(windows=windows, steps=hi - lo, k=lo, target=config["evt"]["theta"])
    result.files.append(str(write_csv(out / "escape.csv", escape_rows(escape))))
    survivors = []
    for N, window in windows.items():
        measured = [survivor_measure(window=window, k=lo, steps=hi - lo, which=which) for which in SURVIVOR_MEASURES]
        survivors.extend({"N": N, **row} for row in survivor_rows(measured))
    result.files.append(str(write_csv(out / "survivor.csv", survivors)))
    for row in escape.rows:
        if row.agreement > tolerances["escape"]:
            result.fail("escape rate", f"fit and Birkhoff rates disagree at N={row.label}", row.agreement,
                        tolerances["escape"])
    if escape.deviation is not None and abs(escape.deviation) > tolerances["escape"]:
        result.fail("escape ratio", "extrapolated rate / mu(H) misses theta", escape.deviation, tolerances["escape"])

    identities = []
    for N, window in windows.items():
        for k in listed:
            identity = perturbation_identity(window=window, k=k, seed=config["seeds"]["mc"])
            identities.append(
                {
                    "N": N,
                    "fiber": k,
                    "delta": identity.delta,
                    "predicted_delta": identity.predicted_delta,
                    "delta_tol": identity.delta_residual,
                    "eta": identity.eta,
                    "eta_bound": identity.eta_bound,
                    "conformality_residual": identity.conformality_residual,
                }
            )
    result.files.append(str(write_csv(out / "identities.csv", identities)))
    worst = max(row["delta_tol"] for row in identities)
    if worst > tolerances["identity"]:
        result.fail("delta identity", "Delta differs from lambda_0 mu_0(H)", worst, tolerances["identity"])
    if any(row["eta"] > row["eta_bound"] * (1 + tolerances["identity"]) + tolerances["identity"] for row in identities):
        result.fail("eta bound", "eta exceeds lambda_0 nu_0(H)")

    smallest = windows[schedule.ladder[-1]]
    try:
        invariance = conditionally_invariant(window=smallest, k=lo)
        if invariance.residual > settings.THERMO_TOL:
            result.fail("conditional invariance", "pushed density misses the next fiber", invariance.residual,
                        settings.THERMO_TOL)
        invariance_residual = invariance.residual
    except DegenerateHoleError as exc:
        result.fail("conditional invariance", str(exc))
        invariance_residual = None
    correlations = correlation_check(window=smallest, k=lo, steps=min(DECAY_STEPS, hi - lo))
    if not correlations.passed:
        result.fail("correlations", "correlations decay slower than the operator", correlations.kappa)
    monotone = multiplier_monotonicity(windows=list(windows.values()))
    if not monotone.passed:
        result.fail("monotonicity", "multipliers grow with the hole", monotone.worst_violation)

    result.summary = {
        "fibers": [lo, hi],
        "certification": closed.certification,
        "escape_ratio": escape.extrapolated_ratio,
        "escape_target": escape.target,
        "escape_notes": list(escape.notes),
        "max_delta_residual": worst,
        "conditional_invariance_residual": invariance_residual,
        "correlation_kappa": correlations.kappa,
        "monotonicity_violation": monotone.worst_violation,
    }
    return result


def run_theta(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Thresholds, the q-hat table and the extrapolated extremal index."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="theta")
    tol = config["tolerances"]
    schedule = context.schedule
    result.files.append(str(write_csv(out / "thresholds.csv", schedule_rows(schedule))))

    report = estimate_theta(context)
    result.files.append(str(write_csv(out / "qhat.csv", qhat_rows(report))))
    result.files.append(str(write_csv(out / "theta.csv", theta_rows(report))))
    result.files.append(str(write_svg(out / "theta.svg", plots.theta_figure(report))))

    expected = config["evt"]["theta"]
    if expected is not None and abs(report.mean_theta - expected) > tol["theta"]:
        result.fail("theta", f"mean theta {report.mean_theta:.6f} misses {expected:.6f}",
                    abs(report.mean_theta - expected), tol["theta"])
    if report.deviation is not None and report.deviation > tol["theta"]:
        result.fail("theta closed form", "per-fiber theta misses the closed form", report.deviation, tol["theta"])
    if not report.in_range:
        result.fail("theta range", "extrapolated theta leaves [0, 1]")

    N = schedule.ladder[-1]
    fibers = list(report.fibers)[-REPORT_FIBERS:]
    mass, longest = qhat_mass(cocycle=context.scheduled, closed=context.closed, label=N, fibers=fibers)
    room = fibers[0] - context.closed.lo
    if longest >= min(settings.KMAX_CAP, room):
        logger.warning(f"q-hat series cut after {longest} terms by the window or the cap; mass check skipped")
    elif math.isfinite(mass) and abs(mass - 1.0) > tol["qhat_mass"]:
        result.fail("qhat mass", f"weighted sum of q-hat is {mass:.6f}", abs(mass - 1.0), tol["qhat_mass"])

    summary = theta_summary(report)
    summary.update({"expected": expected, "qhat_mass": mass, "qhat_terms": longest, "W": schedule.W})
    result.files.append(str(write_json(out / "theta.json", summary)))
    result.summary = summary
    return result


def run_gumbel(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Non-exceedance along the ladder against exp(-integral t theta), with the Husler average."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="gumbel")
    tol = config["tolerances"]
    evt = config["evt"]
    integral = theta_integral_for(context)
    report = gumbel_check(
        cocycle=context.scheduled,
        closed=context.closed,
        schedule=context.schedule,
        k=evt["fiber"],
        theta_integral=integral,
    )
    result.files.append(str(write_csv(out / "gumbel.csv", gumbel_rows(report))))
    result.files.append(str(write_svg(out / "gumbel.svg", plots.gumbel_figure(report))))
    last = report.rows[-1]
    gap = abs(last.nu_value - report.target) / report.target
    if gap > tol["gumbel"]:
        result.fail("gumbel", f"nu_0 non-exceedance {last.nu_value:.6f} at N={last.N}", gap, tol["gumbel"])

    husler = husler_consistency(schedule=context.schedule, N=last.N, start=evt["fiber"])
    result.files.append(str(write_csv(out / "husler.csv", [husler_row(husler)])))
    if not husler.passed:
        result.fail("husler", "average of N mu_0(H) misses the mean scaling", husler.deviation, husler.tolerance)

    result.summary = {
        "fiber": report.fiber,
        "theta_integral": integral,
        "target": report.target,
        "nu_value": last.nu_value,
        "mu_value": last.mu_value,
        "lambda_ratio": last.lambda_ratio,
        "husler_deviation": husler.deviation,
        "notes": list(report.notes),
    }
    return result


def run_hitting(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Monte Carlo hitting times at the smallest N of the ladder."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="hitting")
    tol = config["tolerances"]
    evt = config["evt"]
    N = evt["ladder"][0]
    report = hitting_time_mc(
        cocycle=context.scheduled,
        closed=context.closed,
        schedule=context.schedule,
        N=N,
        k=evt["fiber"],
        samples=evt["samples"],
        seed=config["seeds"]["mc"],
        theta_integral=theta_integral_for(context),
        horizon=evt["horizon"],
        threads=context.threads,
    )
    result.files.append(str(write_csv(out / "hitting.csv", hitting_rows(report))))
    result.files.append(str(write_svg(out / "hitting.svg", plots.hitting_figure(report))))
    if report.ks_distance > tol["ks"]:
        result.fail("hitting ks", f"KS distance at N={N}", report.ks_distance, tol["ks"])
    if report.max_z_score > tol["sigma"]:
        result.fail("hitting survival", "Monte Carlo survival misses the operator value",
                    report.max_z_score, tol["sigma"])
    result.summary = {
        "N": N,
        "samples": report.samples,
        "censored": report.censored,
        "rate": report.rate,
        "ks_distance": report.ks_distance,
        "max_z_score": report.max_z_score,
    }
    return result


def run_clt(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="clt")
    limits = config["limits"]
    observable = limits_observable_for(config)
    variance = variance_estimate(closed=context.closed, observable=observable, lags=limits["lags"])
    result.files.append(str(write_csv(out / "variance.csv", [variance_row(variance)])))
    result.files.append(str(write_csv(out / "correlations.csv", correlation_rows(variance))))
    result.summary = {"sigma2": variance.sigma2, "tail_bound": variance.tail_bound}
    try:
        report, experiment = clt_check(
            closed=context.closed,
            observable=observable,
            k=limits["fiber"],
            n=limits["n"],
            samples=limits["samples"],
            seed=config["seeds"]["mc"],
            variance=variance,
            threads=context.threads,
        )
    except DegenerateVarianceError as exc:
        result.fail("clt", str(exc), variance.sigma2)
        return result

    result.files.append(str(write_csv(out / "clt.csv", [clt_row(report)])))
    result.files.append(str(write_svg(out / "clt_qq.svg", plots.qq_figure(experiment))))
    if not report.passed:
        result.fail("clt ks", f"KS distance to N(0, sigma^2) at n={report.n}", report.ks_distance)
    gap = abs(report.direct_variance - report.sigma2) / report.sigma2
    if gap > config["tolerances"]["variance"]:
        result.fail("variance", "Green-Kubo and direct variance disagree", gap, config["tolerances"]["variance"])
    result.summary.update(
        {"ks_distance": report.ks_distance, "p_value": report.p_value, "direct_variance": report.direct_variance}
    )
    return result


def run_ldp(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Empirical deviation frequencies against the Azuma-Hoeffding bound."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="ldp")
    limits = config["limits"]
    report = azuma_bound_check(
        closed=context.closed,
        observable=limits_observable_for(config),
        k=limits["fiber"],
        deviations=limits["deviations"],
        horizons=limits["horizons"],
        samples=limits["samples"],
        seed=config["seeds"]["mc"],
        threads=context.threads,
    )
    constants = azuma_constants(report)
    result.files.append(str(write_csv(out / "azuma.csv", azuma_rows(report))))
    result.files.append(str(write_json(out / "azuma.json", constants)))
    for row in report.violations:
        result.fail("azuma", f"deviation {row.deviation} exceeded at n={row.n}", row.empirical, row.bound)
    if report.martingale_residual > MARTINGALE_TOL:
        result.fail("martingale", "reverse martingale property fails", report.martingale_residual, MARTINGALE_TOL)
    result.summary = constants
    return result


def run_borel_cantelli(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="borel-cantelli")
    limits = config["limits"]
    radius = limits["radius"]
    schedule = RadiusSchedule(kind=radius["kind"], scale=radius["scale"], exponent=radius["exponent"])
    try:
        report = borel_cantelli_count(
            closed=context.closed,
            center=limits["center"],
            schedule=schedule,
            k=limits["fiber"],
            n=limits["n"],
            samples=limits["samples"],
            seed=config["seeds"]["mc"],
            threads=context.threads,
        )
    except SummableScheduleError as exc:
        result.fail("borel-cantelli", str(exc))
        return result

    result.files.append(str(write_csv(out / "bc.csv", borel_cantelli_rows(report))))
    result.files.append(str(write_svg(out / "bc.svg", plots.borel_cantelli_figure(report))))
    tol = config["tolerances"]["borel_cantelli"]
    if abs(report.deviation) > tol:
        result.fail("borel-cantelli", f"entries / E_n = {report.ratio:.4f}", abs(report.deviation), tol)
    result.summary = {
        "expected": report.expected,
        "ratio": report.ratio,
        "median_ratio": report.median_ratio,
        "error_bound": report.error_bound,
    }
    return result


def run_matrix_check(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """First-order ratio against theta_0 on seeded positive matrix cocycles."""
    matrix = config["matrix"]
    tol = config["tolerances"]["first_order"]
    base = config["seeds"]["path"]

    def check(i: int):
        cocycle = random_positive_cocycle(
            d=matrix["d"], seed=base + i, K=matrix["K"], N=matrix["N"], ladder=matrix["eps_ladder"], rule=matrix["rule"]
        )
        return cocycle, check_first_order(cocycle=cocycle, k=matrix["fiber"], tol=tol)

    with ThreadPoolExecutor(max_workers=max(config["threads"], 1)) as pool:
        outcomes = list(pool.map(check, range(matrix["cocycles"])))

    result = RunResult(subcommand="matrix-check")
    rows, checks = [], []
    for i, (cocycle, table) in enumerate(outcomes):
        rows.extend({"cocycle": i, "seed": base + i, **row} for row in first_order_rows(table))
        if not table.passed:
            for failure in table.failures:
                result.fail("first order", f"cocycle {i} (seed {base + i}): {failure}")
        if i == 0:
            ledger = perturbation_ledger(cocycle=cocycle, k=matrix["fiber"])
            checks = check_rows(ledger)
    result.files.append(str(write_csv(out / "matrix_check.csv", rows)))
    result.files.append(str(write_csv(out / "matrix_properties.csv", checks)))
    deviations = [abs(table.extrapolated - table.theta) for _, table in outcomes]
    result.summary = {
        "cocycles": len(outcomes),
        "passed": sum(table.passed for _, table in outcomes),
        "max_deviation": max(deviations) if deviations else None,
    }
    return result


def run_branches(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Branch table of every distinct map on the path, and the parameters of every fiber."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="branches")
    seen = {}
    for payload, tmap in zip(context.path.payloads, maps_for_path(context.path)):
        seen.setdefault((payload.map_family, payload.map_params), tmap)
    rows = []
    for index, ((family, params), tmap) in enumerate(sorted(seen.items(), key=lambda item: item[0])):
        label = ";".join(f"{name}={value!r}" for name, value in params)
        rows.extend({"map": index, "family": family, "params": label, **row} for row in branch_rows(tmap, context.weight))
    result.files.append(str(write_csv(out / "branches.csv", rows)))
    result.files.append(str(write_csv(out / "path.csv", path_rows(context.path))))
    result.summary = {"maps": len(seen)}
    return result


def run_matrix(config: dict[str, Any], out: Path, context: Optional[ExperimentContext] = None) -> RunResult:
    """Nonzero entries of the closed Ulam matrix at the configured fiber."""
    context = context or ExperimentContext(config)
    result = RunResult(subcommand="matrix")
    k = config["evt"]["fiber"]
    matrix = context.cocycle.closed[context.path.position(k)]
    result.files.append(str(write_csv(out / "matrix.csv", matrix_rows(matrix))))
    result.summary = {"fiber": k, "cells": matrix.n, "exact": matrix.exact}
    return result


def run_example(config: dict[str, Any], out: Path, preset: str) -> RunResult:
    """Theta and the Gumbel law of a worked example; the first one adds hitting times."""
    context = ExperimentContext(config)
    result = RunResult(subcommand=f"example-{preset}")
    runners = [run_theta, run_gumbel] + ([run_hitting] if preset == "1" else [])
    for runner in runners:
        result.merge(runner(config, out, context))
    return result


RUNNERS: dict[str, Callable[..., RunResult]] = {
    "assumptions": run_assumptions,
    "thermo": run_thermo,
    "theta": run_theta,
    "gumbel": run_gumbel,
    "hitting": run_hitting,
    "clt": run_clt,
    "ldp": run_ldp,
    "borel-cantelli": run_borel_cantelli,
    "matrix-check": run_matrix_check,
    "branches": run_branches,
    "matrix": run_matrix,
}
