import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from django.conf import settings
from scipy import stats

from apps.driving.services import worker_generator
from apps.evt.constants import (
    BISECTION_MAX_ITER,
    HITTING_HORIZON_FACTOR,
    QHAT_CROSS_TOL,
    QHAT_SUM_TOL,
    SURVIVAL_CHECKPOINTS,
    THETA_RANGE_TOL,
)
from apps.evt.types import (
    GumbelReport,
    GumbelRow,
    HittingReport,
    HuslerReport,
    ObservableSpec,
    QhatSeries,
    SurvivalPoint,
    ThetaReport,
    ThresholdError,
    ThresholdSchedule,
)
from apps.interval_maps.services import nesting_violation
from apps.interval_maps.types import HoleSpec
from apps.perturb.extrapolation import richardson_limit
from apps.thermo.constants import NULL_HOLE_MEASURE
from apps.thermo.sampling import reverse_orbits
from apps.thermo.services import survivor_measure, thermo_window
from apps.thermo.types import ThermoWindow
from apps.transfer_op.services import pairing, with_holes
from apps.transfer_op.types import OperatorCocycle, WindowError


logger = logging.getLogger(__name__)


def _cell_cdf(density: np.ndarray) -> np.ndarray:
    """F at the n + 1 grid edges of a piecewise-constant Lebesgue density."""
    return np.concatenate(([0.0], np.cumsum(density) / density.shape[0]))


def _hole_mass(hole: HoleSpec, edges: np.ndarray, cdf: np.ndarray) -> float:
    return float(sum(np.interp(b, edges, cdf) - np.interp(a, edges, cdf) for a, b in hole.intervals))


def _solve_radius(
    *,
    observable: ObservableSpec,
    payload,
    target: float,
    edges: np.ndarray,
    cdf: np.ndarray,
    tol: float,
) -> tuple[float, float, HoleSpec]:
    """Largest radius whose hole has mu_0 mass at most ``target``."""
    hi = 1.0
    for _ in range(64):
        if observable.hole(payload, hi).measure >= 1.0:
            break
        hi *= 2.0
    lo, lo_mass = 0.0, 0.0
    hi_mass = _hole_mass(observable.hole(payload, hi), edges, cdf)
    for _ in range(BISECTION_MAX_ITER):
        if hi_mass - lo_mass <= tol or hi - lo <= 1e-17:
            break
        mid = 0.5 * (lo + hi)
        mass = _hole_mass(observable.hole(payload, mid), edges, cdf)
        if mass <= target:
            lo, lo_mass = mid, mass
        else:
            hi, hi_mass = mid, mass
    return lo, lo_mass, observable.hole(payload, lo)


def solve_thresholds(
    *,
    closed: ThermoWindow,
    observable: ObservableSpec,
    ladder: Sequence[int],
    bias: float = 0.0,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
    tol: Optional[float] = None,
) -> ThresholdSchedule:
    """Thresholds z_{omega,N} with mu_0(h > z) = (t_omega + bias) / N on fibers lo..hi.

    Parameters
    - closed: closed thermo window; its phi0 * nu0 rows are the invariant densities
    - observable: observable family and default parameters
    - ladder: strictly increasing N values
    - bias: constant added to every t_omega, for deliberately violating the scaling condition
    - lo, hi: fibers to solve, the whole closed window by default
    - tol: bisection tolerance in measure (default THRESHOLD_TOL)

    Bisection runs on the hole radius, so ties on grid plateaus resolve to the
    largest hole, i.e. the smallest threshold. A target above the total mass
    raises ThresholdError; a target equal to it gives the whole interval and
    is recorded as degenerate.
    """
    tol = settings.THRESHOLD_TOL if tol is None else tol
    ladder = tuple(int(N) for N in ladder)
    if not ladder or any(N < 1 for N in ladder):
        raise ValueError(f"N ladder must hold positive integers, got {ladder}")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError(f"N ladder must be strictly increasing, got {ladder}")
    lo = closed.lo if lo is None else lo
    hi = closed.hi if hi is None else hi
    if not (closed.contains(lo) and closed.contains(hi)) or lo > hi:
        raise WindowError(f"Fibers [{lo}, {hi}] outside closed window [{closed.lo}, {closed.hi}]")

    path = closed.cocycle.path
    fibers = range(lo, hi + 1)
    t = np.array([path.payload(k).t for k in fibers])
    if np.any(t <= 0.0):
        raise ValueError(f"Scaling must be positive, smallest value is {t.min()}")

    edges = np.arange(closed.n + 1) / closed.n
    shape = (len(ladder), len(fibers))
    radii, thresholds, measures = np.empty(shape), np.empty(shape), np.empty(shape)
    rungs: list[list[HoleSpec]] = [[] for _ in ladder]
    degenerate = []
    for c, k in enumerate(fibers):
        payload = path.payload(k)
        i = closed.row(k)
        cdf = _cell_cdf(closed.phi0[i] * closed.nu0[i])
        total = cdf[-1]
        for r, N in enumerate(ladder):
            target = (t[c] + bias) / N
            if target > total + tol:
                raise ThresholdError(
                    f"Target mass {target:.6g} at fiber {k} (N={N}) exceeds the total mass {total:.6g}",
                    fiber=k,
                )
            if target >= total - tol:
                hole = HoleSpec(intervals=((0.0, 1.0),), label=N)
                radius, mass = math.inf, total
                degenerate.append((N, k))
                logger.warning(f"Hole at fiber {k} for N={N} is the whole interval")
            else:
                radius, mass, hole = _solve_radius(
                    observable=observable, payload=payload, target=target, edges=edges, cdf=cdf, tol=tol
                )
                hole = HoleSpec(intervals=hole.intervals, label=N)
            radii[r, c] = radius
            thresholds[r, c] = observable.threshold(radius) if math.isfinite(radius) else -math.inf
            measures[r, c] = mass
            rungs[r].append(hole)

    violation = nesting_violation(rungs)
    if violation is not None:
        rung, position = violation
        raise ThresholdError(
            f"Holes for N={ladder[rung]} leave those for N={ladder[rung - 1]} at fiber {lo + position}",
            fiber=lo + position,
        )

    holes = {}
    empty = HoleSpec()
    for r, N in enumerate(ladder):
        specs = [empty] * len(path)
        for c, k in enumerate(fibers):
            specs[path.position(k)] = rungs[r][c]
        holes[N] = specs
    xi = np.array(ladder, dtype=float)[:, None] * measures - t[None, :]
    schedule = ThresholdSchedule(
        observable=observable,
        ladder=ladder,
        lo=lo,
        hi=hi,
        t=t,
        radii=radii,
        thresholds=thresholds,
        measures=measures,
        xi=xi,
        holes=holes,
        bias=bias,
        degenerate=tuple(degenerate),
    )
    logger.info(
        f"Solved thresholds for {len(fibers)} fibers, ladder {ladder}, family {observable.family}: W={schedule.W:.3e}"
    )
    return schedule


def schedule_cocycle(*, cocycle: OperatorCocycle, schedule: ThresholdSchedule) -> OperatorCocycle:
    """The cocycle with one hole label per N of the schedule."""
    missing = {N: schedule.holes[N] for N in schedule.ladder if N not in cocycle.masks}
    if not missing:
        return cocycle
    return with_holes(cocycle=cocycle, holes=missing)


def _backward_terms(
    cocycle: OperatorCocycle, closed: ThermoWindow, label, k: int, measure: float
) -> Iterator[float]:
    """q-hat^(m) for m = 0, 1, ... as long as the closed window reaches back.

    The dual vector carries f -> nu_{k,0}(1_{H_k} L^(m+1) f) / prod lambda_0,
    with the open operator on the fibers in between.
    """
    dual = closed.nu0[closed.row(k)] * (1.0 - cocycle.mask(k, label))
    s = k - 1
    while closed.contains(s):
        if s < k - 1:
            dual = dual * cocycle.mask(s + 1, label)
        dual = cocycle.adjoint(s, dual) / closed.lam0_at(s)
        covered = 1.0 - cocycle.mask(s, label)
        yield pairing(dual, covered * closed.phi0[closed.row(s)]) / measure
        s -= 1


def _forward_terms(
    cocycle: OperatorCocycle, closed: ThermoWindow, label, k: int, k_max: int
) -> np.ndarray:
    """The same series in operator form, pushing forward from fiber k - m - 1."""
    covered_k = 1.0 - cocycle.mask(k, label)
    denominator = pairing(
        closed.nu0[closed.row(k + 1)], cocycle.apply(k, covered_k * closed.phi0[closed.row(k)])
    )
    values = np.empty(k_max)
    for m in range(k_max):
        s = k - m - 1
        f = (1.0 - cocycle.mask(s, label)) * closed.phi0[closed.row(s)]
        f = cocycle.apply(s, f) / closed.lam0_at(s)
        for j in range(s + 1, k):
            f = cocycle.apply(j, f, label) / closed.lam0_at(j)
        numerator = pairing(closed.nu0[closed.row(k + 1)], cocycle.apply(k, covered_k * f))
        values[m] = numerator / denominator
    return values


def qhat(
    *,
    cocycle: OperatorCocycle,
    closed: ThermoWindow,
    label,
    k: int,
    k_max: Optional[int] = None,
    cross_check: bool = True,
) -> QhatSeries:
    """q-hat^(m)_{k,eps} for m < k_max: the conditional mu_0-probability, given a point
    in H_k, that its past first met a hole exactly m + 1 steps earlier.

    Parameters
    - cocycle: operator cocycle carrying ``label``
    - closed: closed thermo window reaching back to fiber k - k_max
    - label: hole label
    - k: target fiber
    - k_max: number of terms (default KMAX_DEFAULT)
    - cross_check: also evaluate the operator form by forward pushes

    Fibers whose hole has no mu_0 mass are excluded and return NaN terms.
    """
    k_max = settings.KMAX_DEFAULT if k_max is None else k_max
    if not (closed.contains(k) and closed.contains(k - k_max)):
        raise WindowError(f"q-hat at fiber {k} with k_max={k_max} leaves closed window [{closed.lo}, {closed.hi}]")
    measure = pairing(closed.nu0[closed.row(k)], closed.phi0[closed.row(k)] * (1.0 - cocycle.mask(k, label)))
    if measure <= NULL_HOLE_MEASURE:
        nan = np.full(k_max, np.nan)
        return QhatSeries(fiber=k, label=label, hole_measure=measure, values=nan, excluded=True)

    terms = _backward_terms(cocycle, closed, label, k, measure)
    values = np.array([next(terms) for _ in range(k_max)])
    forward = _forward_terms(cocycle, closed, label, k, k_max) if cross_check else None
    series = QhatSeries(fiber=k, label=label, hole_measure=measure, values=values, forward=forward)
    if series.cross_residual > QHAT_CROSS_TOL:
        logger.warning(f"q-hat forms disagree at fiber {k} label={label!r}: {series.cross_residual:.3e}")
    if np.any(series.partial_sums > 1.0 + QHAT_SUM_TOL):
        logger.warning(f"q-hat partial sums exceed 1 at fiber {k} label={label!r}")
    return series


def qhat_extended(
    *,
    cocycle: OperatorCocycle,
    closed: ThermoWindow,
    label,
    k: int,
    tail_tol: Optional[float] = None,
    cap: Optional[int] = None,
) -> QhatSeries:
    """Extend the series until the unassigned mass 1 - sum q-hat drops below ``tail_tol``.

    Stops early at ``cap`` terms (default KMAX_CAP) or at the first fiber of
    the closed window; the returned series then simply has fewer terms.
    """
    tail_tol = settings.QHAT_TAIL_TOL if tail_tol is None else tail_tol
    cap = settings.KMAX_CAP if cap is None else cap
    measure = pairing(closed.nu0[closed.row(k)], closed.phi0[closed.row(k)] * (1.0 - cocycle.mask(k, label)))
    if measure <= NULL_HOLE_MEASURE:
        return QhatSeries(fiber=k, label=label, hole_measure=measure, values=np.array([]), excluded=True)
    values, total = [], 0.0
    for value in _backward_terms(cocycle, closed, label, k, measure):
        values.append(value)
        total += value
        if 1.0 - total < tail_tol or len(values) >= cap:
            break
    else:
        logger.warning(
            f"Closed window ran out after {len(values)} q-hat terms at fiber {k}; unassigned mass {1.0 - total:.3e}"
        )
    return QhatSeries(fiber=k, label=label, hole_measure=measure, values=np.array(values))


def qhat_mass(
    *,
    cocycle: OperatorCocycle,
    closed: ThermoWindow,
    label,
    fibers: Sequence[int],
    tail_tol: Optional[float] = None,
    cap: Optional[int] = None,
) -> tuple[float, int]:
    """Hole-measure weighted average of the extended sums of q-hat, and the longest series used."""
    weighted, weights, longest = 0.0, 0.0, 0
    for k in fibers:
        series = qhat_extended(cocycle=cocycle, closed=closed, label=label, k=k, tail_tol=tail_tol, cap=cap)
        if series.excluded:
            continue
        weighted += series.hole_measure * float(series.values.sum())
        weights += series.hole_measure
        longest = max(longest, series.values.size)
    if weights == 0.0:
        return float("nan"), 0
    return weighted / weights, longest


def theta_estimate(
    *,
    cocycle: OperatorCocycle,
    closed: ThermoWindow,
    schedule: ThresholdSchedule,
    fibers: Optional[Sequence[int]] = None,
    k_max: Optional[int] = None,
    closed_form: Optional[Callable[[int], float]] = None,
) -> ThetaReport:
    """q-hat table over the N ladder, truncated theta and its extrapolation to N -> infinity.

    Parameters
    - cocycle: operator cocycle of the path; schedule holes are attached when missing
    - closed: closed thermo window
    - schedule: thresholds and holes
    - fibers: target fibers; by default every schedule fiber whose k_max
      predecessors lie in both the schedule and the closed window
    - k_max: series truncation (default KMAX_DEFAULT)
    - closed_form: fiber -> exact theta, for the comparison column

    Per fiber, theta_{k_max} is extrapolated linearly in 1/N from the two
    largest N; the order of the fiber-averaged truncation is estimated
    with a third N when available.
    """
    k_max = settings.KMAX_DEFAULT if k_max is None else k_max
    cocycle = schedule_cocycle(cocycle=cocycle, schedule=schedule)
    if fibers is None:
        fibers = range(max(schedule.lo, closed.lo) + k_max, min(schedule.hi, closed.hi) + 1)
    fibers = tuple(fibers)
    if not fibers:
        raise WindowError(f"No fiber has {k_max} predecessors inside the schedule and the closed window")

    ladder = schedule.ladder
    shape = (len(ladder), len(fibers))
    table = np.full(shape + (k_max,), np.nan)
    hole_measures = np.zeros(shape)
    cross = 0.0
    for r, N in enumerate(ladder):
        for c, k in enumerate(fibers):
            series = qhat(cocycle=cocycle, closed=closed, label=N, k=k, k_max=k_max)
            table[r, c] = series.values
            hole_measures[r, c] = series.hole_measure
            cross = max(cross, series.cross_residual)
        logger.debug(f"q-hat table for N={N} done over {len(fibers)} fibers")

    truncations = 1.0 - np.cumsum(table, axis=2)
    last = truncations[:, :, -1]
    xs = 1.0 / np.array(ladder, dtype=float)
    notes = []
    if len(ladder) == 1:
        theta = last[0].copy()
        order = None
        notes.append("single N: theta not extrapolated")
    else:
        x1, x2 = xs[-1], xs[-2]
        y1, y2 = last[-1], last[-2]
        theta = y1 - x1 * (y2 - y1) / (x2 - x1)
        averaged = np.nanmean(last, axis=1)
        _, order = richardson_limit(xs.tolist(), averaged.tolist())
        if order is not None and abs(order - 1.0) > 0.25:
            notes.append(f"order estimate {order:.3f} differs from 1: extrapolated theta downgraded")

    weights = np.where(np.isfinite(table[:, :, 0]), hole_measures, 0.0)
    sums = np.nansum(table, axis=2)
    totals = weights.sum(axis=1)
    weighted_mass = np.divide((weights * sums).sum(axis=1), totals, out=np.full(len(ladder), np.nan), where=totals > 0)

    t = np.array([schedule.t_at(k) for k in fibers])
    reference = None if closed_form is None else np.array([closed_form(k) for k in fibers])
    if cross > QHAT_CROSS_TOL:
        notes.append(f"q-hat cross-check residual {cross:.3e} above {QHAT_CROSS_TOL:.0e}")
    finite = theta[np.isfinite(theta)]
    if finite.size and (finite.min() < -THETA_RANGE_TOL or finite.max() > 1.0 + THETA_RANGE_TOL):
        notes.append("extrapolated theta leaves [0, 1]")
    if np.any(np.cumsum(np.nan_to_num(table), axis=2) > 1.0 + QHAT_SUM_TOL):
        notes.append("q-hat partial sums exceed 1")
    notes.append("uniform-in-omega constants verified on the sampled window only")

    report = ThetaReport(
        k_max=k_max,
        ladder=ladder,
        fibers=fibers,
        t=t,
        qhat=table,
        truncations=truncations,
        hole_measures=hole_measures,
        theta=theta,
        order=order,
        weighted_mass=weighted_mass,
        cross_residual=cross,
        closed_form=reference,
        notes=tuple(notes),
    )
    logger.info(
        f"Theta over {len(fibers)} fibers, ladder {ladder}: mean theta={report.mean_theta:.6f}, "
        f"integral t*theta={report.integral:.6f}"
    )
    return report


def gumbel_check(
    *,
    cocycle: OperatorCocycle,
    closed: ThermoWindow,
    schedule: ThresholdSchedule,
    k: int,
    theta_integral: float,
    ladder: Optional[Sequence[int]] = None,
    depth: Optional[int] = None,
) -> GumbelReport:
    """Non-exceedance probabilities over N steps from fiber k against exp(-integral t theta).

    For every N: the nu_0 and mu_0 masses of the survivor set X_{k,N-1} by
    masked application, and the multiplier ratio prod lambda_eps / lambda_0
    from an open thermo window of label N over fibers k..k+N-1.
    """
    cocycle = schedule_cocycle(cocycle=cocycle, schedule=schedule)
    ladder = schedule.ladder if ladder is None else tuple(ladder)
    target = math.exp(-theta_integral)
    rows = []
    for N in ladder:
        window = thermo_window(cocycle=cocycle, label=N, lo=k, hi=k + N - 1, closed=closed, depth=depth)
        nu = survivor_measure(window=window, k=k, steps=N, which="nu")
        mu = survivor_measure(window=window, k=k, steps=N, which="mu")
        rows.append(
            GumbelRow(N=N, nu_value=nu.value, mu_value=mu.value, lambda_ratio=nu.multiplier_ratio, target=target)
        )
        logger.info(
            f"Gumbel N={N} from fiber {k}: nu={nu.value:.6f} mu={mu.value:.6f} "
            f"ratio={nu.multiplier_ratio:.6f} target={target:.6f}"
        )
    notes = ["uniform-in-omega constants verified on the sampled window only"]
    if len(rows) >= 2:
        gaps = [abs(row.nu_value - target) for row in rows]
        if gaps[-1] > gaps[0]:
            notes.append("nu_0 non-exceedance moves away from the target along the ladder")
    return GumbelReport(fiber=k, theta_integral=theta_integral, rows=tuple(rows), notes=tuple(notes))


def _hitting_block(
    *,
    closed: ThermoWindow,
    holes: Sequence[HoleSpec],
    k: int,
    horizon: int,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """First n >= 1 with x_n in the hole of fiber k + n; horizon + 1 when censored."""
    path = closed.cocycle.path
    tau = np.full(size, horizon + 1, dtype=np.int64)
    for j, x in reverse_orbits(window=closed, k=k, steps=horizon, size=size, rng=rng):
        if j >= 1:
            hit = holes[path.position(k + j)].contains(x)
            tau = np.where(hit, j, tau)
    return tau


def _ks_censored(scaled: np.ndarray, total: int, rate: float, end: float) -> float:
    """KS distance to Exp(rate) over [0, end] with censored samples kept in the denominator."""
    ordered = np.sort(scaled)
    cdf = stats.expon.cdf(ordered, scale=1.0 / rate) if rate > 0 else np.zeros_like(ordered)
    i = np.arange(ordered.size)
    upper = np.max((i + 1) / total - cdf, initial=0.0)
    lower = np.max(cdf - i / total, initial=0.0)
    tail_cdf = stats.expon.cdf(end, scale=1.0 / rate) if rate > 0 else 0.0
    tail = abs(tail_cdf - ordered.size / total)
    return float(max(upper, lower, tail))


def _operator_survival(
    *, cocycle: OperatorCocycle, closed: ThermoWindow, label, start: int, steps: int
) -> np.ndarray:
    """mu_{start,0}(X_{start,n-1}) for n = 0..steps."""
    values = closed.phi0[closed.row(start)]
    curve = [pairing(closed.nu0[closed.row(start)], values)]
    for j in range(start, start + steps):
        values = cocycle.apply(j, values, label) / closed.lam0_at(j)
        curve.append(pairing(closed.nu0[closed.row(j + 1)], values))
    return np.array(curve)


def hitting_time_mc(
    *,
    cocycle: OperatorCocycle,
    closed: ThermoWindow,
    schedule: ThresholdSchedule,
    N: int,
    k: int,
    samples: int,
    seed: int,
    theta_integral: float,
    horizon: Optional[int] = None,
    threads: Optional[int] = None,
) -> HittingReport:
    """First hitting times of the N-holes for mu_{k,0}-distributed starts, scaled by 1/N.

    Parameters
    - cocycle, closed, schedule: operator data and holes (label N)
    - N: ladder value
    - k: starting fiber
    - samples: number of orbits, drawn in blocks of MC_BLOCK_SIZE with one
      worker stream per block
    - seed: base seed of the worker streams
    - theta_integral: rate of the limiting exponential law
    - horizon: steps followed before censoring (default HITTING_HORIZON_FACTOR * N)
    - threads: worker threads (default EXPERIMENT_THREADS)

    Censored orbits stay in the KS denominator and are reported. The empirical
    survival P(tau > n) is checked against the operator value at the
    SURVIVAL_CHECKPOINTS multiples of N.
    """
    if samples < 1:
        raise ValueError(f"Sample count must be positive, got {samples}")
    cocycle = schedule_cocycle(cocycle=cocycle, schedule=schedule)
    horizon = HITTING_HORIZON_FACTOR * N if horizon is None else horizon
    threads = settings.EXPERIMENT_THREADS if threads is None else threads
    if not (closed.contains(k) and k + horizon <= closed.hi):
        raise WindowError(f"Hitting horizon [{k}, {k + horizon + 1}] leaves closed window [{closed.lo}, {closed.hi}]")

    holes = schedule.holes[N]
    block = settings.MC_BLOCK_SIZE
    sizes = [min(block, samples - start) for start in range(0, samples, block)]

    def run(worker: int) -> np.ndarray:
        rng = worker_generator(seed=seed, worker=worker)
        return _hitting_block(closed=closed, holes=holes, k=k, horizon=horizon, size=sizes[worker], rng=rng)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        tau = np.concatenate(list(pool.map(run, range(len(sizes)))))

    censored = int(np.count_nonzero(tau > horizon))
    if censored:
        logger.warning(f"{censored} of {samples} orbits did not hit within {horizon} steps")
    scaled = tau[tau <= horizon] / N
    ks = _ks_censored(scaled, samples, theta_integral, horizon / N)

    curve = _operator_survival(cocycle=cocycle, closed=closed, label=N, start=k + 1, steps=horizon)
    points = []
    for u in SURVIVAL_CHECKPOINTS:
        steps = int(round(u * N))
        if not 0 < steps <= horizon:
            continue
        operator = float(curve[steps])
        empirical = float(np.mean(tau > steps))
        sigma = math.sqrt(max(operator * (1.0 - operator), 0.0) / samples)
        points.append(SurvivalPoint(steps=steps, empirical=empirical, operator=operator, sigma=sigma))

    report = HittingReport(
        fiber=k,
        N=N,
        samples=samples,
        horizon=horizon,
        rate=theta_integral,
        times=tau / N,
        censored=censored,
        ks_distance=ks,
        survival=tuple(points),
    )
    logger.info(f"Hitting times N={N} from fiber {k}: KS={ks:.4f}, max z={report.max_z_score:.2f}")
    return report


def husler_consistency(
    *,
    schedule: ThresholdSchedule,
    N: int,
    start: Optional[int] = None,
    t_integral: Optional[float] = None,
    tol: Optional[float] = None,
) -> HuslerReport:
    """Birkhoff average of N mu_0(H_j) over j < N against the integral of t.

    Without ``t_integral`` the reference is the average of t over the same
    fibers, so the deviation is the mean of xi.
    """
    start = schedule.lo if start is None else start
    stop = min(start + N - 1, schedule.hi)
    columns = [schedule.column(j) for j in range(start, stop + 1)]
    rung = schedule.rung(N)
    average = float(np.mean(N * schedule.measures[rung, columns]))
    t_mean = float(np.mean(schedule.t[columns]))
    reference = t_mean if t_integral is None else t_integral
    if tol is None:
        tol = 10.0 * N * settings.THRESHOLD_TOL
        if t_integral is not None:
            tol += 3.0 * float(np.std(schedule.t[columns])) / math.sqrt(len(columns))
    report = HuslerReport(
        N=N,
        fibers=(start, stop),
        average=average,
        t_mean=t_mean,
        deviation=average - reference,
        tolerance=tol,
    )
    if not report.passed:
        logger.warning(f"Husler average {average:.6g} deviates from {reference:.6g} by {report.deviation:.3e}")
    return report
