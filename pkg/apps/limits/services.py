import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from django.conf import settings
from scipy import stats

from apps.driving.services import worker_generator
from apps.interval_maps.services import make_ball_hole
from apps.limits.constants import (
    BC_CHECKPOINTS,
    CENTERING_TOL,
    DEFAULT_LAGS,
    KS_LEVEL,
    MARTINGALE_TOL,
    SPRINDZUK_DELTA,
    VARIANCE_FIBERS,
    VARIANCE_FLOOR,
)
from apps.limits.types import (
    AzumaConstants,
    AzumaReport,
    AzumaRow,
    BirkhoffExperiment,
    BirkhoffObservable,
    BorelCantelliReport,
    CltReport,
    DegenerateVarianceError,
    RadiusSchedule,
    SummableScheduleError,
    VarianceReport,
)
from apps.thermo.constants import DECAY_STEPS
from apps.thermo.sampling import reverse_orbits
from apps.thermo.services import decay_rate
from apps.thermo.types import ThermoWindow
from apps.transfer_op.services import pairing
from apps.transfer_op.types import WindowError


logger = logging.getLogger(__name__)


def _mean(closed: ThermoWindow, k: int, f: np.ndarray) -> float:
    """mu_{k,0}(f) for a grid function f."""
    i = closed.row(k)
    return pairing(closed.nu0[i], closed.phi0[i] * f)


def centered_cells(*, closed: ThermoWindow, observable: BirkhoffObservable, k: int) -> tuple[np.ndarray, float]:
    """(v_k - m_k on the grid, m_k) with m_k = mu_{k,0}(v_k)."""
    cells = observable.cells(closed.n, closed.cocycle.tmap(k))
    mean = _mean(closed, k, cells)
    return cells - mean, mean


def _sup_centered(closed: ThermoWindow, observable: BirkhoffObservable, fibers: Sequence[int]) -> float:
    return observable.sup + max(abs(centered_cells(closed=closed, observable=observable, k=k)[1]) for k in fibers)


def variance_estimate(
    *,
    closed: ThermoWindow,
    observable: BirkhoffObservable,
    fibers: Optional[Sequence[int]] = None,
    lags: int = DEFAULT_LAGS,
) -> VarianceReport:
    """Green-Kubo variance from operator correlations, averaged over fibers.

    Parameters
    - closed: closed thermo window
    - observable: v, centred fiberwise before use
    - fibers: starting fibers k (default the first VARIANCE_FIBERS that leave room for ``lags``)
    - lags: correlation cutoff L

    The correlation mu_k(v_k . v_{k+l} o T^l_k) is nu0_{k+l}(v_{k+l} L^l(phi0_k v_k)) / prod lambda0,
    exact on an aligned grid. The tail beyond L is bounded by 2 C2^2 D kappa^(L+1) / (1 - kappa)
    with (kappa, D) the decay fit of the closed cocycle.
    """
    if lags < 0:
        raise ValueError(f"Lag cutoff must be nonnegative, got {lags}")
    last = closed.hi - lags
    if fibers is None:
        fibers = range(closed.lo, min(closed.lo + VARIANCE_FIBERS, last + 1))
    fibers = list(fibers)
    if not fibers or fibers[0] < closed.lo or fibers[-1] > last:
        raise WindowError(f"Variance fibers with {lags} lags must lie in [{closed.lo}, {last}]")

    cocycle = closed.cocycle
    correlations = np.zeros((len(fibers), lags))
    second = np.zeros(len(fibers))
    for c, k in enumerate(fibers):
        v, _ = centered_cells(closed=closed, observable=observable, k=k)
        second[c] = _mean(closed, k, v * v)
        pushed = closed.phi0[closed.row(k)] * v
        for step in range(lags):
            j = k + step
            pushed = cocycle.apply(j, pushed) / closed.lam0_at(j)
            ahead, _ = centered_cells(closed=closed, observable=observable, k=j + 1)
            correlations[c, step] = pairing(closed.nu0[closed.row(j + 1)], ahead * pushed)

    per_fiber = second + 2.0 * correlations.sum(axis=1)
    sigma2 = max(float(per_fiber.mean()), 0.0)

    decay = decay_rate(window=closed, k=fibers[0], steps=min(DECAY_STEPS, closed.hi + 1 - fibers[0]))
    sup = _sup_centered(closed, observable, fibers)
    if decay.kappa < 1.0:
        tail = 2.0 * sup ** 2 * decay.constant * decay.kappa ** (lags + 1) / (1.0 - decay.kappa)
    else:
        tail = math.inf
    logger.info(f"Green-Kubo variance over {len(fibers)} fibers, L={lags}: {sigma2:.6g} (tail <= {tail:.3g})")
    return VarianceReport(
        fibers=(fibers[0], fibers[-1]),
        lags=lags,
        sigma2=sigma2,
        second_moment=float(second.mean()),
        correlations=correlations.mean(axis=0),
        per_fiber=per_fiber,
        kappa=decay.kappa,
        constant=decay.constant,
        tail_bound=tail,
    )


def _birkhoff_block(
    *,
    closed: ThermoWindow,
    observable: BirkhoffObservable,
    k: int,
    n: int,
    means: np.ndarray,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    sums = np.zeros(size)
    for j, x in reverse_orbits(window=closed, k=k, steps=n - 1, size=size, rng=rng):
        sums += observable.at(x, closed.cocycle.tmap(k + j)) - means[j]
    return sums


def birkhoff_sums(
    *,
    closed: ThermoWindow,
    observable: BirkhoffObservable,
    k: int,
    n: int,
    samples: int,
    seed: int,
    threads: Optional[int] = None,
    sigma2: Optional[float] = None,
) -> BirkhoffExperiment:
    """S_n v = sum_{j < n} v_{k+j}(x_j) - m_{k+j} along orbits with x_0 ~ mu_{k,0}.

    Orbits are drawn in blocks of MC_BLOCK_SIZE, block b on worker stream b.
    """
    if n < 1 or samples < 1:
        raise ValueError(f"Horizon and sample count must be positive, got n={n}, samples={samples}")
    if not (closed.contains(k) and k + n <= closed.hi + 1):
        raise WindowError(f"Birkhoff horizon [{k}, {k + n}] leaves closed window [{closed.lo}, {closed.hi + 1}]")
    threads = settings.EXPERIMENT_THREADS if threads is None else threads

    means = np.empty(n)
    residual = 0.0
    for j in range(n):
        v, means[j] = centered_cells(closed=closed, observable=observable, k=k + j)
        residual = max(residual, abs(_mean(closed, k + j, v)))
    if residual > CENTERING_TOL:
        logger.warning(f"Centering residual {residual:.3g} exceeds {CENTERING_TOL}")

    block = settings.MC_BLOCK_SIZE
    sizes = [min(block, samples - start) for start in range(0, samples, block)]

    def run(worker: int) -> np.ndarray:
        rng = worker_generator(seed=seed, worker=worker)
        return _birkhoff_block(
            closed=closed, observable=observable, k=k, n=n, means=means, size=sizes[worker], rng=rng
        )

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        sums = np.concatenate(list(pool.map(run, range(len(sizes)))))

    logger.debug(f"Birkhoff sums from fiber {k}, n={n}: {samples} samples, variance/n={np.var(sums) / n:.6g}")
    return BirkhoffExperiment(
        observable=observable,
        fiber=k,
        n=n,
        samples=samples,
        sums=sums,
        means=means,
        centering_residual=residual,
        sigma2=sigma2,
    )


def clt_check(
    *,
    closed: ThermoWindow,
    observable: BirkhoffObservable,
    k: int,
    n: int,
    samples: int,
    seed: int,
    variance: Optional[VarianceReport] = None,
    threads: Optional[int] = None,
) -> tuple[CltReport, BirkhoffExperiment]:
    """KS test of S_n v / sqrt(n) against Normal(0, Sigma^2) at level KS_LEVEL."""
    if variance is None:
        variance = variance_estimate(closed=closed, observable=observable)
    if variance.sigma2 <= VARIANCE_FLOOR:
        raise DegenerateVarianceError(
            f"Sigma^2 = {variance.sigma2:.3g} is below the floor: v is a coboundary and S_n v stays bounded"
        )
    experiment = birkhoff_sums(
        closed=closed,
        observable=observable,
        k=k,
        n=n,
        samples=samples,
        seed=seed,
        threads=threads,
        sigma2=variance.sigma2,
    )
    result = stats.kstest(experiment.scaled, "norm", args=(0.0, math.sqrt(variance.sigma2)))
    report = CltReport(
        fiber=k,
        n=n,
        samples=samples,
        sigma2=variance.sigma2,
        ks_distance=float(result.statistic),
        p_value=float(result.pvalue),
        passed=bool(result.pvalue >= KS_LEVEL),
        direct_variance=experiment.direct_variance,
    )
    logger.info(f"CLT from fiber {k}, n={n}: KS={report.ks_distance:.4f} p={report.p_value:.3g}")
    return report, experiment


def _martingale(closed: ThermoWindow, observable: BirkhoffObservable, k: int, n: int) -> tuple[float, float]:
    """Run G_{j+1} = P_{k+j}(v_{k+j} + G_j) from G_0 = 0.

    P_j f = L_j(f phi0_j) / (lambda0_j phi0_{j+1}) is the mu-normalized operator, so the
    increments v_j + G_j - G_{j+1} o T_j have conditional mean G_{j+1} (1 - P_j 1).
    Returns (largest conditional mean, largest sup |G_j|).
    """
    cocycle = closed.cocycle
    g = np.zeros(closed.n)
    residual, largest = 0.0, 0.0
    for j in range(k, k + n):
        phi, ahead = closed.phi0[closed.row(j)], closed.phi0[closed.row(j + 1)]
        scale = closed.lam0_at(j) * ahead
        safe = np.where(scale > 0.0, scale, 1.0)
        v, _ = centered_cells(closed=closed, observable=observable, k=j)
        g = np.where(scale > 0.0, cocycle.apply(j, (v + g) * phi) / safe, 0.0)
        one = np.where(scale > 0.0, cocycle.apply(j, phi) / safe, 1.0)
        residual = max(residual, float(np.max(np.abs(g * (1.0 - one)))))
        largest = max(largest, float(np.max(np.abs(g))))
    return residual, largest


def azuma_bound_check(
    *,
    closed: ThermoWindow,
    observable: BirkhoffObservable,
    k: int,
    deviations: Sequence[float],
    horizons: Sequence[int],
    samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> AzumaReport:
    """Empirical mu_{k,0}(|S_n v| > deviation * n) against the martingale large deviation bound.

    Parameters
    - closed: closed thermo window covering k .. k + max(horizons)
    - observable: v
    - k: starting fiber
    - deviations: the kappa ladder
    - horizons: the n ladder
    - samples, seed, threads: Monte Carlo settings as in ``birkhoff_sums``

    C2 = sup |v - m|, U bounds phi0 and 1/phi0, (kappa, D) come from the decay fit and
    C1 = U^2 D C2 / (1 - kappa). The bound is asserted only for n > n0 = ceil(2 C1 / deviation).
    """
    longest = max(horizons)
    fibers = range(k, k + longest + 1)
    if not (closed.contains(k) and k + longest <= closed.hi + 1):
        raise WindowError(f"Azuma horizon [{k}, {k + longest}] leaves closed window [{closed.lo}, {closed.hi + 1}]")
    rows_phi = closed.phi0[closed.row(k) : closed.row(k + longest) + 1]
    U = float(max(rows_phi.max(), 1.0 / rows_phi.min())) if rows_phi.min() > 0.0 else math.inf
    decay = decay_rate(window=closed, k=k, steps=min(DECAY_STEPS, closed.hi + 1 - k))
    C2 = _sup_centered(closed, observable, fibers)
    C1 = U ** 2 * decay.constant * C2 / (1.0 - decay.kappa) if decay.kappa < 1.0 else math.inf
    constants = AzumaConstants(U=U, D=decay.constant, kappa=decay.kappa, C1=C1, C2=C2)

    residual, largest = _martingale(closed, observable, k, longest)
    if residual > MARTINGALE_TOL:
        logger.warning(f"Martingale increments have conditional mean up to {residual:.3g}")

    rows = []
    for n in horizons:
        experiment = birkhoff_sums(
            closed=closed, observable=observable, k=k, n=n, samples=samples, seed=seed, threads=threads
        )
        for deviation in deviations:
            n0 = constants.n0(deviation) if math.isfinite(C1) else sys.maxsize
            empirical = float(np.mean(np.abs(experiment.sums) > deviation * n))
            rows.append(
                AzumaRow(deviation=deviation, n=n, n0=n0, empirical=empirical, bound=constants.bound(deviation, n))
            )

    report = AzumaReport(
        fiber=k,
        constants=constants,
        rows=tuple(rows),
        martingale_residual=residual,
        g_norm_ratio=largest / C1 if C1 > 0.0 else 0.0,
    )
    for row in report.violations:
        logger.error(f"Azuma bound violated at n={row.n}, deviation={row.deviation}: {row.empirical} > {row.bound}")
    return report


def _ball_masses(*, closed: ThermoWindow, center: float, schedule: RadiusSchedule, k: int, n: int) -> np.ndarray:
    """mu_{k+j,0}(B(center, xi_j)) for j = 1..n."""
    edges = np.arange(closed.n + 1) / closed.n
    masses = np.empty(n)
    for j in range(1, n + 1):
        i = closed.row(k + j)
        cdf = np.concatenate(([0.0], np.cumsum(closed.phi0[i] * closed.nu0[i]) / closed.n))
        ball = make_ball_hole(center=center, radius=schedule.radius(j))
        masses[j - 1] = sum(np.interp(b, edges, cdf) - np.interp(a, edges, cdf) for a, b in ball.intervals)
    return masses


def _entry_block(
    *,
    closed: ThermoWindow,
    center: float,
    schedule: RadiusSchedule,
    k: int,
    n: int,
    stops: Sequence[int],
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Entry counts #{1 <= j <= stop : x_j in B_j} for every stop, one row per stop."""
    counts = np.zeros((len(stops), size), dtype=np.int64)
    for j, x in reverse_orbits(window=closed, k=k, steps=n, size=size, rng=rng):
        if j < 1:
            continue
        hit = make_ball_hole(center=center, radius=schedule.radius(j)).contains(x)
        for s, stop in enumerate(stops):
            if j <= stop:
                counts[s] += hit
    return counts


def borel_cantelli_count(
    *,
    closed: ThermoWindow,
    center: float,
    schedule: RadiusSchedule,
    k: int,
    n: int,
    samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> BorelCantelliReport:
    """Entries of mu_{k,0} orbits into the shrinking balls B(center, xi_j), divided by E_n.

    The reported error bound is the Sprindzuk remainder sqrt(E) log(E)^(3/2 + delta) / E.
    """
    if schedule.is_summable:
        raise SummableScheduleError(
            f"Radii {schedule.scale} / j^{schedule.exponent} are summable, so E_n stays bounded"
        )
    if not (closed.contains(k) and k + n <= closed.hi + 1):
        raise WindowError(f"Borel-Cantelli horizon [{k}, {k + n}] leaves closed window [{closed.lo}, {closed.hi + 1}]")
    threads = settings.EXPERIMENT_THREADS if threads is None else threads

    masses = _ball_masses(closed=closed, center=center, schedule=schedule, k=k, n=n)
    cumulative = np.cumsum(masses)
    stops = sorted({max(1, int(round(fraction * n))) for fraction in BC_CHECKPOINTS} | {n})

    block = settings.MC_BLOCK_SIZE
    sizes = [min(block, samples - start) for start in range(0, samples, block)]

    def run(worker: int) -> np.ndarray:
        rng = worker_generator(seed=seed, worker=worker)
        return _entry_block(
            closed=closed, center=center, schedule=schedule, k=k, n=n, stops=stops, size=sizes[worker], rng=rng
        )

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        counts = np.concatenate(list(pool.map(run, range(len(sizes)))), axis=1)

    checkpoints = tuple(
        (stop, float(cumulative[stop - 1]), float(counts[s].mean() / cumulative[stop - 1]))
        for s, stop in enumerate(stops)
        if cumulative[stop - 1] > 0.0
    )
    expected = float(cumulative[-1])
    if expected > math.e:
        error = math.sqrt(expected) * math.log(expected) ** (1.5 + SPRINDZUK_DELTA) / expected
    else:
        error = math.inf
    report = BorelCantelliReport(
        fiber=k,
        center=center,
        schedule=schedule,
        n=n,
        samples=samples,
        expected=expected,
        counts=counts[-1],
        checkpoints=checkpoints,
        error_bound=error,
    )
    logger.info(f"Borel-Cantelli from fiber {k}: E_n={expected:.4g}, ratio={report.ratio:.4f} (error <= {error:.3g})")
    return report
