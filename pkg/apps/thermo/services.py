import logging
import math
from typing import Any, Mapping, Optional, Sequence

import numpy as np
from django.conf import settings

from apps.thermo.constants import (
    CERTIFICATION_OFFSET,
    CONDITIONAL_TEST_BLOCKS,
    CONFORMALITY_SAMPLE_COUNT,
    DECAY_SAMPLE_COUNT,
    DECAY_STEPS,
    IDENTITY_TOL,
    NULL_HOLE_MEASURE,
    PILOT_CUTS,
    PILOT_DEPTH,
    PILOT_STEPS,
    SURVIVOR_MEASURES,
)
from apps.thermo.types import (
    ConditionalInvariance,
    ConvergenceError,
    CorrelationReport,
    DecayReport,
    DegenerateHoleError,
    EscapeRateReport,
    EscapeRateRow,
    MonotonicityReport,
    PerturbationIdentity,
    SurvivorResult,
    ThermoFiberData,
    ThermoWindow,
)
from apps.transfer_op.services import pairing
from apps.transfer_op.types import GridDensity, OperatorCocycle, WindowError


logger = logging.getLogger(__name__)


def _forward_sweep(cocycle: OperatorCocycle, label: Any, start: int, stop: int, keep_from: int) -> np.ndarray:
    """Directions of L^(k - start) 1 for fibers keep_from..stop, each scaled to mean 1."""
    values = np.ones(cocycle.n)
    kept = []
    if start >= keep_from:
        kept.append(values)
    for k in range(start, stop):
        values = cocycle.apply(k, values, label)
        mean = float(np.mean(values))
        if not mean > 0.0:
            raise DegenerateHoleError(f"Pullback from fiber {start} lost all mass at fiber {k + 1}")
        values = values / mean
        if k + 1 >= keep_from:
            kept.append(values)
    return np.array(kept)


def _backward_sweep(cocycle: OperatorCocycle, label: Any, start: int, stop: int, keep_to: int) -> np.ndarray:
    """Directions of (L^(stop - k))^* 1 for fibers start..keep_to, each scaled to mean 1."""
    values = np.ones(cocycle.n)
    kept = {}
    if stop <= keep_to:
        kept[stop] = values
    for k in range(stop - 1, start - 1, -1):
        values = cocycle.adjoint(k, values, label)
        mean = float(np.mean(values))
        if not mean > 0.0:
            raise DegenerateHoleError(f"Adjoint sweep from fiber {stop} lost all mass at fiber {k}")
        values = values / mean
        if k <= keep_to:
            kept[k] = values
    return np.array([kept[k] for k in range(start, keep_to + 1)])


def _discrepancy(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.max(np.abs(a), axis=1)
    return float(np.max(np.max(np.abs(a - b), axis=1) / scale))


def _row_pairings(nu: np.ndarray, f: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", nu, f) / f.shape[1]


def _depth_room(*, first: int, last: int, lo: Optional[int], hi: Optional[int]) -> int:
    """Largest depth whose certified sweeps fit in [first, last] around lo..hi."""
    if lo is None and hi is None:
        return (last - first - 2 * CERTIFICATION_OFFSET - 1) // 2
    room_left = (lo - first) if lo is not None else last - first
    room_right = (last - hi - 1) if hi is not None else last - first
    return min(room_left, room_right) - CERTIFICATION_OFFSET


def _random_cut_steps(*, n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    columns = []
    for _ in range(count):
        cuts = np.sort(rng.choice(np.arange(1, n), size=PILOT_CUTS, replace=False))
        sizes = np.diff(np.concatenate(([0], cuts, [n])))
        columns.append(np.repeat(rng.standard_normal(PILOT_CUTS + 1), sizes))
    return np.column_stack(columns)


def pilot_depth(
    *,
    cocycle: OperatorCocycle,
    label: Any = None,
    tol: Optional[float] = None,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
    seed: int = 0,
) -> int:
    """Pull depth n with D kappa^n below the certification tolerance.

    kappa and D come from decay_rate on an uncertified window at PILOT_DEPTH,
    placed at lo or near the start of the path, with step functions cut at
    random cells. The result is clamped to [CERTIFICATION_OFFSET,
    MAX_PULL_DEPTH] and to the room the fiber range lo..hi leaves in the path.
    """
    tol = settings.THERMO_TOL if tol is None else tol
    first, last = cocycle.path.first, cocycle.path.last
    room = _depth_room(first=first, last=last, lo=lo, hi=hi)

    pilot_margin = PILOT_DEPTH + CERTIFICATION_OFFSET
    pilot_lo = first + pilot_margin
    if lo is not None:
        pilot_lo = max(pilot_lo, min(lo, last - pilot_margin - PILOT_STEPS))
    pilot_hi = pilot_lo + PILOT_STEPS - 1
    if pilot_hi + 1 + pilot_margin > last or cocycle.n <= PILOT_CUTS:
        logger.warning(
            f"Path [{first}, {last}] is too short for a pilot window, "
            f"using DEFAULT_PULL_DEPTH={settings.DEFAULT_PULL_DEPTH}"
        )
        depth = settings.DEFAULT_PULL_DEPTH
    else:
        pilot = _certified_window(
            cocycle=cocycle, label=label, depth=PILOT_DEPTH, tol=math.inf, lo=pilot_lo, hi=pilot_hi
        )
        phi, nu = pilot.phi[0], pilot.nu[0]
        block = _random_cut_steps(n=cocycle.n, count=DECAY_SAMPLE_COUNT, seed=seed)
        block = block - np.outer(phi, nu @ block / cocycle.n)
        decay = decay_rate(window=pilot, k=pilot_lo, steps=PILOT_STEPS, functions=list(block.T))
        target = tol / max(decay.constant, 1.0)
        if decay.kappa >= 1.0:
            logger.warning(f"Pilot window shows no decay (label={label!r}), using the largest depth that fits")
            depth = settings.MAX_PULL_DEPTH
        elif decay.kappa > 0.0 and target < 1.0:
            depth = math.ceil(math.log(target) / math.log(decay.kappa))
        else:
            settled = np.flatnonzero(decay.norms <= target)
            depth = int(settled[0]) + 1 if settled.size else PILOT_STEPS

    depth = max(CERTIFICATION_OFFSET, min(depth, settings.MAX_PULL_DEPTH, room))
    logger.debug(f"Pilot depth label={label!r}: {depth}")
    return depth


def thermo_window(
    *,
    cocycle: OperatorCocycle,
    label: Any = None,
    depth: Optional[int] = None,
    tol: Optional[float] = None,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
    closed: Optional[ThermoWindow] = None,
) -> ThermoWindow:
    """Leading triple (lambda, phi, nu) of the cocycle on fibers lo..hi.

    Parameters
    - cocycle: operator cocycle of the fiber path
    - label: hole label, the closed cocycle when None
    - depth: pullback and adjoint depth (default from pilot_depth)
    - tol: certification tolerance (default THERMO_TOL)
    - lo, hi: fiber range; defaults to the range of ``closed`` or the largest range the window supports
    - closed: closed window covering lo..hi, reused for an open label

    Every sweep is repeated from CERTIFICATION_OFFSET fibers closer and the
    largest relative sup-difference is the certification residual; above
    ``tol`` a ConvergenceError is raised. A depth chosen by pilot_depth is
    doubled, within the room of the path, until the sweeps certify.
    """
    if closed is not None:
        lo = closed.lo if lo is None else lo
        hi = closed.hi if hi is None else hi
    if depth is not None:
        return _certified_window(cocycle=cocycle, label=label, depth=depth, tol=tol, lo=lo, hi=hi, closed=closed)

    depth = pilot_depth(cocycle=cocycle, label=label, tol=tol, lo=lo, hi=hi)
    cap = min(settings.MAX_PULL_DEPTH, _depth_room(first=cocycle.path.first, last=cocycle.path.last, lo=lo, hi=hi))
    while True:
        try:
            return _certified_window(cocycle=cocycle, label=label, depth=depth, tol=tol, lo=lo, hi=hi, closed=closed)
        except ConvergenceError as e:
            if depth >= cap:
                raise
            retry = min(2 * depth, cap)
            logger.warning(f"Depth {depth} did not certify (residual {e.residual:.2e}), retrying at {retry}")
            depth = retry


def _certified_window(
    *,
    cocycle: OperatorCocycle,
    label: Any,
    depth: int,
    tol: Optional[float],
    lo: Optional[int],
    hi: Optional[int],
    closed: Optional[ThermoWindow] = None,
) -> ThermoWindow:
    tol = settings.THERMO_TOL if tol is None else tol
    if depth > settings.MAX_PULL_DEPTH:
        raise ValueError(f"Pull depth {depth} exceeds MAX_PULL_DEPTH={settings.MAX_PULL_DEPTH}")

    first, last = cocycle.path.first, cocycle.path.last
    margin = depth + CERTIFICATION_OFFSET
    lo = first + margin if lo is None else lo
    hi = last - margin - 1 if hi is None else hi
    if lo > hi or lo - margin < first or hi + 1 + margin > last:
        raise WindowError(
            f"Fibers [{lo}, {hi}] at depth {depth} need the window [{lo - margin}, {hi + 1 + margin}], "
            f"have [{first}, {last}]"
        )

    if label is not None and closed is None:
        closed = thermo_window(cocycle=cocycle, depth=depth, tol=tol, lo=lo, hi=hi)
    if closed is not None and not (closed.lo <= lo and closed.hi >= hi):
        raise WindowError(f"Closed window [{closed.lo}, {closed.hi}] does not cover [{lo}, {hi}]")

    deep = _forward_sweep(cocycle, label, lo - margin, hi + 1, lo)
    shallow = _forward_sweep(cocycle, label, lo - depth, hi + 1, lo)
    forward_residual = _discrepancy(deep, shallow)
    phi_raw = deep

    deep = _backward_sweep(cocycle, label, lo, hi + 1 + margin, hi + 1)
    shallow = _backward_sweep(cocycle, label, lo, hi + 1 + depth, hi + 1)
    backward_residual = _discrepancy(deep, shallow)
    nu_raw = deep

    certification = max(forward_residual, backward_residual)
    if certification > tol:
        raise ConvergenceError(
            f"Sweeps at depth {depth} and {margin} differ by {certification:.3e} > {tol:.1e} "
            f"(label={label!r}, fibers [{lo}, {hi}])",
            residual=certification,
        )

    fibers = range(lo, hi + 1)
    if closed is None:
        nu0 = nu_raw / np.mean(nu_raw, axis=1)[:, None]
        phi0 = phi_raw / _row_pairings(nu0, phi_raw)[:, None]
        nu, phi = nu0, phi0
    else:
        rows = [closed.row(k) for k in range(lo, hi + 2)]
        nu0, phi0 = closed.nu0[rows], closed.phi0[rows]
        normalizer = _row_pairings(nu0, phi_raw)
        if np.any(normalizer <= 0.0):
            raise DegenerateHoleError(f"Open density for label {label!r} pairs to zero against nu0")
        phi = phi_raw / normalizer[:, None]
        nu = nu_raw / _row_pairings(nu_raw, phi)[:, None]

    lam = np.empty(len(fibers))
    lam0 = np.empty(len(fibers))
    residual = np.empty(len(fibers))
    hole_measure = np.empty(len(fibers))
    for i, k in enumerate(fibers):
        pushed = cocycle.apply(k, phi[i], label)
        lam[i] = pairing(nu0[i + 1], pushed)
        residual[i] = np.max(np.abs(pushed - lam[i] * phi[i + 1])) / np.max(np.abs(phi[i + 1]))
        lam0[i] = lam[i] if closed is None else closed.lam0_at(k)
        hole_measure[i] = pairing(nu0[i], phi0[i] * (1.0 - cocycle.mask(k, label)))

    window = ThermoWindow(
        cocycle=cocycle,
        label=label,
        depth=depth,
        lo=lo,
        hi=hi,
        lam=lam,
        phi=phi,
        nu=nu,
        lam0=lam0,
        phi0=phi0,
        nu0=nu0,
        residual=residual,
        certification=certification,
        hole_measure=hole_measure,
    )
    logger.info(
        f"Thermo window label={label!r} fibers [{lo}, {hi}] depth={depth}: "
        f"certification={certification:.2e} max residual={float(residual.max()):.2e}"
    )
    return window


def fiber_data(*, window: ThermoWindow, k: int) -> ThermoFiberData:
    i = window.row(k)
    phi = window.phi[i]
    return ThermoFiberData(
        fiber=k,
        label=window.label,
        lam=window.lam_at(k),
        phi=GridDensity(values=phi),
        nu=window.nu[i],
        h=GridDensity(values=window.h(k)),
        depth=window.depth,
        equivariance_residual=float(window.residual[k - window.lo]),
        phi_bounds=(float(phi.min()), float(phi.max())),
    )


def equivariant_density(
    *,
    cocycle: OperatorCocycle,
    label: Any = None,
    k: int,
    depth: Optional[int] = None,
) -> tuple[GridDensity, float]:
    """(phi_k, lambda_k) with nu_{k,0}(phi_k) = 1 and lambda_k = nu_{k+1,0}(L_k phi_k)."""
    window = thermo_window(cocycle=cocycle, label=label, depth=depth, lo=k, hi=k)
    return GridDensity(values=window.phi[0]), window.lam_at(k)


def conformal_functional(
    *,
    cocycle: OperatorCocycle,
    label: Any = None,
    k: int,
    depth: Optional[int] = None,
) -> np.ndarray:
    """nu_k as a dual weight vector: nu(1) = 1 when closed, nu(phi) = 1 when open."""
    window = thermo_window(cocycle=cocycle, label=label, depth=depth, lo=k, hi=k)
    return window.nu[0]


def survivor_measure(*, window: ThermoWindow, k: int, steps: int, which: str = "nu") -> SurvivorResult:
    """Closed-measure mass of the points that avoid the holes for ``steps`` steps.

    Parameters
    - window: thermo window of the open label (a closed window gives 1)
    - k: starting fiber
    - steps: number of steps N; the survivor set is X_{k, N-1}
    - which: "nu" for the conformal measure, "mu" for the invariant one

    The value is nu_{k+N,0}(L^N_eps f) / prod lambda_0 with f = 1 or phi_0;
    the spectral prediction is prod(lambda_eps / lambda_0) * nu_{k,eps}(f).
    """
    if which not in SURVIVOR_MEASURES:
        raise ValueError(f"Survivor measure must be one of {SURVIVOR_MEASURES}, got {which!r}")
    if steps < 0:
        raise ValueError(f"Number of steps must be nonnegative, got {steps}")
    if not (window.contains(k) and k + steps <= window.hi + 1):
        raise WindowError(f"Fibers [{k}, {k + steps}] leave the thermo window [{window.lo}, {window.hi + 1}]")

    i = window.row(k)
    f = np.ones(window.n) if which == "nu" else window.phi0[i]
    values = f
    ratio = 1.0
    for j in range(k, k + steps):
        values = window.cocycle.apply(j, values, window.label) / window.lam0_at(j)
        ratio *= window.lam_at(j) / window.lam0_at(j)
    value = pairing(window.nu0[window.row(k + steps)], values)
    prediction = ratio * pairing(window.nu[i], f)
    return SurvivorResult(
        fiber=k, steps=steps, which=which, value=value, prediction=prediction, multiplier_ratio=ratio
    )


def survivor_curve(*, window: ThermoWindow, k: int, steps: int, which: str = "nu") -> np.ndarray:
    """Survivor measures for N = 0..steps in a single pass."""
    if not (window.contains(k) and k + steps <= window.hi + 1):
        raise WindowError(f"Fibers [{k}, {k + steps}] leave the thermo window [{window.lo}, {window.hi + 1}]")
    values = np.ones(window.n) if which == "nu" else window.phi0[window.row(k)]
    curve = [pairing(window.nu0[window.row(k)], values)]
    for j in range(k, k + steps):
        values = window.cocycle.apply(j, values, window.label) / window.lam0_at(j)
        curve.append(pairing(window.nu0[window.row(j + 1)], values))
    return np.array(curve)


def escape_rate(
    *,
    windows: Mapping[Any, ThermoWindow],
    steps: int,
    k: Optional[int] = None,
    target: Optional[float] = None,
) -> EscapeRateReport:
    """Escape rates of a hole ladder, two ways, and their ratio to the hole measure.

    Parameters
    - windows: label -> open thermo window (same path, same fibers)
    - steps: N_max; rates are fitted on [N_max / 4, N_max]
    - k: starting fiber, the first fiber of the windows by default
    - target: expected limit of rate / mu(H), for the report

    The decay fit is the secant of log nu_0(X_N); the Birkhoff rate averages
    log lambda_0 - log lambda_eps over the same fibers. The ratio rate / mu(H)
    is extrapolated linearly in mu(H) to zero from the two smallest holes.
    """
    if steps < 4:
        raise ValueError(f"Escape-rate fits need at least 4 steps, got {steps}")
    rows = []
    notes = []
    start = steps // 4
    fibers = None
    for label, window in windows.items():
        k0 = window.lo if k is None else k
        fibers = (k0, k0 + steps)
        curve = survivor_curve(window=window, k=k0, steps=steps)
        if curve[start] <= 0.0 or curve[steps] <= 0.0:
            raise DegenerateHoleError(f"Survivor set of label {label!r} is empty after {steps} steps")
        rate_fit = -(math.log(curve[steps]) - math.log(curve[start])) / (steps - start)
        span = range(k0 + start, k0 + steps)
        rate_birkhoff = float(np.mean([math.log(window.lam0_at(j)) - math.log(window.lam_at(j)) for j in span]))
        hole = float(np.mean([window.hole_measure[j - window.lo] for j in span]))
        ratio = rate_birkhoff / hole if hole > NULL_HOLE_MEASURE else float("nan")
        agreement = abs(rate_fit - rate_birkhoff) / max(abs(rate_birkhoff), NULL_HOLE_MEASURE)
        rows.append(
            EscapeRateRow(
                label=label,
                hole_measure=hole,
                rate_fit=rate_fit,
                rate_birkhoff=rate_birkhoff,
                ratio=ratio,
                agreement=agreement,
            )
        )
        logger.info(f"Escape rate {label!r}: fit={rate_fit:.6e} birkhoff={rate_birkhoff:.6e} mu(H)={hole:.4e}")

    usable = sorted((row for row in rows if math.isfinite(row.ratio)), key=lambda row: row.hole_measure)
    order = None
    if not usable:
        extrapolated = float("nan")
        notes.append("no fiber with a hole of positive measure")
    elif len(usable) == 1:
        extrapolated = usable[0].ratio
        notes.append("single hole: ratio not extrapolated")
    else:
        (x1, r1), (x2, r2) = [(row.hole_measure, row.ratio) for row in usable[:2]]
        extrapolated = r1 - x1 * (r2 - r1) / (x2 - x1)
        if len(usable) >= 3:
            r3 = usable[2].ratio
            if abs(r2 - r1) > 0 and abs(r3 - r2) > 0 and x2 != x1:
                order = math.log(abs(r3 - r2) / abs(r2 - r1)) / math.log(x2 / x1)

    return EscapeRateReport(
        rows=tuple(rows),
        extrapolated_ratio=extrapolated,
        order_estimate=order,
        target=target,
        fibers=fibers,
        notes=tuple(notes),
    )


def _block_masses(weights: np.ndarray) -> np.ndarray:
    blocks = np.array_split(weights, min(CONDITIONAL_TEST_BLOCKS, weights.shape[0]))
    masses = np.array([block.sum() for block in blocks])
    return np.concatenate([masses, np.cumsum(masses)])


def conditionally_invariant(*, window: ThermoWindow, k: int) -> ConditionalInvariance:
    """Conditionally invariant density at fiber k (with respect to nu_{k,0}).

    varrho_k is proportional to 1_{H^c} h_eps; it is checked against
    varrho_{k+1}(A) = varrho_k(T^-1 (A ∩ J_{k+1})) / varrho_k(T^-1 J_{k+1}) on
    unions of cell blocks, where J is the hole complement.
    """
    i = window.row(k)
    mask = window.mask(k)
    psi = mask * window.h(k)
    normalizer = pairing(window.nu0[i], psi)
    if not normalizer > 0.0:
        raise DegenerateHoleError(f"Hole covers the support of h on fiber {k}")
    density = psi / normalizer

    following = window.mask(k + 1)
    lhs = window.nu0[i + 1] * following * window.h(k + 1)
    rhs = window.nu0[i + 1] * window.cocycle.apply(k, density) * following
    if not (lhs.sum() > 0.0 and rhs.sum() > 0.0):
        raise DegenerateHoleError(f"Hole on fiber {k + 1} swallows the pushed density")
    residual = float(np.max(np.abs(_block_masses(lhs / lhs.sum()) - _block_masses(rhs / rhs.sum()))))

    support = density[mask > 0.0]
    return ConditionalInvariance(
        fiber=k,
        density=GridDensity(values=density),
        rho=window.rho(k),
        residual=residual,
        bounds=(float(support.min()), float(support.max())),
    )


def _random_steps(*, n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    blocks = 8
    sizes = [len(part) for part in np.array_split(np.arange(n), blocks)]
    return np.column_stack([np.repeat(rng.standard_normal(blocks), sizes) for _ in range(count)])


def fit_geometric_rate(norms: np.ndarray) -> tuple[float, float]:
    """(kappa, D) from norms[j] ~ D kappa^(j + 1) over the tail above round-off."""
    steps = norms.shape[0]
    j = np.arange(steps)
    keep = (j >= steps // 4) & (norms > 1e-13)
    if keep.sum() < 2:
        return 0.0, float(norms.max(initial=0.0))
    slope = np.polyfit(j[keep], np.log(norms[keep]), 1)[0]
    kappa = float(min(math.exp(slope), 1.0))
    constant = float(np.max(norms[norms > 1e-13] / kappa ** (j[norms > 1e-13] + 1)))
    return kappa, constant


def decay_rate(
    *,
    window: ThermoWindow,
    k: int,
    steps: int = DECAY_STEPS,
    functions: Optional[Sequence[np.ndarray]] = None,
    sample_count: int = DECAY_SAMPLE_COUNT,
    seed: int = 0,
) -> DecayReport:
    """Fitted contraction rate of L^n_eps / prod lambda on nu_eps-mean-zero functions.

    Random step functions are projected with f - nu_eps(f) phi_eps. Supplied
    functions must already satisfy nu_eps(f) = 0.
    """
    if not (window.contains(k) and k + steps <= window.hi + 1):
        raise WindowError(f"Fibers [{k}, {k + steps}] leave the thermo window")
    i = window.row(k)
    phi, nu = window.phi[i], window.nu[i]
    if functions is None:
        block = _random_steps(n=window.n, count=sample_count, seed=seed)
        block = block - np.outer(phi, nu @ block / window.n)
    else:
        block = np.column_stack(functions)
        means = nu @ block / window.n
        scale = np.max(np.abs(block), axis=0)
        if np.any(np.abs(means) > 1e-8 * scale):
            raise ValueError("Decay test functions must have zero nu_eps-mean")

    initial = np.max(np.abs(block), axis=0)
    norms = np.empty(steps)
    for step, j in enumerate(range(k, k + steps)):
        block = window.cocycle.apply(j, block, window.label) / window.lam_at(j)
        norms[step] = float(np.max(np.max(np.abs(block), axis=0) / initial))
    kappa, constant = fit_geometric_rate(norms)
    logger.debug(f"Decay at fiber {k} label={window.label!r}: kappa={kappa:.4f} D={constant:.3g}")
    return DecayReport(fiber=k, label=window.label, kappa=kappa, constant=constant, norms=norms)


def correlation_check(
    *,
    window: ThermoWindow,
    k: int,
    steps: int = DECAY_STEPS,
    pairs: int = 4,
    seed: int = 0,
    slack: float = 0.05,
) -> CorrelationReport:
    """Decay of |mu_k((f o T^n) g) - mu_{k+n}(f) mu_k(g)| for random step pairs.

    mu_{k,eps} = phi_eps nu_eps. The check passes when the correlations decay
    at least as fast as (kappa_eps + slack)^n.
    """
    decay = decay_rate(window=window, k=k, steps=steps, seed=seed)
    steps_fg = _random_steps(n=window.n, count=2 * pairs, seed=seed + 1)
    f_all, g_all = steps_fg[:, :pairs], steps_fg[:, pairs:]
    i = window.row(k)
    pushed = window.phi[i][:, None] * g_all
    mean_g = window.nu[i] @ pushed / window.n

    correlations = np.empty(steps)
    for step, j in enumerate(range(k, k + steps)):
        pushed = window.cocycle.apply(j, pushed, window.label) / window.lam_at(j)
        r = window.row(j + 1)
        joint = np.einsum("i,ij,ij->j", window.nu[r], f_all, pushed) / window.n
        mean_f = window.nu[r] @ (window.phi[r][:, None] * f_all) / window.n
        correlations[step] = float(np.max(np.abs(joint - mean_f * mean_g)))

    kappa, constant = fit_geometric_rate(correlations / max(correlations[0], 1e-300))
    passed = bool(kappa <= decay.kappa + slack or correlations[-1] <= 1e-12)
    if not passed:
        logger.warning(f"Correlations at fiber {k} decay at {kappa:.4f}, slower than kappa_eps={decay.kappa:.4f}")
    return CorrelationReport(fiber=k, correlations=correlations, kappa=kappa, constant=constant, passed=passed)


def perturbation_identity(*, window: ThermoWindow, k: int, seed: int = 0) -> PerturbationIdentity:
    """Delta, eta and the conformality residual of an open window at fiber k.

    Delta = nu_{k+1,0}((L_0 - L_eps) phi_{k,0}) is computed from the operators and
    compared with lambda_0 mu_0(H). eta is the dual norm of
    nu_{k+1,0} o (L_0 - L_eps) on step functions, i.e. the l1 mass of
    adjoint(nu_{k+1,0}) on the hole cells.
    """
    if not window.is_open:
        raise ValueError("Perturbation identities need an open window")
    if not window.contains(k):
        raise WindowError(f"Fiber {k} outside thermo window [{window.lo}, {window.hi}]")
    i, r = window.row(k), window.row(k + 1)
    covered = 1.0 - window.mask(k)
    lam0 = window.lam0_at(k)

    delta = pairing(window.nu0[r], window.cocycle.apply(k, covered * window.phi0[i]))
    functional = window.cocycle.adjoint(k, window.nu0[r]) * covered
    eta = float(np.abs(functional).sum() / window.n)
    eta_bound = lam0 * pairing(window.nu0[i], covered)

    samples = _random_steps(n=window.n, count=CONFORMALITY_SAMPLE_COUNT, seed=seed)
    pushed = window.cocycle.apply(k, samples, window.label)
    conformality = np.abs(window.nu[r] @ pushed - window.lam_at(k) * (window.nu[i] @ samples)) / window.n
    result = PerturbationIdentity(
        fiber=k,
        label=window.label,
        delta=delta,
        predicted_delta=lam0 * float(window.hole_measure[i]),
        eta=eta,
        eta_bound=eta_bound,
        conformality_residual=float(conformality.max() / np.abs(samples).max()),
    )
    if result.delta_residual > IDENTITY_TOL or eta > eta_bound * (1 + IDENTITY_TOL) + IDENTITY_TOL:
        logger.warning(
            f"Perturbation identities at fiber {k} label={window.label!r}: "
            f"Delta residual {result.delta_residual:.3e}, eta {eta:.6g} against bound {eta_bound:.6g}"
        )
    return result


def multiplier_monotonicity(*, windows: Sequence[ThermoWindow], tol: float = IDENTITY_TOL) -> MonotonicityReport:
    """lambda_eps' >= lambda_eps for nested holes, on the fibers all windows share.

    ``windows`` run from the largest hole to the smallest; the closed multipliers
    of the first window close the chain.
    """
    if not windows:
        raise ValueError("Monotonicity check needs at least one window")
    lo = max(w.lo for w in windows)
    hi = min(w.hi for w in windows)
    if lo > hi:
        raise WindowError("Thermo windows share no fiber")
    chain = [np.array([w.lam_at(k) for k in range(lo, hi + 1)]) for w in windows]
    chain.append(np.array([windows[0].lam0_at(k) for k in range(lo, hi + 1)]))
    worst = max(float(np.max(a - b)) for a, b in zip(chain, chain[1:]))
    worst = max(worst, 0.0)
    return MonotonicityReport(
        fiber_range=(lo, hi),
        labels=tuple(w.label for w in windows),
        worst_violation=worst,
        passed=worst <= tol,
    )
