import itertools
import logging
from typing import Optional, Sequence

import numpy as np
from django.conf import settings

from apps.perturb.constants import (
    ENTRY_RANGE,
    FIRST_ORDER_TOL,
    IDENTITY_TOL,
    MASK_RULES,
    P6_DELTA_FLOOR,
    P6_SPREAD,
    P7_TOL,
    P8_TOL,
    Q_DECAY_STEPS,
    Q_SAMPLE_COUNT,
    VERTEX_ENUMERATION_MAX_DIM,
    get_default_eps_ladder,
)
from apps.perturb.extrapolation import fitted_order, neville_extrapolate
from apps.perturb.types import (
    FirstOrderRow,
    FirstOrderTable,
    LeadingTriple,
    LedgerEntry,
    MatrixCocycle,
    MatrixWindow,
    PerturbationLedger,
    PropertyCheck,
)
from apps.thermo.constants import CERTIFICATION_OFFSET
from apps.thermo.services import fit_geometric_rate
from apps.thermo.types import ConvergenceError


logger = logging.getLogger(__name__)


def random_positive_cocycle(
    *,
    d: int,
    seed: int,
    K: int,
    N: int,
    ladder: Optional[Sequence[float]] = None,
    rule: str = "coordinate",
) -> MatrixCocycle:
    """Strictly positive random matrix cocycle with a perturbed copy per ladder value.

    Parameters
    - d: dimension (d = 1 gives the scalar sanity case)
    - seed: fixes every entry and every mask
    - K, N: window [-K, N]
    - ladder: perturbation sizes, DEFAULT_EPS_LADDER when omitted
    - rule: "coordinate" damps one random coordinate per fiber by 1 - eps,
      "none" leaves the matrices unperturbed, "orthogonal" subtracts
      eps * u w^T with w orthogonal to phi_{k,0}, which breaks (P6)
    """
    if d < 1:
        raise ValueError(f"Dimension must be positive, got d={d}")
    if rule not in MASK_RULES:
        raise ValueError(f"Unknown mask rule '{rule}', expected one of {', '.join(MASK_RULES)}")
    ladder = sorted((float(e) for e in (ladder or get_default_eps_ladder())), reverse=True)
    if any(not 0.0 < e < 1.0 for e in ladder):
        raise ValueError(f"Perturbation sizes must lie in (0, 1), got {ladder}")

    rng = np.random.default_rng([seed, d])
    fibers = K + N + 1
    closed = rng.uniform(*ENTRY_RANGE, size=(fibers, d, d))
    coordinates = rng.integers(d, size=fibers)
    u = rng.uniform(*ENTRY_RANGE, size=d)
    directions = rng.standard_normal((fibers, d))

    perturbed, masks = {}, {}
    for eps in ladder:
        if rule == "orthogonal":
            phi = _forward_directions(closed)
            w = directions - (np.einsum("ij,ij->i", directions, phi) / np.einsum("ij,ij->i", phi, phi))[:, None] * phi
            perturbed[eps] = closed - eps * np.einsum("i,kj->kij", u, w)
            continue
        mask = np.ones((fibers, d))
        if rule == "coordinate":
            mask[np.arange(fibers), coordinates] = 1.0 - eps
        masks[eps] = mask
        perturbed[eps] = closed * mask[:, None, :]

    logger.info(f"Random positive cocycle d={d} window=[{-K}, {N}] rule={rule} ladder={ladder}")
    return MatrixCocycle(d=d, K=K, N=N, seed=seed, rule=rule, closed=closed, perturbed=perturbed, masks=masks)


def _forward_directions(matrices: np.ndarray) -> np.ndarray:
    """Normalized forward pullback of the ones vector, one row per fiber."""
    out = np.empty(matrices.shape[:2])
    values = np.ones(matrices.shape[1])
    for i, matrix in enumerate(matrices):
        out[i] = values
        values = matrix @ values
        values = values / values.sum()
    return out


def _sweep_forward(cocycle: MatrixCocycle, eps, start: int, stop: int, keep_from: int) -> np.ndarray:
    values = np.ones(cocycle.d)
    kept = [values] if start >= keep_from else []
    for k in range(start, stop):
        values = cocycle.matrix(k, eps) @ values
        values = values / values.mean()
        if k + 1 >= keep_from:
            kept.append(values)
    return np.array(kept)


def _sweep_backward(cocycle: MatrixCocycle, eps, start: int, stop: int, keep_to: int) -> np.ndarray:
    values = np.ones(cocycle.d)
    kept = {stop: values} if stop <= keep_to else {}
    for k in range(stop - 1, start - 1, -1):
        values = cocycle.matrix(k, eps).T @ values
        values = values / values.mean()
        if k <= keep_to:
            kept[k] = values
    return np.array([kept[k] for k in range(start, keep_to + 1)])


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b).max(axis=1) / np.abs(a).max(axis=1)))


def matrix_window(
    *,
    cocycle: MatrixCocycle,
    eps: Optional[float] = None,
    lo: int,
    hi: int,
    depth: Optional[int] = None,
    tol: Optional[float] = None,
    closed: Optional[MatrixWindow] = None,
) -> MatrixWindow:
    """(lambda, phi, nu) on fibers lo..hi with the normalizations nu_0 mean 1 and nu_0(phi_eps) = 1."""
    depth = depth or settings.DEFAULT_PULL_DEPTH
    tol = settings.THERMO_TOL if tol is None else tol
    margin = depth + CERTIFICATION_OFFSET
    if lo > hi or lo - margin < cocycle.first or hi + 1 + margin > cocycle.last:
        raise IndexError(
            f"Fibers [{lo}, {hi}] at depth {depth} need [{lo - margin}, {hi + 1 + margin}], "
            f"window is [{cocycle.first}, {cocycle.last}]"
        )
    if eps is not None and closed is None:
        closed = matrix_window(cocycle=cocycle, lo=lo, hi=hi, depth=depth, tol=tol)

    phi_raw = _sweep_forward(cocycle, eps, lo - margin, hi + 1, lo)
    nu_raw = _sweep_backward(cocycle, eps, lo, hi + 1 + margin, hi + 1)
    certification = max(
        _relative_gap(phi_raw, _sweep_forward(cocycle, eps, lo - depth, hi + 1, lo)),
        _relative_gap(nu_raw, _sweep_backward(cocycle, eps, lo, hi + 1 + depth, hi + 1)),
    )
    if certification > tol:
        raise ConvergenceError(
            f"Matrix sweeps at depth {depth} differ by {certification:.3e} > {tol:.1e}", residual=certification
        )

    if closed is None:
        nu0 = nu_raw
    else:
        nu0 = np.array([closed.nu_at(k) for k in range(lo, hi + 2)])
    phi = phi_raw / np.einsum("ij,ij->i", nu0, phi_raw)[:, None]
    nu = nu_raw if closed is None else nu_raw / np.einsum("ij,ij->i", nu_raw, phi)[:, None]
    lam = np.array(
        [nu0[i + 1] @ (cocycle.matrix(k, eps) @ phi[i]) for i, k in enumerate(range(lo, hi + 1))]
    )
    return MatrixWindow(eps=eps, lo=lo, hi=hi, lam=lam, phi=phi, nu=nu, certification=certification)


def leading_triple(
    *,
    cocycle: MatrixCocycle,
    eps: Optional[float] = None,
    k: int,
    depth: Optional[int] = None,
    seed: int = 0,
) -> LeadingTriple:
    """Leading triple at fiber k together with the (P3) residuals and the decay of Q^n."""
    hi = k + Q_DECAY_STEPS
    window = matrix_window(cocycle=cocycle, eps=eps, lo=k, hi=hi, depth=depth)
    lam, phi, nu = window.lam_at(k), window.phi_at(k), window.nu_at(k)
    matrix = cocycle.matrix(k, eps)
    nu_next, phi_next = window.nu_at(k + 1), window.phi_at(k + 1)

    def q_operator(f):
        return matrix @ f / lam - np.multiply.outer(phi_next, nu @ f)

    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((cocycle.d, Q_SAMPLE_COUNT))
    equivariance = float(np.max(np.abs(matrix @ phi - lam * phi_next)))
    q_phi = float(np.max(np.abs(q_operator(phi))))
    nu_q = float(np.max(np.abs(nu_next @ q_operator(samples))))
    conformality = float(np.max(np.abs(nu_next @ (matrix @ samples) - lam * (nu @ samples))))

    # Q^n f = (lambda^n)^-1 L^n f - nu(f) phi_{k+n}
    scale = np.abs(samples).max(axis=0)
    pushed = samples.copy()
    norms = np.empty(Q_DECAY_STEPS)
    for step, j in enumerate(range(k, k + Q_DECAY_STEPS)):
        pushed = cocycle.matrix(j, eps) @ pushed / window.lam_at(j)
        remainder = pushed - np.outer(window.phi_at(j + 1), nu @ samples)
        norms[step] = float(np.max(np.abs(remainder).max(axis=0) / scale))
    kappa, constant = fit_geometric_rate(norms)

    return LeadingTriple(
        fiber=k,
        eps=eps,
        lam=lam,
        phi=phi,
        nu=nu,
        q_kappa=kappa,
        q_constant=constant,
        equivariance_residual=equivariance,
        q_phi_residual=q_phi,
        nu_q_residual=nu_q,
        conformality_residual=conformality,
    )


def dual_norm(functional: np.ndarray) -> float:
    """sup of |l(f)| over the unit cube of the max-norm."""
    d = functional.shape[0]
    if d <= VERTEX_ENUMERATION_MAX_DIM:
        vertices = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        return float(np.max(np.abs(vertices @ functional)))
    return float(np.sum(np.abs(functional)))


def _ledger_entry(
    *,
    cocycle: MatrixCocycle,
    closed: MatrixWindow,
    opened: MatrixWindow,
    eps: float,
    k: int,
    k_max: int,
) -> LedgerEntry:
    nu_next = closed.nu_at(k + 1)

    def drop(j):
        return cocycle.matrix(j) - cocycle.matrix(j, eps)

    def open_push(f, start, steps):
        # (lambda_eps^steps)^-1 L^steps_eps from fiber start
        for j in range(start, start + steps):
            f = cocycle.matrix(j, eps) @ f / opened.lam_at(j)
        return f

    functional = nu_next @ drop(k)
    delta = float(functional @ closed.phi_at(k))
    eta = dual_norm(functional)
    lam0, lam_eps = closed.lam_at(k), opened.lam_at(k)
    identity = float(functional @ opened.phi_at(k))

    q = np.full(k_max, np.nan)
    weights = np.empty(k_max)
    for j in range(k_max):
        source = k - j - 1
        pushed = open_push(drop(source) @ closed.phi_at(source), k - j, j)
        weights[j] = 1.0 / closed.lam_at(source)
        if delta != 0.0:
            # open_push already divides by the open multipliers
            q[j] = float(functional @ pushed) / delta * np.prod([opened.lam_at(i) for i in range(k - j, k)])
    terms = weights * np.array(
        [q[j] / np.prod([opened.lam_at(i) for i in range(k - j, k)]) for j in range(k_max)]
    )
    theta_truncations = 1.0 - np.cumsum(terms)

    n = k_max
    nu_eps_phi0 = float(opened.nu_at(k - n) @ closed.phi_at(k - n))
    lhs = nu_eps_phi0 * (lam0 - lam_eps)
    first = delta * theta_truncations[-1] if delta != 0.0 else 0.0
    second = sum(
        (closed.lam_at(k - j) - opened.lam_at(k - j)) / closed.lam_at(k - j)
        * float(functional @ open_push(closed.phi_at(k - j), k - j, j))
        for j in range(1, n + 1)
    )
    remainder = open_push(closed.phi_at(k - n), k - n, n) - (opened.nu_at(k - n) @ closed.phi_at(k - n)) * opened.phi_at(k)
    tail = float(functional @ remainder)
    expansion = abs(lhs - (first + second - tail))

    return LedgerEntry(
        eps=eps,
        lam0=lam0,
        lam_eps=lam_eps,
        delta=delta,
        eta=eta,
        q=q,
        theta_truncations=theta_truncations,
        ratio=identity / delta if delta != 0.0 else float("nan"),
        identity_residual=abs((lam0 - lam_eps) - identity),
        expansion_residual=expansion,
        q_tail=abs(tail / delta) if delta != 0.0 else float("inf"),
        nu_eps_phi0=float(opened.nu_at(k) @ closed.phi_at(k)),
        phi_sup=float(max(np.abs(opened.phi_at(k)).max(), np.abs(closed.phi_at(k)).max())),
    )


def perturbation_ledger(
    *,
    cocycle: MatrixCocycle,
    k: int,
    k_max: Optional[int] = None,
    depth: Optional[int] = None,
) -> PerturbationLedger:
    """Delta, eta, q^(k), theta truncations and the (P1)-(P9) checks at fiber k.

    Parameters
    - cocycle: matrix cocycle with its ladder
    - k: fiber omega
    - k_max: number of q^(k) terms (KMAX_DEFAULT)
    - depth: pullback / adjoint depth

    Every rule perturbs linearly, L_{k,eps} = L_{k,0} - eps M_k, so
    q^(k)_eps = eps s^(k)_eps with s bounded. The slope s^(k)_0 is the Neville
    extrapolation of q^(k)_eps / eps, q^(k)_0 = 0 * s^(k)_0 and
    theta_0 = 1 - sum_k (lambda_0^(k+1))^-1 q^(k)_0.
    """
    k_max = k_max or settings.KMAX_DEFAULT
    lo = k - k_max - 1
    closed = matrix_window(cocycle=cocycle, lo=lo, hi=k, depth=depth)
    entries = []
    for eps in cocycle.ladder:
        opened = matrix_window(cocycle=cocycle, eps=eps, lo=lo, hi=k, depth=depth, closed=closed)
        entries.append(_ledger_entry(cocycle=cocycle, closed=closed, opened=opened, eps=eps, k=k, k_max=k_max))

    eps_values = [entry.eps for entry in entries]
    if all(entry.delta != 0.0 for entry in entries):
        q_slope = np.array(
            [neville_extrapolate(eps_values, [entry.q[j] / entry.eps for entry in entries]) for j in range(k_max)]
        )
    else:
        q_slope = np.zeros(k_max)
    q0 = 0.0 * q_slope
    products = np.array([np.prod([closed.lam_at(i) for i in range(k - j - 1, k)]) for j in range(k_max)])
    theta0 = float(1.0 - np.sum(q0 / products))

    checks = _property_checks(cocycle=cocycle, entries=entries, k=k, depth=depth)
    ledger = PerturbationLedger(
        fiber=k, k_max=k_max, entries=tuple(entries), q0=q0, q_slope=q_slope, theta0=theta0, checks=checks
    )
    failed = [check.name for check in checks if not check.passed]
    if failed:
        logger.warning(f"Perturbation ledger at fiber {k}: failing checks {', '.join(failed)}")
    logger.info(f"Perturbation ledger at fiber {k}: theta0={theta0:.12f} over ladder {eps_values}")
    return ledger


def _property_checks(*, cocycle: MatrixCocycle, entries: list[LedgerEntry], k: int, depth) -> tuple[PropertyCheck, ...]:
    checks = [PropertyCheck(name="P1", passed=bool(np.isfinite(cocycle.norm_bound())), value=cocycle.norm_bound())]

    triples = [leading_triple(cocycle=cocycle, k=k, depth=depth)] + [
        leading_triple(cocycle=cocycle, eps=entry.eps, k=k, depth=depth) for entry in entries
    ]
    p2 = max(max(t.equivariance_residual, t.conformality_residual) for t in triples)
    checks.append(PropertyCheck(name="P2", passed=p2 < IDENTITY_TOL * max(1.0, cocycle.d), value=p2))
    p3 = max(max(t.q_phi_residual, t.nu_q_residual) for t in triples)
    kappa = max(t.q_kappa for t in triples)
    checks.append(
        PropertyCheck(name="P3", passed=p3 < IDENTITY_TOL * max(1.0, cocycle.d) and kappa < 1.0, value=p3,
                      detail=f"kappa={kappa:.4g}")
    )
    c2 = max(entry.phi_sup for entry in entries) if entries else 0.0
    checks.append(PropertyCheck(name="P4", passed=bool(np.isfinite(c2)), value=c2))

    etas = np.array([entry.eta for entry in entries])
    deltas = np.array([entry.delta for entry in entries])
    p5 = bool(np.all(np.diff(etas) <= 1e-15)) and (etas[-1] <= etas[0] or etas[0] == 0.0)
    checks.append(PropertyCheck(name="P5", passed=p5, value=float(etas[-1])))

    if np.all(etas == 0.0):
        p6, spread, detail = True, 0.0, "Delta = eta = 0"
    elif np.any(np.abs(deltas) <= P6_DELTA_FLOOR * etas):
        p6, spread, detail = False, float("inf"), "Delta vanishes while eta does not"
    else:
        ratios = etas / deltas
        spread = float(ratios.max() / ratios.min())
        p6, detail = spread <= P6_SPREAD, f"eta/Delta in [{ratios.min():.4g}, {ratios.max():.4g}]"
    checks.append(PropertyCheck(name="P6", passed=p6, value=spread, detail=detail))

    gaps = np.array([abs(entry.nu_eps_phi0 - 1.0) for entry in entries])
    p7 = bool(np.all(np.diff(gaps) <= 1e-15)) and gaps[-1] < P7_TOL
    checks.append(PropertyCheck(name="P7", passed=p7, value=float(gaps[-1])))

    if np.all(deltas == 0.0):
        checks.append(PropertyCheck(name="P8", passed=True, value=0.0, detail="Delta = 0"))
        checks.append(PropertyCheck(name="P9", passed=True, value=0.0, detail="Delta = 0"))
    else:
        tail = max(entry.q_tail for entry in entries)
        checks.append(PropertyCheck(name="P8", passed=tail < P8_TOL, value=tail))
        q = np.array([entry.q for entry in entries])
        steps = np.abs(np.diff(q, axis=0))
        cauchy = bool(np.all(np.isfinite(q))) and bool(np.all((steps[1:] <= steps[:-1]) | (steps[1:] < 1e-12)))
        checks.append(PropertyCheck(name="P9", passed=cauchy, value=float(steps[-1].max()) if steps.size else 0.0))
    return tuple(checks)


def check_first_order(
    *,
    cocycle: MatrixCocycle,
    k: int,
    k_max: Optional[int] = None,
    depth: Optional[int] = None,
    tol: float = FIRST_ORDER_TOL,
) -> FirstOrderTable:
    """(lambda_0 - lambda_eps) / Delta against theta_0 along the ladder.

    Passes when every (P1)-(P9) check passes, the extrapolated ratio matches
    theta_0 within ``tol`` and the fitted order is at least 1 (or the ratio
    is exact).
    """
    ledger = perturbation_ledger(cocycle=cocycle, k=k, k_max=k_max, depth=depth)
    rows = tuple(
        FirstOrderRow(eps=entry.eps, ratio=entry.ratio, residual=entry.ratio - ledger.theta0)
        for entry in ledger.entries
    )
    failures = [f"{check.name}: {check.detail or check.value}" for check in ledger.checks if not check.passed]

    ratios = [row.ratio for row in rows]
    if not all(np.isfinite(ratios)):
        extrapolated, order = float("nan"), None
        if not failures:
            failures.append("Delta = 0: no first-order ratio")
    else:
        extrapolated = neville_extrapolate([row.eps for row in rows], ratios)
        residuals = [row.residual for row in rows]
        exact = max(abs(r) for r in residuals) <= tol
        order = None if exact else fitted_order([row.eps for row in rows], residuals)
        if abs(extrapolated - ledger.theta0) > tol:
            failures.append(f"extrapolated ratio {extrapolated:.12g} differs from theta {ledger.theta0:.12g}")
        if not exact and (order is None or order < 0.9):
            failures.append(f"fitted order {order} below 1")

    table = FirstOrderTable(
        fiber=k,
        rows=rows,
        theta=ledger.theta0,
        extrapolated=extrapolated,
        order=order,
        passed=not failures,
        failures=tuple(failures),
    )
    if failures:
        logger.warning(f"First-order check at fiber {k} failed: {'; '.join(failures)}")
    return table
