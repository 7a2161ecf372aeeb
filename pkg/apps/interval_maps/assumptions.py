"""Checks of the standing assumptions on a sampled window of maps and holes.

Every check returns a ConditionResult carrying its witnessing numbers. A
failing check names the first offending fiber; nothing here raises for a
failed assumption.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from apps.interval_maps.constants import (
    COVERING_STEPS_MAX,
    COVERING_TEST_CELLS,
    LASOTA_YORKE_FACTOR,
    MAX_HOLE_COMPONENTS,
    N_PRIME_MAX,
)
from apps.interval_maps.services import (
    covering_time,
    image_of_intervals,
    iterate_transfer_of_one_inf,
    nesting_violation,
    survivor_pieces,
)
from apps.interval_maps.types import (
    AssumptionReport,
    ConditionResult,
    HoleSpec,
    PiecewiseAffineMap,
    WeightFunction,
    covers_unit_interval,
)


logger = logging.getLogger(__name__)


def verify_assumptions(
    *,
    maps: Sequence[PiecewiseAffineMap],
    ladder: Sequence[Sequence[HoleSpec]],
    weight: WeightFunction,
    eps0: float,
    n_prime: Optional[int] = None,
    fibers: Optional[Sequence[int]] = None,
) -> AssumptionReport:
    """Evaluate (E1)-(E9), (EX) and the nesting condition (A) on a window.

    Parameters
    - maps: one map per window fiber, in driving order
    - ladder: hole rungs ordered from the largest holes to the smallest; each rung
      holds one HoleSpec per fiber
    - weight: geometric weight g = |T'|^(-r)
    - eps0: rungs whose largest hole has Lebesgue measure <= eps0 enter (E7) and (E8)
    - n_prime: iterate for (E8) and (E9); searched in 1..N_PRIME_MAX when omitted
    - fibers: labels reported for offending fibers (defaults to window positions)
    """
    if not maps:
        raise ValueError("verify_assumptions needs at least one map")
    for rung in ladder:
        if len(rung) != len(maps):
            raise ValueError(f"Each ladder rung needs {len(maps)} holes, got {len(rung)}")
    labels = list(fibers) if fibers is not None else list(range(len(maps)))

    small = [rung for rung in ladder if max((h.measure for h in rung), default=0.0) <= eps0]
    if not small:
        small = list(ladder)

    conditions = [
        _check_surjective(maps, labels),
        _check_e1(maps),
        _check_e2_e3(maps, weight, labels),
        _check_e4(maps, labels),
        _check_e5(ladder, labels),
        _check_e6(ladder),
        _check_ex(maps, ladder, labels),
        _check_e7(maps, small, labels),
        _check_nesting(ladder, labels),
    ]
    e8, chosen = _check_e8(maps, small, weight, labels, n_prime)
    conditions.insert(8, e8)
    conditions.insert(9, _check_e9(maps, small, labels, chosen))

    report = AssumptionReport(conditions=tuple(conditions), n_prime=chosen)
    for failure in report.failures():
        logger.warning(f"Assumption {failure.name} fails at fiber {failure.fiber}: {failure.detail}")
    logger.info(
        f"Checked assumptions on {len(maps)} fibers and {len(ladder)} rungs: "
        f"{'all pass' if report.passed else f'{len(report.failures())} failing'}"
    )
    return report


def _check_surjective(maps, labels) -> ConditionResult:
    for label, tmap in zip(labels, maps):
        if not tmap.is_surjective:
            return ConditionResult("surjective", False, fiber=label, detail=f"{tmap.family} map is not onto [0, 1]")
    return ConditionResult("surjective", True)


def _check_e1(maps) -> ConditionResult:
    max_slope = max(tmap.max_slope for tmap in maps)
    max_branches = max(tmap.max_preimage_count for tmap in maps)
    witness = {"max_abs_derivative": max_slope, "max_preimage_count": max_branches}
    return ConditionResult("E1", bool(np.isfinite(max_slope)), witness=witness)


def _check_e2_e3(maps, weight, labels) -> ConditionResult:
    sups = [weight.sup(tmap) for tmap in maps]
    infs = [weight.inf(tmap) for tmap in maps]
    witness = {"sup_g": max(sups), "inf_g": min(infs)}
    worst = int(np.argmin(infs))
    passed = bool(np.isfinite(witness["sup_g"]) and witness["inf_g"] > 0)
    return ConditionResult("E2/E3", passed, witness=witness, fiber=None if passed else labels[worst])


def _check_e4(maps, labels) -> ConditionResult:
    edges = np.linspace(0.0, 1.0, COVERING_TEST_CELLS + 1)
    worst = 0
    for position, label in enumerate(labels):
        tail = maps[position:position + COVERING_STEPS_MAX]
        for a, b in zip(edges, edges[1:]):
            k = covering_time(maps=tail, interval=(a, b))
            if k is None:
                if len(tail) < COVERING_STEPS_MAX:
                    break
                return ConditionResult(
                    "E4", False, fiber=label,
                    detail=f"[{a:.4g}, {b:.4g}] does not cover [0, 1] within {COVERING_STEPS_MAX} steps",
                )
            worst = max(worst, k)
    return ConditionResult("E4", True, witness={"covering_steps": worst, "test_width": 1.0 / COVERING_TEST_CELLS})


def _check_e5(ladder, labels) -> ConditionResult:
    worst, where = 0, None
    for rung in ladder:
        for label, hole in zip(labels, rung):
            if hole.components > worst:
                worst, where = hole.components, label
    passed = worst <= MAX_HOLE_COMPONENTS
    return ConditionResult(
        "E5", passed, witness={"max_components": worst, "bound": MAX_HOLE_COMPONENTS},
        fiber=None if passed else where,
    )


def _check_e6(ladder) -> ConditionResult:
    sups = [max((h.measure for h in rung), default=0.0) for rung in ladder]
    decreasing = all(b <= a for a, b in zip(sups, sups[1:]))
    shrinking = len(sups) < 2 or sups[-1] < sups[0] or sups[0] == 0.0
    return ConditionResult("E6", decreasing and shrinking, witness={"sup_hole_measure": sups})


def _check_ex(maps, ladder, labels) -> ConditionResult:
    """A full branch outside the hole, or a hole inside one branch whose complement still maps onto [0, 1]."""
    for j in reversed(range(len(ladder))):
        offender = None
        for label, tmap, hole in zip(labels, maps, ladder[j]):
            if not _escape_free(tmap, hole):
                offender = label
                break
        if offender is None:
            return ConditionResult("EX", True, witness={"rung": j})
    return ConditionResult("EX", False, fiber=offender, detail="no rung keeps a full branch outside the hole")


def _escape_free(tmap: PiecewiseAffineMap, hole: HoleSpec) -> bool:
    if hole.is_empty:
        return True
    for branch in tmap.branches:
        if branch.is_full and not any(a <= branch.right and b >= branch.left for a, b in hole.intervals):
            return True
    owners = {int(tmap.branch_index(a)) for a, _ in hole.intervals} | {int(tmap.branch_index(b)) for _, b in hole.intervals}
    if len(tmap) >= 2 and len(owners) == 1:
        return covers_unit_interval(image_of_intervals(tmap=tmap, intervals=hole.complement()))
    return False


def _check_e7(maps, rungs, labels) -> ConditionResult:
    for rung in rungs:
        for label, tmap, hole in zip(labels, maps, rung):
            if not covers_unit_interval(image_of_intervals(tmap=tmap, intervals=hole.complement())):
                return ConditionResult("E7", False, fiber=label, detail=f"T(J) misses part of [0, 1] for hole {hole.intervals}")
    return ConditionResult("E7", True, witness={"rungs_checked": len(rungs)})


def _check_e8(maps, rungs, weight, labels, n_prime):
    candidates = [n_prime] if n_prime is not None else list(range(1, N_PRIME_MAX + 1))
    witness = {}
    for n in candidates:
        if n > len(maps):
            break
        starts = range(len(maps) - n + 1)
        sup_g = max(
            float(np.max(np.abs(survivor_pieces(maps=maps[k:k + n])[2]) ** (-weight.exponent)))
            for k in starts
        )
        lhs = LASOTA_YORKE_FACTOR * sup_g
        rhs, where = np.inf, None
        for k in starts:
            window = maps[k:k + n]
            closed = iterate_transfer_of_one_inf(maps=window, holes=None, exponent=weight.exponent)
            if closed < rhs:
                rhs, where = closed, labels[k]
            for rung in rungs:
                value = iterate_transfer_of_one_inf(maps=window, holes=rung[k:k + n], exponent=weight.exponent)
                if value < rhs:
                    rhs, where = value, labels[k]
        witness[f"n{n}"] = {"lhs": lhs, "rhs": rhs}
        if lhs < rhs:
            return ConditionResult("E8", True, witness={**witness, "n_prime": n}), n
    detail = f"9 sup g^(n') >= inf L^n' 1 for every n' tried ({', '.join(map(str, candidates))})"
    return ConditionResult("E8", False, witness=witness, fiber=where, detail=detail), None


def _check_e9(maps, rungs, labels, n_prime) -> ConditionResult:
    n = n_prime or 1
    worst = 0
    for rung in rungs:
        for k in range(len(maps) - n + 1):
            left, right, _, _ = survivor_pieces(maps=maps[k:k + n], holes=rung[k:k + n])
            tail = maps[k:k + COVERING_STEPS_MAX]
            for a, b in zip(left.tolist(), right.tolist()):
                steps = covering_time(maps=tail, interval=(a, b))
                if steps is None:
                    if len(tail) < COVERING_STEPS_MAX:
                        continue
                    return ConditionResult("E9", False, fiber=labels[k], detail=f"piece [{a:.4g}, {b:.4g}] never covers")
                worst = max(worst, steps)
    return ConditionResult("E9", True, witness={"k_o": worst, "n_prime": n})


def _check_nesting(ladder, labels) -> ConditionResult:
    violation = nesting_violation(ladder)
    if violation is None:
        return ConditionResult("A", True, witness={"rungs": len(ladder)})
    rung, position = violation
    return ConditionResult(
        "A", False, fiber=labels[position],
        detail=f"hole at rung {rung} is not contained in the hole at rung {rung - 1}",
    )
