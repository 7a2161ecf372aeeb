import logging
import math
from fractions import Fraction
from functools import lru_cache
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
from django.conf import settings
from scipy import sparse

from apps.driving.types import FiberPath
from apps.interval_maps.constants import LASOTA_YORKE_FACTOR
from apps.interval_maps.services import maps_for_path, survivor_pieces
from apps.interval_maps.types import HoleSpec, PiecewiseAffineMap, WeightFunction
from apps.transfer_op.constants import GRID_TOLERANCE, LASOTA_YORKE_SLACK, TRANSFER_MATRIX_CACHE_SIZE
from apps.transfer_op.types import (
    DimensionMismatchError,
    GridDensity,
    HoleMask,
    LasotaYorkeDiagnostic,
    OperatorCocycle,
    TransferMatrix,
    WindowError,
)


logger = logging.getLogger(__name__)


def build_transfer_matrix(*, tmap: PiecewiseAffineMap, weight: WeightFunction, n: int) -> TransferMatrix:
    """Exact Ulam matrix of the weighted transfer operator on n cells.

    Parameters
    - tmap: piecewise-affine map
    - weight: geometric weight |T'|^(-r)
    - n: number of cells, n >= 2

    M[i, j] = n * sum_b g_b * Leb(cell_i ∩ T_b(cell_j ∩ dom_b)), computed by interval
    intersection. The result is cached per (map, exponent, n).
    """
    if n < 2:
        raise ValueError(f"A transfer matrix needs at least 2 cells, got n={n}")
    return _cached_transfer_matrix(tmap, float(weight.exponent), int(n))


@lru_cache(maxsize=TRANSFER_MATRIX_CACHE_SIZE)
def _cached_transfer_matrix(tmap: PiecewiseAffineMap, exponent: float, n: int) -> TransferMatrix:
    rows, cols, data = [], [], []
    for branch in tmap.branches:
        g = abs(branch.slope) ** (-exponent)
        j = np.arange(int(math.floor(branch.left * n)), min(int(math.ceil(branch.right * n)), n))
        lo = np.maximum(j / n, branch.left)
        hi = np.minimum((j + 1) / n, branch.right)
        keep = hi > lo
        j, lo, hi = j[keep], lo[keep], hi[keep]

        a, b = branch(lo), branch(hi)
        u = np.clip(np.minimum(a, b), 0.0, 1.0)
        v = np.clip(np.maximum(a, b), 0.0, 1.0)
        i_start = np.clip(np.floor(u * n).astype(np.int64), 0, n - 1)
        i_end = np.clip(np.ceil(v * n).astype(np.int64) - 1, 0, n - 1)
        i_end = np.maximum(i_end, i_start)

        counts = i_end - i_start + 1
        col = np.repeat(j, counts)
        first = np.repeat(i_start, counts)
        row = first + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
        overlap = np.minimum(np.repeat(v, counts), (row + 1) / n) - np.maximum(np.repeat(u, counts), row / n)
        overlap = np.maximum(overlap, 0.0)

        rows.append(row)
        cols.append(col)
        data.append(n * g * overlap)

    matrix = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    matrix.eliminate_zeros()
    exact = is_grid_exact(tmap=tmap, n=n)
    logger.debug(f"Built {n}-cell transfer matrix for {tmap.family}{dict(tmap.params)} nnz={matrix.nnz} exact={exact}")
    return TransferMatrix(matrix=matrix, exact=exact)


def is_grid_exact(*, tmap: PiecewiseAffineMap, n: int) -> bool:
    """Integer slopes with branch endpoints and their images on the grid."""
    for branch in tmap.branches:
        if abs(abs(branch.slope) - round(abs(branch.slope))) > GRID_TOLERANCE:
            return False
        points = (branch.left, branch.right, branch(branch.left), branch(branch.right))
        if any(abs(p * n - round(p * n)) > GRID_TOLERANCE * n for p in points):
            return False
    return True


def grid_size_for(
    *,
    maps: Iterable[PiecewiseAffineMap],
    requested: Optional[int] = None,
    extra_points: Iterable[float] = (),
) -> tuple[int, bool]:
    """Smallest multiple of the common endpoint denominator that is >= ``requested``.

    Returns (n, aligned). When the endpoints are not rationals with denominators
    up to MAX_GRID_CELLS the requested size is returned unaligned and a warning is
    logged; the Ulam matrices then carry an O(1/n) discretization error.
    """
    requested = requested or settings.DEFAULT_GRID_CELLS
    cap = settings.MAX_GRID_CELLS
    points = set(extra_points)
    for tmap in maps:
        for branch in tmap.branches:
            points.update((branch.left, branch.right, branch(branch.left), branch(branch.right)))

    common = 1
    for p in points:
        approx = Fraction(p).limit_denominator(cap)
        if abs(float(approx) - p) > GRID_TOLERANCE:
            logger.warning(f"Endpoint {p!r} is not a rational with denominator <= {cap}; grid is inexact")
            return min(requested, cap), False
        common = math.lcm(common, approx.denominator)
        if common > cap:
            logger.warning(f"Common endpoint denominator exceeds {cap}; grid is inexact")
            return min(requested, cap), False

    n = common * max(1, math.ceil(requested / common))
    if n > cap:
        n = common * (cap // common)
    return n, True


def hole_mask(*, hole: Optional[HoleSpec], n: int) -> HoleMask:
    """Exact fractional coverage: mask_i = 1 - n * Leb(cell_i ∩ H)."""
    covered = np.zeros(n)
    if hole is not None:
        edges = np.arange(n + 1) / n
        for a, b in hole.intervals:
            covered += np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)
    return HoleMask(values=np.clip(1.0 - n * covered, 0.0, 1.0))


def open_operator(*, matrix: TransferMatrix, mask: HoleMask) -> TransferMatrix:
    """L_eps = L_0 diag(mask); the all-ones mask gives back the closed operator."""
    if mask.n != matrix.n:
        raise DimensionMismatchError(f"Mask has {mask.n} cells, matrix has {matrix.n}")
    combined = mask.values if matrix.mask is None else matrix.mask * mask.values
    return TransferMatrix(matrix=matrix.matrix, exact=matrix.exact, mask=combined)


def build_cocycle(
    *,
    path: FiberPath,
    weight: WeightFunction,
    n: int,
    holes: Optional[Mapping[Any, Sequence[HoleSpec]]] = None,
) -> OperatorCocycle:
    """Closed Ulam matrices for every fiber of the path, plus masks per hole label.

    Parameters
    - path: sampled fiber path
    - weight: geometric weight
    - n: grid size
    - holes: label -> one HoleSpec per window fiber (window order)
    """
    maps = tuple(maps_for_path(path))
    closed = tuple(build_transfer_matrix(tmap=tmap, weight=weight, n=n) for tmap in maps)
    cocycle = OperatorCocycle(path=path, weight=weight, n=n, maps=maps, closed=closed)
    if holes:
        cocycle = with_holes(cocycle=cocycle, holes=holes)
    logger.info(
        f"Built operator cocycle: {len(path)} fibers, {n} cells, {len(cocycle.masks)} hole labels, exact={cocycle.exact}"
    )
    return cocycle


def with_holes(*, cocycle: OperatorCocycle, holes: Mapping[Any, Sequence[HoleSpec]]) -> OperatorCocycle:
    """A copy of the cocycle with extra hole labels attached."""
    masks = dict(cocycle.masks)
    for label, specs in holes.items():
        if len(specs) != len(cocycle.path):
            raise DimensionMismatchError(f"Hole label {label!r} has {len(specs)} holes for {len(cocycle.path)} fibers")
        masks[label] = tuple(hole_mask(hole=spec, n=cocycle.n) for spec in specs)
    return OperatorCocycle(
        path=cocycle.path,
        weight=cocycle.weight,
        n=cocycle.n,
        maps=cocycle.maps,
        closed=cocycle.closed,
        masks=masks,
    )


def cocycle_apply(
    *,
    cocycle: OperatorCocycle,
    label: Any = None,
    k0: int,
    steps: int,
    f: GridDensity,
) -> GridDensity:
    """L_{k0+steps-1} ... L_{k0} f, open with ``label`` or closed with ``label=None``."""
    if f.n != cocycle.n:
        raise DimensionMismatchError(f"Density has {f.n} cells, cocycle has {cocycle.n}")
    if steps < 0:
        raise ValueError(f"Number of steps must be nonnegative, got {steps}")
    if not (cocycle.path.contains(k0) and cocycle.path.contains(k0 + steps)):
        raise WindowError(f"Fibers [{k0}, {k0 + steps}] leave the window [{cocycle.path.first}, {cocycle.path.last}]")
    values = f.values
    for k in range(k0, k0 + steps):
        values = cocycle.apply(k, values, label)
    return GridDensity(values=values)


def pairing(nu: np.ndarray, f: np.ndarray) -> float:
    """nu(f) for a dual weight vector against cell averages."""
    return float(np.dot(nu, f) / f.shape[0])


def lasota_yorke_diagnostic(
    *,
    cocycle: OperatorCocycle,
    label: Any = None,
    k0: int,
    n_prime: int,
) -> LasotaYorkeDiagnostic:
    """Largest var(L^n' f) / var(f) over single-cell step functions, against 9 sup g^(n').

    Parameters
    - cocycle: an exact-grid cocycle
    - label: hole label, closed operator when None
    - k0: first fiber of the composition
    - n_prime: number of steps
    """
    if not cocycle.exact:
        raise ValueError("The Lasota-Yorke diagnostic needs an exact grid")
    if not cocycle.path.contains(k0 + n_prime):
        raise WindowError(f"Fibers [{k0}, {k0 + n_prime}] leave the window")

    n = cocycle.n
    columns = sparse.identity(n, format="csr")
    for k in range(k0, k0 + n_prime):
        columns = (cocycle.operator(k, label).as_csr() @ columns).tocsr()

    difference = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)).tocsr()
    var_image = np.asarray(abs(difference @ columns).sum(axis=0)).ravel()
    var_basis = np.full(n, 2.0)
    var_basis[[0, -1]] = 1.0
    ratios = var_image / var_basis

    maps = [cocycle.tmap(k) for k in range(k0, k0 + n_prime)]
    slopes = survivor_pieces(maps=maps)[2]
    bound = LASOTA_YORKE_FACTOR * float(np.max(np.abs(slopes) ** (-cocycle.weight.exponent)))
    # additive term per unit L1 mass of the basis element (1/n)
    b_term = float(np.max(np.maximum(var_image - bound * var_basis, 0.0)) * n)
    empirical = float(np.max(ratios))

    result = LasotaYorkeDiagnostic(
        fiber=k0,
        n_prime=n_prime,
        bound=bound,
        empirical_ratio=empirical,
        b_term=b_term,
        passed=empirical <= bound + LASOTA_YORKE_SLACK,
    )
    if not result.passed:
        logger.warning(f"Lasota-Yorke ratio {empirical:.6g} exceeds bound {bound:.6g} at fiber {k0}")
    return result
