"""
Pareto geometry: dominance, non-dominated fronts, hypervolume

All vectors use the maximize-every-coordinate orientation. Minimized objectives are
negated on the way in by `canonicalize`.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.core.exceptions import ValidationError

logger = structlog.get_logger(__name__)

# Monte Carlo draws are generated in fixed-size chunks so the estimate does not
# depend on how the work is split.
_MC_CHUNK = 65536


def canonicalize(raw: Sequence[float], orientation: Sequence[str]) -> np.ndarray:
    """Flip minimized objectives into maximize orientation"""
    values = np.asarray(raw, dtype=float)
    signs = np.array([1.0 if o == "maximize" else -1.0 for o in orientation])
    if values.shape[-1] != signs.shape[0]:
        raise ValidationError("orientation length does not match objective dimension")
    return values * signs


def decanonicalize(canonical: Sequence[float], orientation: Sequence[str]) -> np.ndarray:
    """Inverse of canonicalize"""
    return canonicalize(canonical, orientation)


def as_points(points: Sequence[Sequence[float]], allow_empty: bool = False) -> np.ndarray:
    """Validate a collection of objective vectors into an (n, M) array"""
    array = np.asarray(points, dtype=float)
    if array.size == 0:
        if allow_empty:
            return array.reshape(0, array.shape[-1] if array.ndim == 2 else 0)
        raise ValidationError("empty point set")
    if array.ndim == 1:
        array = array[None, :]
    if array.ndim != 2:
        raise ValidationError("points must have uniform dimension", details={"shape": list(array.shape)})
    if array.shape[1] < 2:
        raise ValidationError("objective vectors need at least two coordinates")
    if not np.all(np.isfinite(array)):
        raise ValidationError("objective vectors must be finite")
    return array


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff a is at least as good as b everywhere and strictly better somewhere"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError("dimension mismatch", details={"a": list(a.shape), "b": list(b.shape)})
    return bool(np.all(a >= b) and np.any(a > b))


def non_dominated_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of points not dominated by any other point

    Exact duplicates keep only their first occurrence.
    """
    n = points.shape[0]
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        if not mask[i]:
            continue
        others = points[mask]
        geq = np.all(others >= points[i], axis=1)
        gt = np.any(others > points[i], axis=1)
        if np.any(geq & gt):
            mask[i] = False
            continue
        # drop later points dominated by, or equal to, point i
        later = np.arange(n) > i
        beaten = np.all(points[i] >= points, axis=1) & later & mask
        mask[beaten] = False
    return mask


def front_indices(points: Sequence[Sequence[float]]) -> List[int]:
    """Indices of the non-dominated points; among duplicates the earliest wins"""
    array = as_points(points)
    return [int(i) for i in np.flatnonzero(non_dominated_mask(array))]


def extract_front(points: Sequence[Sequence[float]]) -> np.ndarray:
    """Return the deduplicated non-dominated subset, in input order"""
    array = as_points(points)
    return array[non_dominated_mask(array)]


def _check_reference(front: np.ndarray, reference: np.ndarray) -> None:
    if reference.shape != (front.shape[1],):
        raise ValidationError(
            "reference point dimension mismatch",
            details={"front": front.shape[1], "reference": reference.shape[0]},
        )
    if front.shape[0] and not np.all(front > reference):
        raise ValidationError("reference point must be strictly dominated by every front point")


def _hv2d(points: np.ndarray, reference: np.ndarray) -> float:
    """Sweep: sort by first coordinate descending, add rectangle strips"""
    if points.shape[0] == 0:
        return 0.0
    order = np.argsort(-points[:, 0], kind="stable")
    volume = 0.0
    height = reference[1]
    for x, y in points[order]:
        if y > height:
            volume += (x - reference[0]) * (y - height)
            height = y
    return float(volume)


def _hv3d(points: np.ndarray, reference: np.ndarray) -> float:
    """Slice along the last coordinate into 2-D subproblems"""
    if points.shape[0] == 0:
        return 0.0
    levels = np.unique(points[:, 2])[::-1]
    volume = 0.0
    for k, level in enumerate(levels):
        below = levels[k + 1] if k + 1 < len(levels) else reference[2]
        active = points[points[:, 2] >= level]
        volume += _hv2d(active[:, :2], reference[:2]) * (level - below)
    return float(volume)


def _mc_dominated_fraction(
    fronts: List[np.ndarray],
    lower: np.ndarray,
    upper: np.ndarray,
    samples: int,
    seed: int,
) -> Tuple[np.ndarray, int]:
    """Count uniform box samples dominated by each front in `fronts`"""
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(fronts), dtype=np.int64)
    remaining = samples
    while remaining > 0:
        size = min(remaining, _MC_CHUNK)
        draws = rng.uniform(lower, upper, size=(size, lower.shape[0]))
        for j, front in enumerate(fronts):
            if front.shape[0] == 0:
                continue
            covered = np.zeros(size, dtype=bool)
            for point in front:
                covered |= np.all(draws <= point, axis=1)
            counts[j] += int(covered.sum())
        remaining -= size
    return counts, samples


def hypervolume_monte_carlo(
    front: Sequence[Sequence[float]],
    reference: Sequence[float],
    samples: int,
    seed: int = 0,
) -> Tuple[float, float]:
    """Unbiased HV estimate and its standard error, for any M"""
    if samples <= 0:
        raise ValidationError("Monte Carlo hypervolume needs a positive sample count")
    points = as_points(front, allow_empty=True)
    r = np.asarray(reference, dtype=float)
    if points.shape[0] == 0:
        return 0.0, 0.0
    _check_reference(points, r)

    upper = points.max(axis=0)
    box = float(np.prod(upper - r))
    counts, n = _mc_dominated_fraction([points], r, upper, samples, seed)
    p = counts[0] / n
    return box * p, box * float(np.sqrt(p * (1.0 - p) / n))


def hypervolume(
    front: Sequence[Sequence[float]],
    reference: Sequence[float],
    mc_samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Lebesgue measure of the region dominated by `front` and bounded by `reference`

    Exact for M = 2 and M = 3. For M >= 4, `mc_samples` is required and the
    Monte Carlo estimate is returned.
    """
    points = as_points(front, allow_empty=True)
    r = np.asarray(reference, dtype=float)
    if points.shape[0] == 0:
        return 0.0
    _check_reference(points, r)

    m = points.shape[1]
    if m == 2:
        return _hv2d(points, r)
    if m == 3:
        return _hv3d(points, r)
    if mc_samples is None:
        raise ValidationError("hypervolume for M >= 4 needs mc_samples")
    estimate, _ = hypervolume_monte_carlo(points, r, mc_samples, seed)
    return estimate


def hypervolume_improvement(
    candidates: Sequence[Sequence[float]],
    front: Sequence[Sequence[float]],
    reference: Sequence[float],
    mc_samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """HV(front ∪ candidates) − HV(front), never negative

    Candidates that do not strictly dominate the reference add no volume.
    """
    base = as_points(front, allow_empty=True)
    r = np.asarray(reference, dtype=float)
    if base.shape[0]:
        _check_reference(base, r)
    cand = np.asarray(candidates, dtype=float)
    if cand.size == 0:
        return 0.0
    cand = as_points(cand)
    if cand.shape[1] != r.shape[0]:
        raise ValidationError("candidate dimension mismatch")
    cand = cand[np.all(cand > r, axis=1)]
    if cand.shape[0] == 0:
        return 0.0

    union = np.vstack([base, cand]) if base.shape[0] else cand
    m = r.shape[0]
    if m <= 3:
        gain = hypervolume(union, r) - hypervolume(base, r)
        return max(0.0, gain)

    if mc_samples is None:
        raise ValidationError("hypervolume improvement for M >= 4 needs mc_samples")
    # common random numbers: both sets share one sample stream
    upper = union.max(axis=0)
    box = float(np.prod(upper - r))
    counts, n = _mc_dominated_fraction([union, base], r, upper, mc_samples, seed)
    return max(0.0, box * (counts[0] - counts[1]) / n)


def single_point_improvements(
    samples: np.ndarray,
    front: np.ndarray,
    reference: np.ndarray,
    mc_samples: int = 4096,
    seed: int = 0,
) -> np.ndarray:
    """HVI of each row of `samples` added alone to `front`

    HVI(y) = vol([r, y]) − HV(clip(front, y)); the 2-D case is vectorized over rows.
    """
    samples = np.asarray(samples, dtype=float)
    r = np.asarray(reference, dtype=float)
    y = np.maximum(samples, r)
    box = np.prod(y - r, axis=1)
    if front.shape[0] == 0:
        return box

    if r.shape[0] == 2:
        order = np.argsort(-front[:, 0], kind="stable")
        sorted_front = front[order]
        # clipping is monotone, so the descending order of the first coordinate survives
        qx = np.minimum(sorted_front[None, :, 0], y[:, 0:1])
        qy = np.minimum(sorted_front[None, :, 1], y[:, 1:2])
        running = np.maximum.accumulate(qy, axis=1)
        previous = np.concatenate(
            [np.full((y.shape[0], 1), r[1]), running[:, :-1]], axis=1
        )
        covered = np.sum((qx - r[0]) * np.maximum(qy - previous, 0.0), axis=1)
        return np.maximum(box - covered, 0.0)

    out = np.empty(y.shape[0])
    for i, point in enumerate(y):
        if box[i] <= 0.0:
            out[i] = 0.0
            continue
        clipped = np.minimum(front, point)
        clipped = clipped[np.all(clipped > r, axis=1)]
        if clipped.shape[0] == 0:
            out[i] = box[i]
            continue
        if r.shape[0] == 3:
            covered = _hv3d(clipped, r)
        else:
            covered, _ = hypervolume_monte_carlo(clipped, r, mc_samples, seed)
        out[i] = max(box[i] - covered, 0.0)
    return out
