"""Finitely supported probability measures on the positive time axis.

Measures here play the role of stopping-time laws.  The module provides the
first-order transport geometry the rest of the package leans on: Wasserstein-1
distance, the monotone (quantile) coupling that attains it, the rightward
stochastic order, conditioning on a right tail, and ceiling projection onto a
coarser time grid.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Sequence

from .errors import CoverageError, EmptyTailError, ValidationError

# Weights must reproduce a probability vector to this accuracy.
WEIGHT_TOL = 1e-12
# Atoms closer than this are considered the same time point and merged.
ATOM_MERGE_TOL = 1e-9
# Ingestion (JSON) accepts weight sums off by up to this and renormalizes.
INGEST_TOL = 1e-9


class DiscreteMeasure:
    """Probability measure ``sum_i w_i * delta_{t_i}`` with ``t_i > 0``.

    Atoms are kept sorted and strictly increasing; atoms closer than
    ``ATOM_MERGE_TOL`` are merged (keeping the smaller time) and zero-weight
    atoms are dropped.  Weights must be nonnegative and sum to one within
    ``WEIGHT_TOL``.
    """

    __slots__ = ("atoms", "weights")

    def __init__(self, atoms: Sequence[float], weights: Sequence[float]):
        if len(atoms) != len(weights):
            raise ValidationError("atoms and weights must have equal length")
        if not atoms:
            raise ValidationError("a measure needs at least one atom")
        pairs = sorted(zip((float(t) for t in atoms), (float(w) for w in weights)))
        merged_t: list[float] = []
        merged_w: list[float] = []
        for t, w in pairs:
            if w < -WEIGHT_TOL:
                raise ValidationError(f"negative weight {w} at atom {t}")
            w = max(w, 0.0)
            if merged_t and t - merged_t[-1] < ATOM_MERGE_TOL:
                merged_w[-1] += w
            else:
                merged_t.append(t)
                merged_w.append(w)
        kept = [(t, w) for t, w in zip(merged_t, merged_w) if w > 0.0]
        if not kept:
            raise ValidationError("all weights are zero")
        if kept[0][0] <= 0.0:
            raise ValidationError(f"atoms must be strictly positive, got {kept[0][0]}")
        total = sum(w for _, w in kept)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {total!r}, expected 1 within {WEIGHT_TOL}")
        object.__setattr__(self, "atoms", tuple(t for t, _ in kept))
        object.__setattr__(self, "weights", tuple(w for _, w in kept))

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return self.atoms == other.atoms and self.weights == other.weights

    def __hash__(self) -> int:
        return hash((self.atoms, self.weights))

    def __repr__(self) -> str:
        body = ", ".join(f"{w:.6g}*d({t:.6g})" for t, w in zip(self.atoms, self.weights))
        return f"DiscreteMeasure({body})"

    def mean(self) -> float:
        return sum(t * w for t, w in zip(self.atoms, self.weights))

    def mass_above(self, t: float) -> float:
        """Mass of the open interval ``(t, oo)``."""
        return sum(w for a, w in zip(self.atoms, self.weights) if a > t)

    def cdf(self, t: float) -> float:
        return sum(w for a, w in zip(self.atoms, self.weights) if a <= t)


class MonotoneCoupling:
    """A coupling of two measures whose support is monotone in both indices.

    ``rows[i]`` lists ``(target_index, mass)`` cells for source atom ``i``.
    Row sums must reproduce the source weights and column sums the target
    weights, both within ``WEIGHT_TOL``; cells must be traversable in
    jointly nondecreasing index order (no crossing pairs).
    """

    __slots__ = ("source", "target", "rows")

    def __init__(
        self,
        source: DiscreteMeasure,
        target: DiscreteMeasure,
        rows: Sequence[Sequence[tuple[int, float]]],
    ):
        if len(rows) != len(source):
            raise ValidationError("need one row per source atom")
        clean_rows = []
        col_sums = [0.0] * len(target)
        prev_max = -1
        for i, row in enumerate(rows):
            cells = sorted((int(j), float(m)) for j, m in row)
            row_sum = 0.0
            for j, m in cells:
                if not 0 <= j < len(target):
                    raise ValidationError(f"row {i} refers to missing target atom {j}")
                if m < -WEIGHT_TOL:
                    raise ValidationError(f"negative coupling mass at cell ({i}, {j})")
                row_sum += m
                col_sums[j] += m
            if cells:
                if cells[0][0] < prev_max:
                    raise ValidationError(f"coupling support crosses between rows {i - 1} and {i}")
                prev_max = cells[-1][0]
            if abs(row_sum - source.weights[i]) > WEIGHT_TOL:
                raise ValidationError(
                    f"row {i} mass {row_sum!r} does not match source weight {source.weights[i]!r}"
                )
            clean_rows.append(tuple(cells))
        for j, s in enumerate(col_sums):
            if abs(s - target.weights[j]) > WEIGHT_TOL:
                raise ValidationError(
                    f"column {j} mass {s!r} does not match target weight {target.weights[j]!r}"
                )
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "rows", tuple(clean_rows))

    def __setattr__(self, name, value):
        raise AttributeError("MonotoneCoupling is immutable")

    def cost(self) -> float:
        """Transport cost ``sum m * |t_source - t_target|`` of the coupling."""
        total = 0.0
        for i, row in enumerate(self.rows):
            x = self.source.atoms[i]
            for j, m in row:
                total += m * abs(x - self.target.atoms[j])
        return total

    def moves_only_right(self, tol: float = WEIGHT_TOL) -> bool:
        """True when every cell sends mass to an equal or later time."""
        for i, row in enumerate(self.rows):
            x = self.source.atoms[i]
            for j, m in row:
                if m > tol and self.target.atoms[j] < x - ATOM_MERGE_TOL:
                    return False
        return True


def w1_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Wasserstein-1 distance, computed as the area between the CDFs."""
    points = sorted(set(a.atoms) | set(b.atoms))
    total = 0.0
    ca = cb = 0.0
    ia = ib = 0
    for left, right in zip(points, points[1:]):
        while ia < len(a) and a.atoms[ia] <= left:
            ca += a.weights[ia]
            ia += 1
        while ib < len(b) and b.atoms[ib] <= left:
            cb += b.weights[ib]
            ib += 1
        total += abs(ca - cb) * (right - left)
    return total


def monotone_coupling(source: DiscreteMeasure, target: DiscreteMeasure) -> MonotoneCoupling:
    """Quantile coupling: align the two CDFs and pair off mass in time order.

    The result is the unique coupling with monotone support; its cost equals
    ``w1_distance(source, target)``.
    """
    rows: list[list[tuple[int, float]]] = [[] for _ in range(len(source))]
    i = j = 0
    left_i = source.weights[0]
    left_j = target.weights[0]
    while True:
        m = min(left_i, left_j)
        if m > 0.0:
            rows[i].append((j, m))
        left_i -= m
        left_j -= m
        # Advance whichever side ran out; on exact ties advance both.
        if left_i <= WEIGHT_TOL:
            i += 1
            if i < len(source):
                left_i = source.weights[i]
        if left_j <= WEIGHT_TOL:
            j += 1
            if j < len(target):
                left_j = target.weights[j]
        if i >= len(source) or j >= len(target):
            break
    return MonotoneCoupling(source, target, rows)


def is_right_shift_of(target: DiscreteMeasure, source: DiscreteMeasure,
                      tol: float = WEIGHT_TOL) -> bool:
    """True when ``target`` is reachable from ``source`` by moving mass right.

    Equivalent to first-order stochastic dominance: the target CDF never
    exceeds the source CDF.  Checked at every merged breakpoint with
    tolerance ``tol`` on cumulative weights.
    """
    points = sorted(set(source.atoms) | set(target.atoms))
    cs = ct = 0.0
    i = j = 0
    for p in points:
        while i < len(source) and source.atoms[i] <= p:
            cs += source.weights[i]
            i += 1
        while j < len(target) and target.atoms[j] <= p:
            ct += target.weights[j]
            j += 1
        if ct > cs + tol:
            return False
    return True


def restrict_renormalize(xi: DiscreteMeasure, t: float) -> DiscreteMeasure:
    """Condition ``xi`` on the open tail ``(t, oo)``."""
    atoms = []
    weights = []
    for a, w in zip(xi.atoms, xi.weights):
        if a > t:
            atoms.append(a)
            weights.append(w)
    mass = sum(weights)
    if not atoms or mass <= WEIGHT_TOL:
        raise EmptyTailError(f"no mass strictly after t={t}")
    return DiscreteMeasure(atoms, [w / mass for w in weights])


def ceiling_project(mu: DiscreteMeasure, grid: Sequence[float]) -> DiscreteMeasure:
    """Push every atom of ``mu`` up to the smallest grid point at or above it.

    The result is a right shift of ``mu`` and moves each atom by less than the
    local grid mesh.  Raises ``CoverageError`` when an atom lies above the top
    of the grid.  Atoms already on the grid (within ``ATOM_MERGE_TOL``) stay.
    """
    pts = [float(g) for g in grid]
    if not pts:
        raise CoverageError("empty grid")
    if any(b - a <= 0 for a, b in zip(pts, pts[1:])):
        raise CoverageError("grid points must be strictly increasing")
    atoms = []
    for t in mu.atoms:
        k = bisect_left(pts, t - ATOM_MERGE_TOL)
        if k >= len(pts):
            raise CoverageError(f"atom {t} lies above the last grid point {pts[-1]}")
        atoms.append(pts[k])
    return DiscreteMeasure(atoms, mu.weights)


def measure_to_json(mu: DiscreteMeasure) -> list[dict[str, float]]:
    return [{"t": t, "w": w} for t, w in zip(mu.atoms, mu.weights)]


def measure_from_json(data: Sequence[dict]) -> DiscreteMeasure:
    """Read ``[{"t": ..., "w": ...}, ...]``, renormalizing small ingest error."""
    try:
        atoms = [float(item["t"]) for item in data]
        weights = [float(item["w"]) for item in data]
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"measure entries must be objects with 't' and 'w': {exc}") from exc
    total = sum(weights)
    if abs(total - 1.0) > INGEST_TOL:
        raise ValidationError(f"ingested weights sum to {total!r}, beyond tolerance {INGEST_TOL}")
    if total != 1.0 and total > 0:
        weights = [w / total for w in weights]
    return DiscreteMeasure(atoms, weights)
