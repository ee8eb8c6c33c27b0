"""Backward-induction solver over renormalized stop-mass simplices.

Between consecutive atoms of the target law, the only freedom left to an
admissible stopping scheme is how the renormalized vector of future stop
masses splits across the driver's up and down moves; the split must average
back to the parent vector.  The solver therefore works block by block, one
block per remaining-atom count ``k``:

* within a block, one driver step maps a value function ``V`` on the
  ``k``-simplex to ``sup`` over mean-preserving splits of the average of the
  children's values (``pair_sup``),
* at the next atom, the first simplex coordinate is paid out at the current
  state's cost and the rest is renormalized into the ``(k-1)``-block
  (``perspective``).

Value functions stay piecewise linear and concave throughout, so they are
carried exactly: as a min of affine pieces (for evaluation) plus the vertex
set of their hypograph (for the Minkowski construction behind ``pair_sup``).
Simplex grids only enter when sampling the stored tables and estimating a
resolution-based slack; the root value itself does not depend on the grid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import ConvexHull

from .cost import CostSpec, evaluate
from .errors import ConfigError, SizeGuardError
from .lattice import (
    LatticeSpec,
    NodeId,
    atom_steps,
    children,
    nodes_at_step,
    project_to_recombining,
    root,
    state,
)
from .measures import DiscreteMeasure
from .mvm import MvmTree

GRID_SIZE_LIMIT = 1_000_000
PAIR_CLOUD_LIMIT = 4_000_000
POLICY_DEPTH_LIMIT = 12
PURE_DEPTH_LIMIT = 12
PURE_TABLE_LIMIT = 500_000
UPPER_FACET_TOL = 1e-12
SLACK_FLOOR = 1e-9


class SimplexGrid:
    """All length-``k`` compositions of ``resolution``, with interpolation.

    Grid points are integer vectors summing to the resolution; ``fractions``
    divides them through.  Interpolation uses the standard simplicial
    subdivision in cumulative coordinates, which never leaves the simplex.
    """

    __slots__ = ("k", "resolution", "points", "fractions", "index")

    def __init__(self, k: int, resolution: int):
        if not (isinstance(k, int) and k >= 1):
            raise ConfigError(f"dimension must be a positive int, got {k!r}")
        if not (isinstance(resolution, int) and resolution >= 1):
            raise ConfigError(f"resolution must be a positive int, got {resolution!r}")
        n = comb(resolution + k - 1, k - 1)
        if n > GRID_SIZE_LIMIT:
            raise SizeGuardError(
                f"simplex grid would hold {n} points (limit {GRID_SIZE_LIMIT}); "
                "lower the resolution"
            )
        pts = np.zeros((n, k), dtype=np.int64)
        row = 0

        def fill(prefix, remaining, pos):
            nonlocal row
            if pos == k - 1:
                pts[row, :pos] = prefix
                pts[row, pos] = remaining
                row += 1
                return
            for v in range(remaining, -1, -1):
                fill(prefix + [v], remaining - v, pos + 1)

        fill([], resolution, 0)
        self.k = k
        self.resolution = resolution
        self.points = pts
        self.fractions = pts.astype(float) / resolution
        self.index = {tuple(p): i for i, p in enumerate(pts.tolist())}

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def barycentric(self, y) -> list[tuple[int, float]]:
        """Vertices and weights of the grid cell containing ``y``."""
        y = np.asarray(y, dtype=float)
        r, k = self.resolution, self.k
        if k == 1:
            return [(0, 1.0)]
        u = r * np.cumsum(y[:-1])
        u = np.clip(u, 0.0, float(r))
        f = np.floor(u).astype(np.int64)
        frac = u - f
        for j in range(k - 1):
            if f[j] >= r:
                f[j], frac[j] = r - 1, 1.0
        # Cumulative coordinates must stay nondecreasing along the chain.
        order = sorted(range(k - 1), key=lambda j: (-frac[j], -j))
        chains = [f.copy()]
        cur = f.copy()
        for j in order:
            cur = cur.copy()
            cur[j] += 1
            chains.append(cur)
        w = [1.0 - frac[order[0]]] if order else [1.0]
        for m in range(len(order) - 1):
            w.append(frac[order[m]] - frac[order[m + 1]])
        if order:
            w.append(frac[order[-1]])
        out = []
        for chain, wt in zip(chains, w):
            if wt <= 0.0:
                continue
            compo = [int(chain[0])]
            for j in range(1, k - 1):
                compo.append(int(chain[j] - chain[j - 1]))
            compo.append(int(r - chain[-1]))
            if any(c < 0 for c in compo):
                continue
            out.append((self.index[tuple(compo)], float(wt)))
        total = sum(wt for _, wt in out)
        return [(i, wt / total) for i, wt in out]

    def interpolate(self, values, y) -> float:
        vals = np.asarray(values, dtype=float)
        return float(sum(w * vals[i] for i, w in self.barycentric(y)))

    def max_adjacent_diff(self, values) -> float:
        """Largest value change across one unit of grid mass transfer."""
        vals = np.asarray(values, dtype=float)
        worst = 0.0
        for idx in range(self.size):
            p = self.points[idx]
            for i in range(self.k):
                if p[i] == 0:
                    continue
                for j in range(self.k):
                    if i == j:
                        continue
                    q = p.copy()
                    q[i] -= 1
                    q[j] += 1
                    other = self.index.get(tuple(q.tolist()))
                    if other is not None and other > idx:
                        worst = max(worst, abs(float(vals[idx] - vals[other])))
        return worst


def _upper_hull_2d(xs: np.ndarray, vs: np.ndarray) -> list[int]:
    """Indices of the upper concave chain of ``(x, v)`` points, x ascending."""
    best: dict[float, int] = {}
    for i in np.lexsort((vs, xs)):
        best[float(xs[i])] = int(i)
    cand = [best[x] for x in sorted(best)]
    chain: list[int] = []
    for i in cand:
        while len(chain) >= 2:
            a, b = chain[-2], chain[-1]
            cross = (xs[b] - xs[a]) * (vs[i] - vs[a]) - (vs[b] - vs[a]) * (xs[i] - xs[a])
            if cross >= 0.0:
                chain.pop()
            else:
                break
        chain.append(i)
    return chain


@dataclass(frozen=True)
class ConcavePL:
    """Concave piecewise-linear function on the ``k``-simplex, carried exactly.

    ``pieces`` holds rows ``g`` with value ``min_g g . y`` in full barycentric
    coordinates.  ``verts`` holds the hypograph's extreme points as
    ``(y, value)`` rows of width ``k + 1``.  ``prov`` optionally records, per
    vertex, the up/down source points that produced it in a pair supremum.
    """

    k: int
    pieces: np.ndarray
    verts: np.ndarray
    prov: Optional[np.ndarray] = None

    @staticmethod
    def constant(value: float) -> ConcavePL:
        return ConcavePL(
            k=1,
            pieces=np.array([[float(value)]]),
            verts=np.array([[1.0, float(value)]]),
        )

    def evaluate(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(np.min(self.pieces @ y))

    def evaluate_batch(self, ys: np.ndarray) -> np.ndarray:
        return np.min(ys @ self.pieces.T, axis=1)

    def argmin_piece(self, y) -> int:
        vals = self.pieces @ np.asarray(y, dtype=float)
        return int(np.argmin(vals))


def _hull_upper(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Upper envelope of a (d+1)-dim point cloud (last axis is the value).

    Returns ``(affine, vert_ids, facet_vert_ids)`` where ``affine`` rows are
    ``(a, beta)`` with envelope ``min_a a . x + beta`` over the x-projection.
    A sentinel far below the cloud keeps the hull full-dimensional even when
    the data is affine.
    """
    d = points.shape[1] - 1
    if d == 1:
        chain = _upper_hull_2d(points[:, 0], points[:, 1])
        affine = []
        facets = []
        for a, b in zip(chain, chain[1:]):
            xa, va = points[a]
            xb, vb = points[b]
            slope = (vb - va) / (xb - xa)
            affine.append((slope, va - slope * xa))
            facets.append(np.array([a, b]))
        if not affine:
            affine.append((0.0, float(points[chain[0], 1])))
            facets.append(np.array([chain[0]]))
        return np.array(affine), np.array(chain), facets
    span = float(points[:, -1].max() - points[:, -1].min())
    sentinel = np.concatenate(
        [points[:, :-1].mean(axis=0), [points[:, -1].min() - 10.0 * (span + 1.0)]]
    )
    hull = ConvexHull(np.vstack([points, sentinel]))
    sid = points.shape[0]
    eqs = hull.equations
    upper = eqs[:, d] > UPPER_FACET_TOL
    affine = []
    facets = []
    vert_ids: set[int] = set()
    for fi in np.flatnonzero(upper):
        n = eqs[fi]
        a = -n[:d] / n[d]
        beta = -n[d + 1] / n[d]
        simplex = hull.simplices[fi]
        if sid in simplex:
            continue
        affine.append(np.concatenate([a, [beta]]))
        facets.append(simplex.copy())
        vert_ids.update(int(i) for i in simplex)
    order = sorted(vert_ids)
    return np.array(affine), np.array(order), facets


def _pieces_from_affine(affine: np.ndarray, k: int, total: float) -> np.ndarray:
    """Full-barycentric pieces for an envelope fit over ``x = y[:k-1] * total``.

    The cloud lives on ``sum(coords) == total``; the returned pieces evaluate
    the function on the unit simplex directly.
    """
    a = affine[:, :-1]
    beta = affine[:, -1] / total
    g = np.zeros((affine.shape[0], k))
    g[:, : k - 1] = a
    g += beta[:, None]
    return g


def from_samples(grid: SimplexGrid, values) -> ConcavePL:
    """Concave envelope of values sampled on a simplex grid."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != (grid.size,):
        raise ConfigError(f"expected {grid.size} values, got shape {vals.shape}")
    if grid.k == 1:
        return ConcavePL.constant(float(vals[0]))
    cloud = np.column_stack([grid.fractions[:, : grid.k - 1], vals])
    affine, vert_ids, _ = _hull_upper(cloud)
    pieces = _pieces_from_affine(affine, grid.k, total=1.0)
    verts = np.column_stack([grid.fractions[vert_ids], vals[vert_ids]])
    return ConcavePL(k=grid.k, pieces=pieces, verts=verts)


def pair_sup(up: ConcavePL, down: ConcavePL, want_prov: bool = False) -> ConcavePL:
    """Best mean-preserving split of a driver step.

    ``W(y) = sup {(Vu(p) + Vd(q)) / 2 : (p + q) / 2 = y}`` for concave
    piecewise-linear ``Vu, Vd``: the hypograph of ``2 W(. / 2)`` is the
    Minkowski sum of the two hypographs, so its vertices are sums of vertex
    pairs and one upper hull finishes the job.
    """
    if up.k != down.k:
        raise ConfigError("pair supremum needs matching dimensions")
    k = up.k
    if k == 1:
        w = 0.5 * (up.verts[0, 1] + down.verts[0, 1])
        out = ConcavePL.constant(w)
        if want_prov:
            out = ConcavePL(
                k=1, pieces=out.pieces, verts=out.verts,
                prov=np.array([[1.0, 1.0]]),
            )
        return out
    nu, nd = up.verts.shape[0], down.verts.shape[0]
    if nu * nd > PAIR_CLOUD_LIMIT:
        raise SizeGuardError(
            f"pair cloud of {nu * nd} points exceeds {PAIR_CLOUD_LIMIT}"
        )
    yu = up.verts[:, :k]
    yd = down.verts[:, :k]
    sums = (up.verts[:, None, :] + down.verts[None, :, :]).reshape(-1, k + 1)
    cloud = np.column_stack([sums[:, : k - 1], sums[:, k]])
    affine, vert_ids, _ = _hull_upper(cloud)
    pieces = _pieces_from_affine(affine, k, total=2.0)
    verts = np.column_stack([0.5 * sums[vert_ids, :k], 0.5 * sums[vert_ids, k]])
    prov = None
    if want_prov:
        iu, idn = np.divmod(vert_ids, nd)
        prov = np.column_stack([yu[iu], yd[idn]])
    return ConcavePL(k=k, pieces=pieces, verts=verts, prov=prov)


def perspective(stop_value: float, inner: ConcavePL) -> ConcavePL:
    """Atom decision: pay ``stop_value`` on the first coordinate, renormalize
    the rest into ``inner``.

    ``B(y) = y1 * stop_value + (1 - y1) * inner(y')``; in full barycentric
    coordinates each inner piece simply gains a leading coefficient, and the
    hypograph is the cone joining the apex ``(e1, stop_value)`` to the inner
    hypograph embedded at ``y1 = 0``.
    """
    k = inner.k + 1
    pieces = np.column_stack([np.full(inner.pieces.shape[0], stop_value), inner.pieces])
    base = np.column_stack([
        np.zeros(inner.verts.shape[0]),
        inner.verts[:, : inner.k],
        inner.verts[:, inner.k],
    ])
    apex = np.zeros((1, k + 1))
    apex[0, 0] = 1.0
    apex[0, k] = stop_value
    return ConcavePL(k=k, pieces=pieces, verts=np.vstack([apex, base]))


def one_step_sup(grid: SimplexGrid, vu, vd) -> np.ndarray:
    """Grid-sampled pair supremum of two grid-sampled value functions.

    The inputs are concavified first (splitting mass across grid cells is one
    more admissible randomization), so the result dominates the pointwise
    average, is midpoint-concave and is a fixpoint of itself.
    """
    w = pair_sup(from_samples(grid, vu), from_samples(grid, vd))
    return w.evaluate_batch(grid.fractions)


def atom_boundary(grid: SimplexGrid, node_value_next, cost_now: float, y) -> float:
    """Stop-or-renormalize readout at an atom from a grid-sampled table.

    Pays ``cost_now`` on the leading coordinate of ``y`` and reads the rest,
    rescaled back onto the simplex, out of ``node_value_next`` by barycentric
    interpolation (the rescaled point need not be a grid point).  With all
    mass on the leading coordinate the table is not consulted at all.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (grid.k + 1,):
        raise ConfigError(
            f"expected a point with {grid.k + 1} coordinates, got shape {y.shape}"
        )
    y1 = float(y[0])
    if 1.0 - y1 <= 1e-14:
        return float(cost_now)
    inner = grid.interpolate(node_value_next, y[1:] / (1.0 - y1))
    return y1 * float(cost_now) + (1.0 - y1) * inner


@dataclass(frozen=True)
class ValueTable:
    """Solver output: root value plus grid-sampled block boundary tables.

    ``tables`` maps ``(k, step, node)`` to values on ``SimplexGrid(k)``: the
    pre-decision value of holding a renormalized ``k``-atom future law at the
    block's closing atom step.  ``slack`` is the largest adjacent-grid value
    difference across all tables, a Lipschitz-times-mesh bound on anything a
    grid readout can miss.
    """

    spec: LatticeSpec
    cost: CostSpec
    mu: DiscreteMeasure
    resolution: int
    steps: tuple[int, ...]
    root_value: float
    tables: dict[tuple[int, int, NodeId], np.ndarray]
    slack: float
    digest: str
    reps: dict[tuple[int, NodeId], ConcavePL] = field(repr=False)

    def grid(self, k: int) -> SimplexGrid:
        return SimplexGrid(k, self.resolution)


def _mu_vector(mu: DiscreteMeasure) -> np.ndarray:
    return np.asarray(mu.weights, dtype=float)


def solve(spec: LatticeSpec, cost: CostSpec, mu: DiscreteMeasure,
          resolution: int, debug: bool = False) -> ValueTable:
    """Exact block backward induction for the constrained stopping value.

    ``resolution`` only controls the sampled tables and the reported slack;
    the root value is computed from the exact piecewise-linear
    representations.  ``debug`` re-derives every boundary table entry through
    the explicit renormalization quotient and insists the two routes agree to
    1e-12.
    """
    if not (isinstance(resolution, int) and resolution >= 1):
        raise ConfigError(f"resolution must be a positive int, got {resolution!r}")
    steps = atom_steps(spec, mu.atoms)
    r = len(steps)
    horizon = steps[-1]
    step_of_atom = {s: i for i, s in enumerate(steps)}
    reps: dict[tuple[int, NodeId], ConcavePL] = {}

    for s in range(horizon, -1, -1):
        for node in nodes_at_step(spec, s):
            st = state(spec, node)
            if s == horizon:
                reps[(s, node)] = ConcavePL.constant(evaluate(cost, st))
                continue
            up, down = children(spec, node)
            cont = pair_sup(reps[(s + 1, up)], reps[(s + 1, down)])
            if s in step_of_atom:
                reps[(s, node)] = perspective(evaluate(cost, st), cont)
            else:
                reps[(s, node)] = cont

    root_value = reps[(0, root(spec))].evaluate(_mu_vector(mu))

    tables: dict[tuple[int, int, NodeId], np.ndarray] = {}
    slack = SLACK_FLOOR
    grids = {k: SimplexGrid(k, resolution) for k in range(1, r + 1)}
    for k in range(1, r + 1):
        s = steps[r - k]
        grid = grids[k]
        for node in nodes_at_step(spec, s):
            vals = reps[(s, node)].evaluate_batch(grid.fractions)
            tables[(k, s, node)] = vals
            slack = max(slack, grid.max_adjacent_diff(vals))

    if debug:
        _check_scaling(spec, cost, reps, tables, grids, step_of_atom)

    h = hashlib.sha256()
    for key in sorted(tables, key=lambda t: (t[0], t[1], repr(t[2]))):
        h.update(repr(key).encode())
        h.update(np.round(tables[key], 12).tobytes())
    h.update(f"{root_value:.12e}".encode())

    return ValueTable(
        spec=spec, cost=cost, mu=mu, resolution=resolution,
        steps=tuple(steps), root_value=root_value, tables=tables,
        slack=slack, digest=h.hexdigest(), reps=reps,
    )


def _check_scaling(spec, cost, reps, tables, grids, step_of_atom):
    """Boundary entries must equal the explicit stop/renormalize quotient."""
    for (k, s, node), vals in tables.items():
        if k == 1:
            continue
        grid = grids[k]
        st = state(spec, node)
        c = evaluate(cost, st)
        up, down = children(spec, node)
        inner = pair_sup(reps[(s + 1, up)], reps[(s + 1, down)])
        for y, stored in zip(grid.fractions, vals):
            y1 = y[0]
            if 1.0 - y1 <= 1e-14:
                direct = c
            else:
                direct = y1 * c + (1.0 - y1) * inner.evaluate(y[1:] / (1.0 - y1))
            if abs(direct - stored) > 1e-12:
                raise AssertionError(
                    f"renormalization identity off by {abs(direct - stored):.3e} "
                    f"at block {k}, step {s}, node {node}"
                )


@dataclass(frozen=True)
class DppReport:
    residual: float
    slack: float
    ok: bool


def check_dpp(table: ValueTable, theta: Callable[[LatticeSpec, NodeId], bool]) -> DppReport:
    """Verify the dynamic-programming identity across a stopping frontier.

    The root value is recomputed by backward induction that terminates early
    wherever ``theta`` fires, substituting the solver's stored value function
    there (at an atom step this is the pre-decision boundary function).  The
    residual must sit within the table's slack; a frontier past the last atom
    degenerates into a full recomputation.
    """
    spec = table.spec
    steps = table.steps
    horizon = steps[-1]
    step_of_atom = {s: i for i, s in enumerate(steps)}
    memo: dict[tuple[int, NodeId], ConcavePL] = {}

    def u(s: int, node: NodeId) -> ConcavePL:
        key = (s, node)
        if key in memo:
            return memo[key]
        if s == horizon or theta(spec, node):
            rep = table.reps[(s, node)]
        else:
            up, down = children(spec, node)
            cont = pair_sup(u(s + 1, up), u(s + 1, down))
            if s in step_of_atom:
                rep = perspective(evaluate(table.cost, state(spec, node)), cont)
            else:
                rep = cont
        memo[key] = rep
        return rep

    recomputed = u(0, root(spec)).evaluate(_mu_vector(table.mu))
    residual = abs(recomputed - table.root_value)
    return DppReport(residual=residual, slack=table.slack, ok=residual <= table.slack)


def _facet_split(w: ConcavePL, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover an optimal up/down split at ``y`` from pair-sup provenance.

    The doubled point ``2y`` lies in some face of the Minkowski hull; writing
    it as a convex combination of that face's vertices and pulling the
    combination back through each vertex's source pair yields split points
    achieving the supremum exactly.  The face may be a merged polygon, so the
    combination is found by nonnegative least squares.  Ties between pieces
    pick the lowest index.
    """
    k = w.k
    if k == 1:
        return np.array([1.0]), np.array([1.0])
    target = 2.0 * y
    vals = w.verts[:, k]
    # Active vertices: those lying on the minimizing piece's hyperplane.
    piece = w.pieces[w.argmin_piece(y)]
    on_piece = np.abs(w.verts[:, :k] @ piece - vals) <= 1e-9 * (1.0 + np.abs(vals))
    ids = np.flatnonzero(on_piece)
    a = np.vstack([2.0 * w.verts[ids, :k].T, np.ones(len(ids))])
    b = np.concatenate([target, [1.0]])
    lam, rnorm = nnls(a, b)
    total = lam.sum()
    if rnorm > 1e-8 or total <= 0.0:
        return y.copy(), y.copy()
    lam /= total
    prov = w.prov[ids]
    p = lam @ prov[:, :k]
    q = lam @ prov[:, k:]
    return p, q


def extract_policy(table: ValueTable) -> MvmTree:
    """Forward sweep turning the solved tables into an explicit law tree.

    Each history node carries its frozen stop masses plus the remaining
    (unnormalized) future law; driver steps split the remainder through the
    optimal pair-sup facet, atom steps freeze the leading coordinate.  The
    result is a valid adapted martingale tree whose objective matches the
    root value.
    """
    spec = table.spec
    steps = table.steps
    r = len(steps)
    horizon = steps[-1]
    if horizon > POLICY_DEPTH_LIMIT:
        raise SizeGuardError(
            f"policy extraction walks 2^{horizon} histories (limit 2^{POLICY_DEPTH_LIMIT})"
        )
    step_of_atom = {s: i for i, s in enumerate(steps)}

    def lattice_node(bits: tuple[int, ...]) -> NodeId:
        node = NodeId(step=len(bits), history=bits)
        if spec.mode != "history":
            node = project_to_recombining(spec, node)
        return node

    split_memo: dict[NodeId, ConcavePL] = {}

    def split_fn(s: int, bits: tuple[int, ...]) -> ConcavePL:
        node = lattice_node(bits)
        if node not in split_memo:
            up, down = children(spec, node)
            split_memo[node] = pair_sup(
                table.reps[(s + 1, up)], table.reps[(s + 1, down)], want_prov=True
            )
        return split_memo[node]

    vectors: dict[tuple[int, ...], np.ndarray] = {}
    remaining = {(): _mu_vector(table.mu).copy()}
    frozen = {(): np.zeros(r)}
    for s in range(horizon + 1):
        for bits in [b for b in remaining if len(b) == s]:
            rem = remaining[bits]
            fro = frozen[bits]
            i = step_of_atom.get(s)
            if i is not None:
                fro = fro.copy()
                rem = rem.copy()
                fro[i] += rem[i]
                rem[i] = 0.0
            vectors[bits] = fro + rem
            if s == horizon:
                continue
            live = [j for j in range(r) if steps[j] > s]
            mass = float(rem[live].sum())
            if mass <= 1e-14:
                rem_up = rem_dn = rem
            else:
                y = rem[live] / mass
                p, q = _facet_split(split_fn(s, bits), y)
                rem_up = rem.copy()
                rem_dn = rem.copy()
                rem_up[live] = mass * p
                rem_dn[live] = 2.0 * rem[live] - rem_up[live]
            remaining[bits + (1,)] = rem_up
            frozen[bits + (1,)] = fro
            remaining[bits + (0,)] = rem_dn
            frozen[bits + (0,)] = fro
    return MvmTree(spec.dt, table.mu.atoms, vectors)


def strong_value(spec: LatticeSpec, cost: CostSpec, mu: DiscreteMeasure) -> float:
    """Best objective over non-randomized stopping rules, by exhaustion.

    A pure rule sends each node's surviving mass to a single atom, so a
    subtree's contribution is summarized by the vector of leaf-mass units it
    assigns to each atom.  The recursion merges children by convolving these
    vectors, keeping the best value per vector.  Returns ``-inf`` when the
    target law is not representable in units of ``2**-horizon``.
    """
    steps = atom_steps(spec, mu.atoms)
    r = len(steps)
    horizon = steps[-1]
    if horizon > PURE_DEPTH_LIMIT:
        raise SizeGuardError(f"pure-rule search limited to horizon {PURE_DEPTH_LIMIT}")
    units = 2 ** horizon
    target = []
    for w in mu.weights:
        scaled = w * units
        if abs(scaled - round(scaled)) > 1e-9:
            return float("-inf")
        target.append(int(round(scaled)))
    step_of_atom = {s: i for i, s in enumerate(steps)}
    memo: dict[tuple[int, NodeId], dict[tuple[int, ...], float]] = {}

    def best(s: int, node: NodeId) -> dict[tuple[int, ...], float]:
        key = (s, node)
        if key in memo:
            return memo[key]
        out: dict[tuple[int, ...], float] = {}
        i = step_of_atom.get(s)
        if i is not None:
            vec = [0] * r
            vec[i] = 2 ** (horizon - s)
            out[tuple(vec)] = evaluate(cost, state(spec, node)) * 2.0 ** (-s)
        if s < horizon:
            up, down = children(spec, node)
            bu, bd = best(s + 1, up), best(s + 1, down)
            for vu, valu in bu.items():
                for vd, vald in bd.items():
                    vec = tuple(a + b for a, b in zip(vu, vd))
                    val = valu + vald
                    if out.get(vec, float("-inf")) < val:
                        out[vec] = val
            if len(out) > PURE_TABLE_LIMIT:
                raise SizeGuardError(
                    f"pure-rule table grew past {PURE_TABLE_LIMIT} entries"
                )
        memo[key] = out
        return out

    table = best(0, root(spec))
    return table.get(tuple(target), float("-inf"))
