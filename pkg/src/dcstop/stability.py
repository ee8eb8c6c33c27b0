"""Quantitative sanity checks tying the solver to its continuity estimates.

Three families of checks live here:

* convergence sweeps: project a fine target law onto nested coarser time
  grids, solve each instance on the same lattice, and compare the value gaps
  against the cost's uniform-continuity modulus of the transport distance,
* concavity probes: the value of a blend of target laws must dominate the
  blend of values (extra randomization never hurts),
* right-shift identities: pushing a kernel's marginal outward along a
  monotone coupling must realize exactly the coupling's transport cost.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .cost import CostSpec, modulus, with_constant_from_range
from .errors import ConfigError
from .lattice import LatticeSpec
from .measures import (
    DiscreteMeasure,
    ceiling_project,
    monotone_coupling,
    w1_distance,
)
from .rst import StoppingKernel, marginal_of, push_right_with_shift

BLEND_TOL = 1e-9
SHIFT_TOL = 1e-12


@dataclass(frozen=True)
class StabilityReport:
    rows: tuple[dict, ...]
    all_within: bool


def _nested(coarse: Sequence[float], fine: Sequence[float]) -> bool:
    fine_set = sorted(fine)
    return all(any(abs(t - u) <= 1e-9 for u in fine_set) for t in coarse)


def convergence_sweep(spec: LatticeSpec, cost: CostSpec, mu: DiscreteMeasure,
                      grids: Sequence[Sequence[float]], resolution: int,
                      value_fn: Optional[Callable] = None) -> StabilityReport:
    """Value gaps along nested grid projections versus the modulus bound.

    ``grids`` must be nested coarse-to-fine and every grid must cover the
    target law's support from above, so each projected law is a right shift
    of the target and all comparisons happen on one lattice.  The reference
    value belongs to the finest computable proxy, the projection onto the
    last grid, never to a continuum limit.  Each row's bound is
    ``modulus(W1 to that proxy) + both solver slacks``.
    """
    from .dpp import solve

    if not grids:
        raise ConfigError("need at least one grid to sweep")
    for a, b in zip(grids, grids[1:]):
        if not _nested(a, b):
            raise ConfigError("stability grids must be nested coarse-to-fine")
    cost_mod = cost
    if modulus(cost) is None:
        cost_mod = with_constant_from_range(cost, spec)
    phi = modulus(cost_mod)
    if phi is None:
        raise ConfigError(
            f"no continuity modulus available for cost kind {cost.kind!r}"
        )
    if value_fn is None:
        def value_fn(m: DiscreteMeasure):
            table = solve(spec, cost_mod, m, resolution)
            return table.root_value, table.slack

    mu_fine = ceiling_project(mu, grids[-1])
    v_fine, slack_fine = value_fn(mu_fine)
    rows = []
    all_within = True
    for n, grid in enumerate(grids):
        mu_n = ceiling_project(mu, grid)
        w1_to_fine = w1_distance(mu_n, mu_fine)
        v_n, slack_n = value_fn(mu_n)
        bound = phi(w1_to_fine) + slack_fine + slack_n
        value_gap = abs(v_n - v_fine)
        within = value_gap <= bound + 1e-12
        all_within = all_within and within
        rows.append({
            "n": n,
            "grid_size": len(grid),
            "w1_gap": w1_distance(mu, mu_n),
            "w1_to_fine": w1_to_fine,
            "value": v_n,
            "value_fine": v_fine,
            "value_gap": value_gap,
            "bound": bound,
            "within": within,
        })
    return StabilityReport(rows=tuple(rows), all_within=all_within)


@dataclass(frozen=True)
class ConcavityReport:
    rows: tuple[dict, ...]
    all_ok: bool


def blend_measures(mu1: DiscreteMeasure, mu2: DiscreteMeasure, lam: float) -> DiscreteMeasure:
    atoms = list(mu1.atoms) + list(mu2.atoms)
    weights = [lam * w for w in mu1.weights] + [(1.0 - lam) * w for w in mu2.weights]
    return DiscreteMeasure(atoms, weights)


def concavity_check(spec: LatticeSpec, cost: CostSpec,
                    mu1: DiscreteMeasure, mu2: DiscreteMeasure,
                    lambdas: Sequence[float],
                    value_fn: Optional[Callable[[DiscreteMeasure], float]] = None,
                    tol: float = BLEND_TOL) -> ConcavityReport:
    """Blending target laws can only help: value(blend) >= blend of values.

    Defaults to the LP oracle for the values so the probe stays independent
    of the block solver; pass ``value_fn`` to probe another route.
    """
    from .oracle import oracle_value

    if value_fn is None:
        def value_fn(m: DiscreteMeasure) -> float:
            return oracle_value(spec, cost, m)

    v1 = value_fn(mu1)
    v2 = value_fn(mu2)
    rows = []
    all_ok = True
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"blend weight must sit in [0, 1], got {lam}")
        lhs = value_fn(blend_measures(mu1, mu2, lam))
        rhs = lam * v1 + (1.0 - lam) * v2
        margin = lhs - rhs
        ok = margin >= -tol
        all_ok = all_ok and ok
        rows.append({
            "lam": lam,
            "blend_value": lhs,
            "mixed_values": rhs,
            "margin": margin,
            "ok": ok,
        })
    return ConcavityReport(rows=tuple(rows), all_ok=all_ok)


@dataclass(frozen=True)
class ShiftReport:
    rows: tuple[dict, ...]
    all_ok: bool


def push_right_identity_check(kernel: StoppingKernel, spec: LatticeSpec,
                              targets: Sequence[DiscreteMeasure],
                              tol: float = SHIFT_TOL) -> ShiftReport:
    """Pushing outward must cost exactly the transport distance.

    The kernel's marginal is coupled monotonically to each target; the
    rewired kernel must realize that coupling's cost as its mean time shift
    and land on the target exactly.
    """
    source = marginal_of(kernel, spec)
    rows = []
    all_ok = True
    for target in targets:
        coupling = monotone_coupling(source, target)
        moved, shift = push_right_with_shift(kernel, spec, coupling)
        w1 = w1_distance(source, target)
        err = w1_distance(marginal_of(moved, spec), target)
        ok = abs(shift - w1) <= tol and err <= 1e-9
        all_ok = all_ok and ok
        rows.append({
            "shift": shift,
            "w1": w1,
            "marginal_error": err,
            "ok": ok,
        })
    return ShiftReport(rows=tuple(rows), all_ok=all_ok)


def rows_to_csv(rows: Sequence[dict], path: str) -> None:
    if not rows:
        raise ConfigError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def report_to_json(report: StabilityReport, path: str) -> None:
    payload = {"all_within": report.all_within, "rows": list(report.rows)}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
