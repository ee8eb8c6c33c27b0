"""Payoff functionals evaluated at a stop.

A cost is a small named recipe rather than arbitrary code: a kind saying which
part of the path state it reads (terminal position, running max, time, or the
Markov pair ``(w, t)``) and a named scalar form with parameters.  Custom costs
are polynomial coefficient lists only.

For stability bounds the module also produces a modulus of continuity in the
expected stopping-time shift: ``phi(x) = C*x`` for terminal costs that are
2-Hoelder with constant ``C`` on the reachable range, ``4*C*x`` for running-max
costs (Doob), and the stored linear modulus for time costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .errors import ConfigError
from .lattice import LatticeSpec, PathState

KINDS = ("terminal", "running_max", "time", "markov")
SCALAR_NAMES = ("identity", "square", "abs", "positive_part", "indicator", "polynomial")
# markov costs may additionally use a bivariate polynomial in (w, t).
MARKOV_NAMES = SCALAR_NAMES + ("polynomial2",)


@dataclass(frozen=True)
class CostSpec:
    kind: str
    name: str
    params: Mapping = field(default_factory=dict)
    holder2_constant: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"cost kind must be one of {KINDS}, got {self.kind!r}")
        allowed = MARKOV_NAMES if self.kind == "markov" else SCALAR_NAMES
        if self.name not in allowed:
            raise ConfigError(f"cost name {self.name!r} not in {allowed} for kind {self.kind!r}")
        if self.name == "indicator" and "threshold" not in self.params:
            raise ConfigError("indicator cost needs params['threshold']")
        if self.name == "polynomial":
            coeffs = self.params.get("coeffs")
            if not coeffs or not all(isinstance(c, (int, float)) for c in coeffs):
                raise ConfigError("polynomial cost needs params['coeffs'] as a number list")
        if self.name == "polynomial2":
            coeffs = self.params.get("coeffs")
            ok = bool(coeffs) and all(
                hasattr(row, "__len__") and all(isinstance(c, (int, float)) for c in row)
                for row in coeffs
            )
            if not ok:
                raise ConfigError("polynomial2 cost needs params['coeffs'] as a coefficient matrix")
        if self.holder2_constant is not None and not self.holder2_constant >= 0:
            raise ConfigError(f"holder2_constant must be nonnegative, got {self.holder2_constant!r}")


def _scalar_fn(name: str, params: Mapping) -> Callable[[float], float]:
    if name == "identity":
        return lambda x: x
    if name == "square":
        return lambda x: x * x
    if name == "abs":
        return abs
    if name == "positive_part":
        return lambda x: x if x > 0.0 else 0.0
    if name == "indicator":
        k = float(params["threshold"])
        return lambda x: 1.0 if x >= k else 0.0
    if name == "polynomial":
        coeffs = [float(c) for c in params["coeffs"]]
        def poly(x: float) -> float:
            acc = 0.0
            for c in reversed(coeffs):
                acc = acc * x + c
            return acc
        return poly
    raise ConfigError(f"unknown scalar cost name {name!r}")


def evaluate(cost: CostSpec, st: PathState) -> float:
    """Value of the cost when stopping in state ``st``."""
    if cost.kind == "terminal":
        return _scalar_fn(cost.name, cost.params)(st.w)
    if cost.kind == "running_max":
        if st.m is None:
            raise ConfigError(
                "running_max cost on a lattice that does not track the maximum; "
                "set augment_max=True"
            )
        return _scalar_fn(cost.name, cost.params)(st.m)
    if cost.kind == "time":
        return _scalar_fn(cost.name, cost.params)(st.t)
    # markov: bivariate polynomial or a scalar form read off the position.
    if cost.name == "polynomial2":
        acc = 0.0
        for i, row in enumerate(cost.params["coeffs"]):
            for j, c in enumerate(row):
                acc += float(c) * st.w ** i * st.t ** j
        return acc
    return _scalar_fn(cost.name, cost.params)(st.w)


def modulus(cost: CostSpec) -> Optional[Callable[[float], float]]:
    """Modulus ``phi`` bounding ``|E c(tau) - E c(rho)|`` by ``phi(E|tau - rho|)``.

    Requires ``holder2_constant`` to be set (use
    ``holder2_constant_from_range`` to derive one from a lattice).  For time
    costs the stored constant is read as a plain Lipschitz constant in time.
    Returns None when no modulus route exists for the cost kind.
    """
    c = cost.holder2_constant
    if c is None:
        return None
    if cost.kind == "terminal":
        return lambda x: c * x
    if cost.kind == "running_max":
        # Doob's L2 inequality turns the terminal constant into 4c.
        return lambda x: 4.0 * c * x
    if cost.kind == "time":
        return lambda x: c * x
    return None


def holder2_constant_from_range(cost: CostSpec, spec: LatticeSpec) -> float:
    """Smallest constant making the cost 2-Hoelder (terminal, running max) or
    Lipschitz (time) on the states reachable within ``spec``.

    The constant is exact for the discrete reachable range, which is all the
    stability bounds need; it is not a statement about the continuum limit.
    """
    h = spec.step_width
    f = _scalar_fn(cost.name, cost.params) if cost.name != "polynomial2" else None
    if cost.kind == "terminal":
        values = [l * h for l in range(-spec.depth, spec.depth + 1)]
        power = 2
    elif cost.kind == "running_max":
        values = [l * h for l in range(0, spec.depth + 1)]
        power = 2
    elif cost.kind == "time":
        values = [s * spec.dt for s in range(0, spec.depth + 1)]
        power = 1
    else:
        raise ConfigError("no modulus route for markov costs")
    best = 0.0
    for i, x in enumerate(values):
        for y in values[i + 1:]:
            ratio = abs(f(x) - f(y)) / (y - x) ** power
            if ratio > best:
                best = ratio
    return best


def with_constant_from_range(cost: CostSpec, spec: LatticeSpec) -> CostSpec:
    """Copy of ``cost`` with ``holder2_constant`` filled in from the lattice range."""
    return CostSpec(
        kind=cost.kind,
        name=cost.name,
        params=dict(cost.params),
        holder2_constant=holder2_constant_from_range(cost, spec),
    )


def modulus_metadata(cost: CostSpec, spec: Optional[LatticeSpec] = None) -> dict:
    """Reportable facts about the modulus backing a stability claim.

    ``uniform_continuity_verified`` is True only when a modulus constant is
    actually available for the cost; markov costs have no verified route.
    """
    c = cost.holder2_constant
    if c is None and spec is not None and cost.kind != "markov":
        c = holder2_constant_from_range(cost, spec)
    verified = c is not None and cost.kind in ("terminal", "running_max", "time")
    return {
        "holder2_constant": c,
        "modulus_form": "linear" if verified else None,
        "uniform_continuity_verified": verified,
    }


def cost_to_json(cost: CostSpec) -> dict:
    out = {"kind": cost.kind, "name": cost.name, "params": dict(cost.params)}
    if cost.holder2_constant is not None:
        out["holder2_constant"] = cost.holder2_constant
    return out


def cost_from_json(data: dict) -> CostSpec:
    if not isinstance(data, dict):
        raise ConfigError("cost config must be an object")
    try:
        kind = data["kind"]
        name = data["name"]
    except KeyError as exc:
        raise ConfigError(f"cost config missing field {exc}") from exc
    hc = data.get("holder2_constant")
    return CostSpec(
        kind=str(kind),
        name=str(name),
        params=dict(data.get("params", {})),
        holder2_constant=float(hc) if hc is not None else None,
    )
