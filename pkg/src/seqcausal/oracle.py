"""Brute-force verification kernel.

Everything here is computed from cell means and raw cell weights by
exhaustive enumeration.  Proportions are recomputed by scanning all cells
on every call and no intermediate result is cached, so the code shares no
evaluation logic with :mod:`seqcausal.gformula` or :mod:`seqcausal.netfx`.
It is slow on purpose and meant for small designs (``T <= 6``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import errors
from .keys import FullHistoryWithTreatment, MarkovWithTreatment

__all__ = [
    "CounterfactualTable",
    "IdentityReport",
    "enumerate_counterfactual_means",
    "brute_force_net_effects",
    "all_net_effects",
    "class_net_effects",
    "verify_constraint",
    "verify_stratum_constraint",
    "verify_mean_decomposition",
    "verify_regime_expansion",
    "verify_net_effect_pattern",
]


def _cells(props):
    return [(tuple(c), props.cell_weight(c)) for c in props.cells]


def _weight(cells, prefix) -> float:
    n = len(prefix)
    total = 0
    for c, w in cells:
        if c[:n] == prefix:
            total += w
    return total


def _pr(cells, event, given):
    g = _weight(cells, given)
    if g <= 0:
        raise errors.MissingConditionalMean(f"conditioning history {given!r} never observed")
    return _weight(cells, event) / g


def _levels(cells, index):
    return sorted({c[index] for c, _ in cells})


def _path_mean(means, cells, start, z_tail):
    """``sum over covariate paths of prod pr(x_s | .) * mu(cell)``.

    ``start`` is an observed prefix ending in a treatment; ``z_tail`` lists
    the treatments applied after each subsequent covariate.
    """
    T = (len(cells[0][0]) + 1) // 2
    if len(start) + 2 * len(z_tail) != 2 * T - 1:
        raise ValueError("path does not reach the horizon")
    if not z_tail:
        return float(means[start])
    total = 0.0
    for x in _levels(cells, len(start)):
        p = _pr(cells, start + (x,), start)
        if p == 0:
            continue
        nxt = start + (x, z_tail[0])
        if _weight(cells, nxt) <= 0:
            raise errors.MissingConditionalMean(
                f"history {FullHistoryWithTreatment.from_tokens(nxt)} never observed"
            )
        total += p * _path_mean(means, cells, nxt, z_tail[1:])
    return total


@dataclass
class CounterfactualTable:
    """Counterfactual means by brute force.

    ``static`` maps each static treatment sequence to ``E{y(z)}``.
    ``conditional`` maps a treatment stratum ``(h, z_t)`` to
    ``E{y(z_t, 0, ..., 0) | h}``.  ``unreachable`` lists static sequences
    that leave the observed support.
    """

    T: int
    static: dict
    conditional: dict
    unreachable: list = field(default_factory=list)


def enumerate_counterfactual_means(means, props) -> CounterfactualTable:
    """Evaluate every static regime and every conditional blip-style mean."""
    cells = _cells(props)
    T = (len(cells[0][0]) + 1) // 2
    zlev = [_levels(cells, 2 * t) for t in range(T)]

    static, unreachable = {}, []
    for z in itertools.product(*zlev):
        if _weight(cells, (z[0],)) <= 0:
            unreachable.append(z)
            continue
        try:
            static[z] = _path_mean(means, cells, (z[0],), z[1:])
        except errors.MissingConditionalMean:
            unreachable.append(z)

    conditional = {}
    for t in range(1, T + 1):
        hists = sorted({c[: 2 * (t - 1)] for c, _ in cells})
        for h in hists:
            for zt in zlev[t - 1]:
                start = h + (zt,)
                if _weight(cells, start) <= 0:
                    continue
                try:
                    val = _path_mean(means, cells, start, (0,) * (T - t))
                except errors.MissingConditionalMean:
                    continue
                conditional[FullHistoryWithTreatment.from_tokens(start)] = val
    return CounterfactualTable(T, static, conditional, unreachable)


def brute_force_net_effects(table: CounterfactualTable, stratum: FullHistoryWithTreatment) -> float:
    """``E{y(z_t, 0...) | h} - E{y(0, 0...) | h}`` for one active stratum."""
    try:
        a = table.conditional[stratum]
        b = table.conditional[stratum.control]
    except KeyError as exc:
        raise errors.MissingConditionalMean(f"no conditional counterfactual mean for {exc.args[0]}") from None
    return a - b


def all_net_effects(table: CounterfactualTable) -> dict:
    """Brute-force net effect of every active stratum with an observed control."""
    out = {}
    for key in sorted(table.conditional):
        if key.zt > 0 and key.control in table.conditional:
            out[key] = brute_force_net_effects(table, key)
    return out


def class_net_effects(net: Mapping, assign) -> np.ndarray:
    """Unweighted mean of brute-force net effects within each class."""
    sums = np.zeros(assign.K)
    counts = np.zeros(assign.K)
    for key, v in net.items():
        k = assign.class_of(key) - 1
        sums[k] += v
        counts[k] += 1
    with np.errstate(invalid="ignore"):
        return sums / counts


@dataclass
class IdentityReport:
    name: str
    passed: bool
    max_violation: float
    worst: Optional[str]
    tol: float
    n_checked: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "max_violation": self.max_violation,
            "worst": self.worst,
            "tol": self.tol,
            "n_checked": self.n_checked,
        }


def _report(name, diffs: Sequence[tuple], tol: float) -> IdentityReport:
    worst, maxv = None, 0.0
    for label, d in diffs:
        d = abs(float(d))
        if not np.isfinite(d):
            d = np.inf
        if worst is None or d > maxv:
            worst, maxv = label, d
    return IdentityReport(name, bool(maxv <= tol), maxv, str(worst) if worst is not None else None, tol, len(diffs))


def verify_constraint(params, phi, rows, tol: float = 1e-10) -> IdentityReport:
    """Check ``theta(stratum) = sum_k phi_k c^(k)(stratum)`` on every row."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    diffs = []
    for row in rows:
        lhs = params.theta_at(row.stratum)
        rhs = sum(float(p) * float(c) for p, c in zip(phi, row.c))
        diffs.append((row.stratum, lhs - rhs))
    return _report("constraint", diffs, tol)


def _future_net(net: Mapping, cells, start, T) -> float:
    """``sum_{s>t} sum over active future strata of pr(stratum | start) * net``."""
    t = (len(start) + 1) // 2
    total = 0.0
    for s in range(t + 1, T + 1):
        length = 2 * s - 1
        for p in sorted({c[:length] for c, _ in cells if c[: len(start)] == start}):
            if p[-1] == 0:
                continue
            key = FullHistoryWithTreatment.from_tokens(p)
            if key not in net:
                raise errors.MissingConditionalMean(f"no net effect for future stratum {key}")
            total += _pr(cells, p, start) * net[key]
    return total


def verify_stratum_constraint(params, net: Mapping, props, tol: float = 1e-10) -> IdentityReport:
    """Check the stratum-level decomposition of every point effect.

    ``theta(h, z_t) = phi(h, z_t) + sum_{s>t}`` (future net effects weighted
    by the active minus control arm proportions).
    """
    cells = _cells(props)
    T = (len(cells[0][0]) + 1) // 2
    diffs = []
    for key in sorted(net):
        start = key.tokens
        ctrl = key.control.tokens
        rhs = net[key] + _future_net(net, cells, start, T) - _future_net(net, cells, ctrl, T)
        diffs.append((key, params.theta_at(key) - rhs))
    return _report("stratum_constraint", diffs, tol)


def _stratum_mean(means, cells, prefix) -> float:
    n = len(prefix)
    num = den = 0.0
    for c, w in cells:
        if c[:n] == prefix:
            num += w * means[c]
            den += w
    return num / den


def verify_mean_decomposition(means, net: Mapping, props, tol: float = 1e-10, table=None) -> IdentityReport:
    """Check ``mu(h, z_t) = E{y(0...)|h} + phi(h, z_t) + future net effects``.

    Runs over every observed treatment stratum, control levels included
    (their own net effect is zero).  ``net`` maps active strata to net
    effects; a class-level pattern can be supplied in the same form.
    """
    cells = _cells(props)
    T = (len(cells[0][0]) + 1) // 2
    table = table or enumerate_counterfactual_means(means, props)
    diffs = []
    for key in sorted(table.conditional):
        if key.control not in table.conditional:
            continue
        base = table.conditional[key.control]
        own = net.get(key, 0.0) if key.zt > 0 else 0.0
        rhs = base + own + _future_net(net, cells, key.tokens, T)
        diffs.append((key, _stratum_mean(means, cells, key.tokens) - rhs))
    return _report("mean_decomposition", diffs, tol)


def _regime_net_sum(net: Mapping, cells, z) -> float:
    """Net effects along the paths of static regime ``z``, weighted by path probability."""
    T = len(z)
    total = 0.0

    def rec(prefix, t, prob):
        nonlocal total
        if z[t - 1] > 0:
            key = FullHistoryWithTreatment.from_tokens(prefix + (z[t - 1],))
            total += prob * net[key]
        if t == T:
            return
        start = prefix + (z[t - 1],)
        for x in _levels(cells, len(start)):
            p = _pr(cells, start + (x,), start)
            if p:
                rec(start + (x,), t + 1, prob * p)

    rec((), 1, 1.0)
    return total


def verify_regime_expansion(table: CounterfactualTable, net: Mapping, props, tol: float = 1e-10) -> IdentityReport:
    """``E{y(z)} - E{y(0)}`` equals the path-weighted sum of net effects."""
    cells = _cells(props)
    zero = (0,) * table.T
    if zero not in table.static:
        raise errors.MissingConditionalMean("the all-control regime is not reachable")
    diffs = []
    for z, v in sorted(table.static.items()):
        diffs.append((z, (v - table.static[zero]) - _regime_net_sum(net, cells, z)))
    return _report("regime_expansion", diffs, tol)


def verify_net_effect_pattern(net: Mapping, assign, phi, tol: float = 1e-10) -> IdentityReport:
    """Every active stratum of class ``k`` has net effect ``phi_k``."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    diffs = [(key, v - phi[assign.class_of(key) - 1]) for key, v in sorted(net.items())]
    return _report("net_effect_pattern", diffs, tol)


def markov_weighted(values: Mapping, props, key: MarkovWithTreatment):
    """Average full-history values over histories ending in ``(z_{t-1}, x_{t-1})``.

    Weights are ``pr(h | z_{t-1}, x_{t-1})`` recomputed from raw cells.
    """
    cells = _cells(props)
    t = key.t
    hists = sorted({c[: 2 * (t - 1)] for c, _ in cells if key.history.matches(c)})
    total = sum(_weight(cells, h) for h in hists)
    acc = 0.0
    for h in hists:
        acc = acc + values[FullHistoryWithTreatment.from_tokens(h + (key.zt,))] * (_weight(cells, h) / total)
    return acc
