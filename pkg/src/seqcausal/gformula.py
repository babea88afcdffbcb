"""Treatment regimes, the G-formula and sequential causal effects.

Counterfactual means are evaluated by exact enumeration of covariate paths
in canonical (sorted) order, so floating-point results are reproducible.
Regime paths that were never observed raise instead of extrapolating.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import errors
from .keys import FullHistory, FullHistoryWithTreatment, prefix_variables
from .panel import as_proportions

__all__ = [
    "Regime",
    "SceEstimate",
    "validate_regime",
    "evaluate_gformula",
    "q_coefficients",
    "sce_from_net_effects",
    "sce_from_gformula",
]

_HIST_VAR = re.compile(r"^(z(\d+)|x(\d+)_\d+)$")


@dataclass(frozen=True)
class Regime:
    """A static or dynamic treatment regime.

    A dynamic regime holds, for each time, an ordered tuple of cases
    ``(when, z)`` where ``when`` is a tuple of ``(variable, value)`` history
    conditions; the first case whose conditions all hold decides ``z_t``.
    A case with no conditions always applies.
    """

    kind: str
    z: tuple = ()
    decisions: tuple = ()

    @classmethod
    def static(cls, z: Sequence[int]) -> "Regime":
        z = tuple(int(v) for v in z)
        if not z or any(v < 0 for v in z):
            raise errors.ValidationError("static regime needs non-negative levels")
        return cls("static", z=z)

    @classmethod
    def dynamic(cls, decisions: Sequence[Sequence[tuple[Mapping, int]]]) -> "Regime":
        out = []
        for t, cases in enumerate(decisions, start=1):
            norm = []
            for when, z in cases:
                for name in when:
                    m = _HIST_VAR.match(name)
                    if not m:
                        raise errors.ValidationError(f"unknown regime variable {name!r}")
                    s = int(m.group(2) or m.group(3))
                    if s >= t:
                        raise errors.ValidationError(
                            f"decision at t={t} cannot depend on {name} (not yet observed)"
                        )
                norm.append((tuple(sorted((k, int(v)) for k, v in when.items())), int(z)))
            if not norm:
                raise errors.ValidationError(f"no decision for t={t}")
            out.append(tuple(norm))
        if not out:
            raise errors.ValidationError("dynamic regime needs at least one decision")
        return cls("dynamic", decisions=tuple(out))

    @property
    def T(self) -> int:
        return len(self.z) if self.kind == "static" else len(self.decisions)

    def decide(self, t: int, history) -> int:
        """Treatment level at time ``t`` given history tokens ``(z_1, x_1, ...)``."""
        if self.kind == "static":
            return self.z[t - 1]
        env = prefix_variables(history)
        for when, z in self.decisions[t - 1]:
            if all(env.get(k) == v for k, v in when):
                return z
        raise errors.UnresolvedHistory(
            f"regime has no decision at t={t} for history {FullHistory.from_tokens(history)}"
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "Regime":
        kind = d.get("kind")
        if kind == "static":
            if set(d) - {"kind", "z"}:
                raise errors.ValidationError(f"unknown regime keys: {sorted(set(d) - {'kind', 'z'})}")
            return cls.static(d["z"])
        if kind == "dynamic":
            if set(d) - {"kind", "decisions"}:
                raise errors.ValidationError("unknown keys in dynamic regime")
            by_t = {}
            for dec in d["decisions"]:
                if set(dec) - {"t", "z", "cases"} or ("z" in dec) == ("cases" in dec):
                    raise errors.ValidationError(f"malformed decision {dec!r}")
                t = int(dec["t"])
                if t in by_t:
                    raise errors.ValidationError(f"duplicate decision for t={t}")
                if "z" in dec:
                    by_t[t] = [({}, dec["z"])]
                else:
                    cases = []
                    for c in dec["cases"]:
                        if set(c) - {"when", "z"} or "z" not in c:
                            raise errors.ValidationError(f"malformed case {c!r}")
                        cases.append((c.get("when", {}), c["z"]))
                    by_t[t] = cases
            if sorted(by_t) != list(range(1, len(by_t) + 1)):
                raise errors.ValidationError("decisions must cover t = 1..T")
            return cls.dynamic([by_t[t] for t in sorted(by_t)])
        raise errors.ValidationError(f"regime kind must be 'static' or 'dynamic', got {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "static":
            return {"kind": "static", "z": list(self.z)}
        decs = []
        for t, cases in enumerate(self.decisions, start=1):
            if len(cases) == 1 and not cases[0][0]:
                decs.append({"t": t, "z": cases[0][1]})
            else:
                decs.append({"t": t, "cases": [{"when": dict(w), "z": z} for w, z in cases]})
        return {"kind": "dynamic", "decisions": decs}

    @classmethod
    def from_json(cls, text: str) -> "Regime":
        return cls.from_dict(json.loads(text))

    def __str__(self):
        if self.kind == "static":
            return "static(" + ",".join(map(str, self.z)) + ")"
        return "dynamic" + json.dumps(self.to_dict()["decisions"], separators=(",", ":"))


def _walk(props, regime: Regime, visit):
    """Enumerate regime paths; call ``visit(t, history, z_t, prob)`` at each step."""
    T = props.T
    if regime.T != T:
        raise errors.DimensionMismatch(f"regime has horizon {regime.T}, data has T={T}")

    def rec(prefix, t, prob):
        zt = regime.decide(t, prefix)
        visit(t, prefix, zt, prob)
        if t == T:
            return
        p = prefix + (zt,)
        if props.weight(p) <= 0:
            raise errors.MissingTransitionProportion(
                f"stratum {FullHistory.from_tokens(prefix).with_treatment(zt)} reached by "
                f"{regime} was never observed"
            )
        for x, q in props.next_distribution(p):
            rec(p + (x,), t + 1, prob * q)

    rec((), 1, 1.0)


def validate_regime(regime: Regime, props) -> None:
    """Check the regime resolves on every history it reaches in the data."""
    _walk(as_proportions(props), regime, lambda *a: None)


def evaluate_gformula(means, props, regime: Regime) -> float:
    """``E{y(regime)}``: cell means averaged over covariate-path probabilities."""
    props = as_proportions(props)
    terms = []

    def visit(t, prefix, zt, prob):
        if t == props.T:
            cell = prefix + (zt,)
            if cell not in means:
                raise errors.UnreachableCellMean(
                    f"no mean for cell reached by {regime}: {FullHistory.from_tokens(prefix)}"
                    f"|zt={zt}"
                )
            terms.append(prob * means[cell])

    _walk(props, regime, visit)
    return float(sum(terms))


def q_coefficients(panel, assign, regime: Regime) -> np.ndarray:
    """Expected number of class-``k`` active treatments under ``regime``.

    Non-integer for dynamic regimes whose decisions depend on covariates.
    """
    props = as_proportions(panel)
    q = np.zeros(assign.K)

    def visit(t, prefix, zt, prob):
        if zt > 0:
            key = FullHistory.from_tokens(prefix).with_treatment(zt)
            q[assign.class_of(key) - 1] += prob

    _walk(props, regime, visit)
    return q


@dataclass(frozen=True)
class SceEstimate:
    value: float
    variance: float
    q_a: np.ndarray
    q_b: np.ndarray
    phi_ref: object

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.variance))


def sce_from_net_effects(phi, q_a, q_b) -> SceEstimate:
    """``sum_k phi_k (q_a - q_b)_k`` with its delta-method variance (q fixed)."""
    q_a = np.asarray(q_a, dtype=float)
    q_b = np.asarray(q_b, dtype=float)
    K = len(phi.phi)
    if q_a.shape != (K,) or q_b.shape != (K,):
        raise errors.DimensionMismatch(f"q vectors must have length K={K}")
    d = q_a - q_b
    value = float(phi.phi @ d)
    var = float(d @ phi.covariance @ d)
    return SceEstimate(value, max(var, 0.0), q_a, q_b, phi)


def sce_from_gformula(means, props, a: Regime, b: Regime) -> float:
    """Sequential causal effect evaluated directly from cell means."""
    props = as_proportions(props)
    return evaluate_gformula(means, props, a) - evaluate_gformula(means, props, b)
