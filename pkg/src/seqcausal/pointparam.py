"""Point parametrization of the outcome means.

Two directions are provided:

* estimation -- point effects of treatments and covariates estimated as
  differences of stratum mean outcomes, with normal-theory variances;
* synthesis -- the exact maps between cell means ``mu(z_1^T, x_1^{T-1})``
  and the point parameters (treatment effects ``theta``, covariate effects
  ``gamma`` and the grand mean).

The synthesis maps take a :class:`~seqcausal.panel.Proportions` oracle and
use only cells of positive weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import errors
from .keys import (
    Cell,
    CovariateKey,
    FullCell,
    FullHistory,
    FullHistoryWithTreatment,
    Markov,
    MarkovWithTreatment,
    parse_key,
)
from .panel import PanelData, Proportions, as_proportions, stratum_mean_outcome, treatment_strata

__all__ = [
    "ThetaEstimate",
    "PointParams",
    "StandardMeans",
    "point_effect_treatment",
    "markov_point_effect",
    "point_effect_covariate",
    "grand_mean",
    "estimate_point_effects",
    "theta_covariance",
    "layered_means",
    "reconstruct_standard_mean",
    "reconstruct_standard_means",
    "extract_point_params",
    "markov_average",
]


@dataclass(frozen=True)
class ThetaEstimate:
    """Estimated point effect with its normal-theory variance.

    ``stratum`` is the active stratum (a treatment key, or a
    :class:`CovariateKey` for covariate point effects).
    """

    value: float
    variance: float
    stratum: object
    n_active: int
    n_control: int
    sigma2: float

    @property
    def control_variance(self) -> float:
        return self.sigma2 / self.n_control


def _check_sigma2(sigma2: float):
    if not (sigma2 > 0 and np.isfinite(sigma2)):
        raise errors.ValidationError(f"sigma2 must be positive and finite, got {sigma2}")


def _contrast(panel: PanelData, active, control, sigma2: float) -> ThetaEstimate:
    _check_sigma2(sigma2)
    try:
        m1, n1 = stratum_mean_outcome(panel, active)
    except errors.EmptyStratum:
        raise errors.EmptyActiveStratum(f"no units in active stratum {active}") from None
    try:
        m0, n0 = stratum_mean_outcome(panel, control)
    except errors.EmptyStratum:
        raise errors.EmptyControlStratum(
            f"no units in control stratum {control} (positivity fails for {active})"
        ) from None
    return ThetaEstimate(m1 - m0, sigma2 / n1 + sigma2 / n0, active, n1, n0, sigma2)


def _as_history(t: int, history) -> tuple[tuple, tuple]:
    if history is None:
        history = ((), ())
    z, x = history
    return tuple(int(v) for v in z), tuple(tuple(int(c) for c in v) for v in x)


def point_effect_treatment(
    panel: PanelData, t: int, history, z_t: int, sigma2: float
) -> ThetaEstimate:
    """Point effect of ``z_t > 0`` on the full-history stratum ``history``.

    ``history`` is ``(z_1^{t-1}, x_1^{t-1})``; use ``((), ())`` at ``t = 1``.
    """
    if z_t <= 0:
        raise errors.ValidationError("point effects are defined for active levels z_t > 0")
    z, x = _as_history(t, history)
    key = FullHistoryWithTreatment(t, z, x, int(z_t))
    return _contrast(panel, key, key.control, sigma2)


def markov_point_effect(
    panel: PanelData, t: int, last, z_t: int, sigma2: float
) -> ThetaEstimate:
    """Point effect of ``z_t > 0`` on the collapsed stratum ``(z_{t-1}, x_{t-1})``.

    ``last`` is ``(z_{t-1}, x_{t-1})``, or ``None`` at ``t = 1``.
    """
    if z_t <= 0:
        raise errors.ValidationError("point effects are defined for active levels z_t > 0")
    if t == 1:
        key = MarkovWithTreatment(1, None, None, int(z_t))
    else:
        zp, xp = last
        key = MarkovWithTreatment(t, int(zp), tuple(int(v) for v in xp), int(z_t))
    return _contrast(panel, key, key.control, sigma2)


def point_effect_covariate(
    panel: PanelData, t: int, prefix, x_t, sigma2: float
) -> ThetaEstimate:
    """Point effect of covariate value ``x_t`` (nonzero) on ``(z_1^t, x_1^{t-1})``."""
    z, x = prefix
    xt = tuple(int(v) for v in np.atleast_1d(x_t))
    if not any(xt):
        raise errors.ValidationError("covariate point effects are defined for nonzero x_t")
    key = CovariateKey(t, tuple(int(v) for v in z), tuple(tuple(v) for v in x), xt)
    return _contrast(panel, key, key.reference, sigma2)


def grand_mean(panel: PanelData) -> float:
    return float(panel.outcome.mean())


def estimate_point_effects(
    panel: PanelData, mode: str, sigma2: float
) -> tuple[list[ThetaEstimate], list]:
    """All estimable treatment point effects, plus strata failing positivity.

    Returns ``(estimates, excluded)`` where ``excluded`` lists active strata
    whose control arm is empty.
    """
    estimates, excluded = [], []
    for key in treatment_strata(panel, mode):
        try:
            estimates.append(_contrast(panel, key, key.control, sigma2))
        except errors.EmptyControlStratum:
            excluded.append(key)
    return estimates, excluded


def theta_covariance(estimates: Sequence[ThetaEstimate]) -> np.ndarray:
    """Covariance of point-effect estimates.

    Two estimates sharing a control stratum (different active levels of the
    same treatment) covary by ``sigma2 / n_control``; all others are
    independent.
    """
    n = len(estimates)
    cov = np.diag([e.variance for e in estimates]).astype(float)
    controls = [e.stratum.control if hasattr(e.stratum, "control") else None for e in estimates]
    for i in range(n):
        for j in range(i + 1, n):
            if controls[i] is not None and controls[i] == controls[j]:
                cov[i, j] = cov[j, i] = estimates[i].control_variance
    return cov


# --------------------------------------------------------------------------
# synthesis direction


@dataclass
class PointParams:
    """The point parameters: ``theta``, ``gamma`` and the grand mean.

    Reference levels are not stored; :meth:`theta_at` and :meth:`gamma_at`
    return 0 for them.
    """

    theta: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    grand_mean: float = 0.0

    @classmethod
    def zeros(cls, props, grand_mean: float = 0.0) -> "PointParams":
        """Null parametrization: every non-reference point effect set to 0."""
        props = as_proportions(props)
        flat = StandardMeans({c: float(grand_mean) for c in props.cells})
        return extract_point_params(flat, props)

    def theta_at(self, key: FullHistoryWithTreatment) -> float:
        if key.zt == 0:
            return 0.0
        try:
            return self.theta[key]
        except KeyError:
            raise errors.MissingPointParam(f"no treatment point effect for {key}") from None

    def gamma_at(self, key: CovariateKey) -> float:
        if not any(key.xt):
            return 0.0
        try:
            return self.gamma[key]
        except KeyError:
            raise errors.MissingPointParam(f"no covariate point effect for {key}") from None

    def max_abs_diff(self, other: "PointParams") -> float:
        if set(self.theta) != set(other.theta) or set(self.gamma) != set(other.gamma):
            return float("inf")
        d = [abs(self.grand_mean - other.grand_mean)]
        d += [abs(v - other.theta[k]) for k, v in self.theta.items()]
        d += [abs(v - other.gamma[k]) for k, v in self.gamma.items()]
        return max(d)

    def to_dict(self) -> dict:
        return {
            "theta": {str(k): float(v) for k, v in sorted(self.theta.items())},
            "gamma": {str(k): float(v) for k, v in sorted(self.gamma.items())},
            "grand_mean": float(self.grand_mean),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PointParams":
        theta = {parse_key(k): float(v) for k, v in d.get("theta", {}).items()}
        gamma = {parse_key(k): float(v) for k, v in d.get("gamma", {}).items()}
        if not all(isinstance(k, FullHistoryWithTreatment) for k in theta):
            raise errors.ValidationError("theta keys must be full-history treatment strata")
        if not all(isinstance(k, CovariateKey) for k in gamma):
            raise errors.ValidationError("gamma keys must be covariate strata")
        return cls(theta, gamma, float(d.get("grand_mean", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PointParams":
        return cls.from_dict(json.loads(text))


@dataclass
class StandardMeans:
    """Cell means ``mu(z_1^T, x_1^{T-1})`` keyed by cell token tuples."""

    mu: dict = field(default_factory=dict)

    def __getitem__(self, cell) -> float:
        try:
            return self.mu[tuple(cell)]
        except KeyError:
            raise errors.MissingCellMean(f"no mean for cell {FullCell.from_tokens(cell)}") from None

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self.mu

    def __len__(self) -> int:
        return len(self.mu)

    @classmethod
    def from_panel(cls, panel: PanelData) -> "StandardMeans":
        """Saturated estimate: the observed mean outcome in every occupied cell."""
        return cls(dict(panel.cell_means))

    def to_dict(self) -> dict:
        return {"mu": {str(FullCell.from_tokens(c)): float(v) for c, v in sorted(self.mu.items())}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StandardMeans":
        mu = {}
        for k, v in d["mu"].items():
            key = parse_key(k)
            if not isinstance(key, FullCell):
                raise errors.ValidationError(f"{k!r} is not a full-cell key")
            mu[key.tokens] = float(v)
        return cls(mu)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StandardMeans":
        return cls.from_dict(json.loads(text))


def layered_means(means: StandardMeans, props) -> dict[tuple, float]:
    """Mean outcome of every occupied prefix stratum.

    Averages cell means with weights ``pr(cell | prefix)``; covers both
    ``mu(z_1^t, x_1^{t-1})`` and ``mu(z_1^t, x_1^t)`` layers and the grand
    mean under the empty prefix.
    """
    props = as_proportions(props)
    sums: dict[tuple, float] = {}
    for c in props.cells:
        wm = props.cell_weight(c) * means[c]
        for i in range(len(c) + 1):
            sums[c[:i]] = sums.get(c[:i], 0.0) + wm
    out = {p: s / props.weight(p) for p, s in sums.items()}
    for c in props.cells:
        out[c] = float(means[c])  # exact, avoids w * mu / w rounding
    return out


def reconstruct_standard_mean(params: PointParams, props, cell) -> float:
    """Cell mean from point parameters by direct summation.

    For every treatment time the term is ``theta(h, z_t)`` minus its
    proportion-weighted average over the levels observed in ``h``; covariate
    times contribute the analogous ``gamma`` terms; the grand mean closes
    the sum.
    """
    props = as_proportions(props)
    cell = tuple(cell)
    T = props.T
    if len(cell) != 2 * T - 1:
        raise errors.ValidationError(f"cell {cell!r} does not have horizon T={T}")
    total = 0.0
    for t in range(1, T + 1):
        h = cell[: 2 * (t - 1)]
        hist = FullHistory.from_tokens(h)
        avg = 0.0
        for z_star, p in props.next_distribution(h):
            avg += params.theta_at(hist.with_treatment(z_star)) * p
        total += params.theta_at(hist.with_treatment(cell[2 * (t - 1)])) - avg
    for t in range(1, T):
        p_ = cell[: 2 * t - 1]
        z, x = p_[0::2], p_[1::2]
        avg = 0.0
        for x_star, p in props.next_distribution(p_):
            avg += params.gamma_at(CovariateKey(t, z, x, x_star)) * p
        total += params.gamma_at(CovariateKey(t, z, x, cell[2 * t - 1])) - avg
    return total + params.grand_mean


def reconstruct_standard_means(params: PointParams, props) -> StandardMeans:
    props = as_proportions(props)
    return StandardMeans({c: reconstruct_standard_mean(params, props, c) for c in props.cells})


def extract_point_params(means: StandardMeans, props) -> PointParams:
    """Point parameters of a table of cell means.

    Treatment effects are differences of ``mu(z_1^t, x_1^{t-1})`` against the
    reference level, covariate effects differences of ``mu(z_1^t, x_1^t)``
    against the zero vector, and the grand mean is the overall average.
    """
    props = as_proportions(props)
    mu = layered_means(means, props)
    theta, gamma = {}, {}
    for p in sorted(mu):
        if not p:
            continue
        last = p[-1]
        if isinstance(last, tuple):
            ref = p[:-1] + ((0,) * len(last),)
            if not any(last):
                continue
            t = len(p) // 2
            key = CovariateKey(t, p[:-1][0::2], p[:-1][1::2], last)
            if ref not in mu:
                raise errors.EmptyControlStratum(f"reference covariate stratum missing for {key}")
            gamma[key] = mu[p] - mu[ref]
        else:
            if last == 0:
                continue
            ref = p[:-1] + (0,)
            key = FullHistoryWithTreatment.from_tokens(p)
            if ref not in mu:
                raise errors.EmptyControlStratum(f"control stratum missing for {key}")
            theta[key] = mu[p] - mu[ref]
    return PointParams(theta, gamma, mu[()])


def markov_average(values: Mapping, props, key: MarkovWithTreatment) -> float:
    """Collapse full-history quantities onto a Markov stratum.

    Averages ``values[h + z_t]`` over histories ``h`` ending in
    ``(z_{t-1}, x_{t-1})``, weighted by ``pr(h | z_{t-1}, x_{t-1})``.
    ``values`` maps :class:`FullHistoryWithTreatment` keys to numbers (or
    numpy arrays).
    """
    props = as_proportions(props)
    m = key.history
    hists = [h for h in props.prefixes(2 * (key.t - 1)) if m.matches(h)]
    total = sum(props.weight(h) for h in hists)
    if total <= 0:
        raise errors.MissingProportion(f"Markov stratum {m} is empty")
    acc = 0.0
    for h in hists:
        fk = FullHistory.from_tokens(h).with_treatment(key.zt)
        if fk not in values:
            raise errors.MissingPointParam(f"no full-history value for {fk}")
        acc = acc + values[fk] * (props.weight(h) / total)
    return acc
