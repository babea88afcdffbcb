"""Net-effect patterns, constraint coefficients and GLS estimation.

A pattern groups active-treatment strata into ``K`` classes sharing one net
effect each.  Point effects are then linear in the net-effect vector,
``theta = sum_k phi_k c^(k)``, and ``phi`` is estimated by generalized least
squares of the estimated point effects on the coefficient rows.

Pattern rules
-------------
A rule is ``{"match": {...}, "class": k}``.  ``match`` maps variable names to
an integer (or a list of accepted integers):

``t``
    treatment time of the stratum
``z``
    the active level ``z_t``
``z{s}``, ``x{s}_{j}``
    history literals (treatment at time ``s``, component ``j`` of ``x_s``)
``zprev``, ``xprev_{j}``
    the last treatment/covariate before ``z_t`` (``s = t - 1``)

Rules are tried in order and the first match wins.  Markov strata only carry
``(z_{t-1}, x_{t-1})``; a rule that needs older history raises
:class:`~seqcausal.errors.PatternNotMarkov` when applied to one.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.stats

from . import errors
from .keys import FullHistoryWithTreatment, MarkovWithTreatment
from .panel import as_proportions, treatment_strata
from .pointparam import ThetaEstimate, estimate_point_effects, theta_covariance

__all__ = [
    "Rule",
    "PatternSpec",
    "ClassAssignment",
    "CoeffRow",
    "NetEffectEstimate",
    "GoodnessOfFit",
    "assign_classes",
    "constraint_coefficients",
    "markov_constraint_coefficients",
    "coefficient_rows",
    "estimate_net_effects",
    "fitted_residual_test",
    "estimate_pattern",
]

RANK_TOL = 1e-9

_VAR = re.compile(r"^(t|z|zprev|xprev_\d+|z\d+|x\d+_\d+)$")


@dataclass(frozen=True)
class Rule:
    match: tuple  # sorted (name, accepted values) pairs
    klass: int

    @classmethod
    def make(cls, match: Mapping, klass: int) -> "Rule":
        items = []
        for name, val in match.items():
            if not _VAR.match(name):
                raise errors.ValidationError(f"unknown pattern variable {name!r}")
            vals = tuple(val) if isinstance(val, (list, tuple)) else (val,)
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
                raise errors.ValidationError(f"rule value for {name!r} must be integer(s)")
            items.append((name, vals))
        # "t" first so time mismatches short-circuit before history lookups
        items.sort(key=lambda kv: (kv[0] != "t", kv[0]))
        return cls(tuple(items), int(klass))

    def matches(self, key) -> bool:
        env = key.variables()
        for name, vals in self.match:
            if name not in env:
                if isinstance(key, MarkovWithTreatment):
                    raise errors.PatternNotMarkov(
                        f"rule variable {name!r} is not available on Markov stratum {key}"
                    )
                raise errors.ValidationError(f"rule variable {name!r} is undefined on {key}")
            if env[name] not in vals:
                return False
        return True

    def to_dict(self) -> dict:
        m = {k: (list(v) if len(v) > 1 else v[0]) for k, v in self.match}
        return {"match": m, "class": self.klass}


@dataclass(frozen=True)
class PatternSpec:
    """Ordered class rules over active-treatment strata.

    ``mode`` records which strata the pattern is stated on (``"full"`` or
    ``"markov"``) and is the default estimation mode.
    """

    K: int
    rules: tuple[Rule, ...]
    mode: str = "full"
    shortcut: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.K < 1:
            raise errors.ValidationError("K must be a positive integer")
        if self.mode not in ("full", "markov"):
            raise errors.ValidationError(f"mode must be 'full' or 'markov', got {self.mode!r}")
        for r in self.rules:
            if not 1 <= r.klass <= self.K:
                raise errors.ValidationError(f"rule class {r.klass} outside 1..{self.K}")

    @classmethod
    def single_class(cls, mode: str = "full") -> "PatternSpec":
        """Every active treatment has the same net effect."""
        return cls(1, (Rule.make({}, 1),), mode, "single_class")

    @classmethod
    def per_time(cls, T: int, mode: str = "full") -> "PatternSpec":
        """One net effect per treatment time."""
        return cls(T, tuple(Rule.make({"t": t}, t) for t in range(1, T + 1)), mode, "per_time")

    def classify(self, key) -> int:
        if key.zt <= 0:
            raise ValueError("only active strata (z_t > 0) belong to a class")
        for rule in self.rules:
            if rule.matches(key):
                return rule.klass
        raise errors.UncoveredStratum(f"no pattern rule covers stratum {key}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PatternSpec":
        extra = set(d) - {"K", "mode", "rules", "shortcut", "T"}
        if extra:
            raise errors.ValidationError(f"unknown pattern keys: {sorted(extra)}")
        mode = d.get("mode", "full")
        shortcut = d.get("shortcut", "custom")
        if shortcut == "single_class":
            return cls.single_class(mode)
        if shortcut == "per_time":
            if "T" not in d:
                raise errors.ValidationError("per_time shortcut needs T")
            return cls.per_time(int(d["T"]), mode)
        if shortcut != "custom":
            raise errors.ValidationError(f"unknown pattern shortcut {shortcut!r}")
        if "K" not in d or "rules" not in d:
            raise errors.ValidationError("custom pattern needs K and rules")
        rules = []
        for r in d["rules"]:
            extra = set(r) - {"match", "class"}
            if extra or "class" not in r:
                raise errors.ValidationError(f"malformed pattern rule {r!r}")
            rules.append(Rule.make(r.get("match", {}), r["class"]))
        return cls(int(d["K"]), tuple(rules), mode)

    def to_dict(self) -> dict:
        return {"K": self.K, "mode": self.mode, "rules": [r.to_dict() for r in self.rules]}

    @classmethod
    def from_json(cls, text: str) -> "PatternSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ClassAssignment:
    spec: PatternSpec
    mode: str
    classes: Mapping  # active stratum key -> class index (1-based)
    members: tuple  # per-class tuples of keys

    @property
    def K(self) -> int:
        return self.spec.K

    def class_of(self, key) -> int:
        """Class of an active stratum; unobserved strata are classified by the rules."""
        if self.mode == "markov" and isinstance(key, FullHistoryWithTreatment):
            key = MarkovWithTreatment.of_cell(key.tokens, key.t)
        k = self.classes.get(key)
        return k if k is not None else self.spec.classify(key)


def assign_classes(spec: PatternSpec, panel, mode: Optional[str] = None) -> ClassAssignment:
    """Map every observed active-treatment stratum to its class."""
    mode = mode or spec.mode
    classes = {}
    for key in treatment_strata(panel, mode):
        classes[key] = spec.classify(key)
    members = tuple(
        tuple(k for k in sorted(classes) if classes[k] == j) for j in range(1, spec.K + 1)
    )
    for j, m in enumerate(members, start=1):
        if not m:
            raise errors.EmptyClass(f"class {j} has no observed active stratum")
    return ClassAssignment(spec, mode, classes, members)


@dataclass(frozen=True)
class CoeffRow:
    stratum: object
    c: np.ndarray
    n_active: int
    n_control: int


def _future_sum(props, assign, prefix_match, t: int, key_at) -> np.ndarray:
    acc = np.zeros(assign.K)
    total = 0
    for cell in props.cells:
        if not prefix_match(cell):
            continue
        w = props.cell_weight(cell)
        total += w
        for s in range(t + 1, props.T + 1):
            if cell[2 * (s - 1)] > 0:
                acc[assign.class_of(key_at(cell, s)) - 1] += w
    return acc / total


def _row(props, assign, stratum, t, key_at) -> CoeffRow:
    n1 = props.count(stratum)
    n0 = props.count(stratum.control)
    if n0 <= 0:
        raise errors.EmptyControlStratum(f"control stratum of {stratum} is empty")
    if n1 <= 0:
        raise errors.EmptyActiveStratum(f"active stratum {stratum} is empty")
    c = np.zeros(assign.K)
    c[assign.class_of(stratum) - 1] = 1.0
    if t < props.T:
        c += _future_sum(props, assign, stratum.matches, t, key_at) - _future_sum(
            props, assign, stratum.control.matches, t, key_at
        )
    return CoeffRow(stratum, c, n1, n0)


def _full_key_at(cell, s):
    return FullHistoryWithTreatment.from_tokens(cell[: 2 * s - 1])


def constraint_coefficients(panel, assign: ClassAssignment, stratum) -> CoeffRow:
    """Coefficients ``c^(k)`` of a full-history active stratum.

    ``c^(k)`` is the class-``k`` indicator of the stratum plus, for every
    later time, the difference in proportions of class-``k`` active
    treatments between the active and the control arm.
    """
    return _row(as_proportions(panel), assign, stratum, stratum.t, _full_key_at)


def markov_constraint_coefficients(panel, assign: ClassAssignment, stratum) -> CoeffRow:
    """Coefficients ``c^(k)`` of a collapsed ``(z_{t-1}, x_{t-1}, z_t)`` stratum."""
    if assign.mode != "markov":
        raise errors.PatternNotMarkov("class assignment is keyed on full histories")
    return _row(as_proportions(panel), assign, stratum, stratum.t, MarkovWithTreatment.of_cell)


def coefficient_rows(panel, assign: ClassAssignment, strata) -> list[CoeffRow]:
    fn = markov_constraint_coefficients if assign.mode == "markov" else constraint_coefficients
    return [fn(panel, assign, s) for s in strata]


@dataclass
class NetEffectEstimate:
    phi: np.ndarray
    covariance: np.ndarray
    strata: list
    theta: np.ndarray
    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    rss: float
    dof: int
    dropped: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.phi)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def residual_report(self) -> list[dict]:
        return [
            {"stratum": str(s), "observed": float(o), "fitted": float(f)}
            for s, o, f in zip(self.strata, self.theta, self.fitted)
        ]


def estimate_net_effects(
    rows: Sequence[tuple[ThetaEstimate, CoeffRow]], theta_cov=None
) -> NetEffectEstimate:
    """GLS of estimated point effects on their coefficient rows.

    ``phi = (C' W C)^-1 C' W theta`` with ``W`` the inverse covariance of
    the point-effect estimates; ``cov(phi) = (C' W C)^-1``.  When
    ``theta_cov`` is omitted it is built from the estimates (shared control
    arms covary).  Rows with an all-zero coefficient vector are dropped.
    """
    rows = list(rows)
    if not rows:
        raise errors.TooFewRows("no point-effect rows to regress")
    K = len(rows[0][1].c)
    if theta_cov is None:
        theta_cov = theta_covariance([e for e, _ in rows])
    theta_cov = np.asarray(theta_cov, dtype=float)
    if theta_cov.shape != (len(rows), len(rows)):
        raise errors.DimensionMismatch("theta covariance does not match the number of rows")

    keep = [i for i, (_, r) in enumerate(rows) if np.any(r.c != 0)]
    dropped = [rows[i][0].stratum for i in range(len(rows)) if i not in set(keep)]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} row(s) with all-zero coefficients", stacklevel=2)
    if len(keep) < K:
        raise errors.TooFewRows(f"{len(keep)} usable rows for {K} net effects")
    theta = np.array([rows[i][0].value for i in keep], dtype=float)
    C = np.array([rows[i][1].c for i in keep], dtype=float).reshape(len(keep), K)
    S = theta_cov[np.ix_(keep, keep)]
    if not (np.isfinite(S).all() and np.isfinite(C).all() and np.isfinite(theta).all()):
        raise errors.SingularWeightMatrix("non-finite entries in the regression inputs")
    try:
        L = scipy.linalg.cholesky(S, lower=True)
    except np.linalg.LinAlgError:
        raise errors.SingularWeightMatrix("point-effect covariance is not positive definite") from None

    A = scipy.linalg.solve_triangular(L, C, lower=True)
    b = scipy.linalg.solve_triangular(L, theta, lower=True)
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size < K or d[0] == 0 or np.any(d < RANK_TOL * d[0]):
        raise errors.RankDeficientDesign(
            f"coefficient matrix has rank {int(np.sum(d > RANK_TOL * (d[0] or 1)))} < K={K}"
        )
    phi = np.empty(K)
    phi[piv] = scipy.linalg.solve_triangular(R, Q.T @ b)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(K))
    cov = np.empty((K, K))
    cov[np.ix_(piv, piv)] = Rinv @ Rinv.T
    cov = (cov + cov.T) / 2

    fitted = C @ phi
    rw = b - A @ phi
    return NetEffectEstimate(
        phi=phi,
        covariance=cov,
        strata=[rows[i][0].stratum for i in keep],
        theta=theta,
        coefficients=C,
        fitted=fitted,
        residuals=theta - fitted,
        rss=float(rw @ rw),
        dof=len(keep) - K,
        dropped=dropped,
    )


@dataclass(frozen=True)
class GoodnessOfFit:
    rss: float
    dof: int
    p_value: float


def fitted_residual_test(estimate: NetEffectEstimate) -> GoodnessOfFit:
    """Chi-square check of the pattern: weighted RSS on ``rows - K`` dof."""
    if estimate.dof <= 0:
        raise errors.ZeroDof("saturated pattern: the pattern assumption is not testable")
    return GoodnessOfFit(
        estimate.rss, estimate.dof, float(scipy.stats.chi2.sf(estimate.rss, estimate.dof))
    )


@dataclass
class PatternFit:
    """Everything :func:`estimate_pattern` computed along the way."""

    estimate: NetEffectEstimate
    assignment: ClassAssignment
    theta: list
    rows: list
    excluded: list
    sigma2: float


def estimate_pattern(
    panel, pattern: PatternSpec, mode: Optional[str] = None, sigma2: Optional[float] = None
) -> PatternFit:
    """Run the estimation chain: classes, point effects, coefficients, GLS.

    With ``sigma2`` omitted the pooled within-cell variance is used.
    Strata whose control arm is empty are excluded and reported.
    """
    mode = mode or pattern.mode
    if sigma2 is None:
        sigma2 = panel.pooled_variance()
    assign = assign_classes(pattern, panel, mode)
    estimates, excluded = estimate_point_effects(panel, mode, sigma2)
    rows = coefficient_rows(panel, assign, [e.stratum for e in estimates])
    est = estimate_net_effects(list(zip(estimates, rows)))
    return PatternFit(est, assign, estimates, rows, excluded, sigma2)
