"""Synthetic designs with a known net-effect pattern, and coverage studies.

A :class:`DesignSpec` gives the conditional law of ``z_1, x_1, ..., z_T``
as ordered probability rules.  Probabilities are kept as exact fractions
(``"4/7"`` in JSON, or decimal literals), so in exact-integer mode every
cell frequency ``N * pr(cell)`` is checked for integrality without
rounding error.

Cell means are built to satisfy a pattern: point effects are set to
``sum_k phi_k c^(k)`` from the design's own proportions, covariate point
effects and the grand mean are free, and the means follow by direct
reconstruction.  Outcomes are then ``Normal(mu(cell), sigma^2)``.

Replicate ``r`` draws from a Philox stream keyed by ``(base_seed, r)``, so
results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.stats

from . import errors
from .keys import CovariateKey, FullHistoryWithTreatment, interleave, prefix_variables
from .netfx import (
    PatternSpec,
    assign_classes,
    coefficient_rows,
    constraint_coefficients,
    estimate_net_effects,
)
from .panel import PanelData, Proportions, Skeleton, as_proportions, treatment_strata
from .pointparam import (
    PointParams,
    StandardMeans,
    _contrast,
    reconstruct_standard_means,
)

log = logging.getLogger(__name__)

__all__ = [
    "ProbRule",
    "DesignSpec",
    "GammaRule",
    "SimConfig",
    "ScenarioResult",
    "CoverageReport",
    "synthesize_design",
    "synthesize_point_params",
    "synthesize_standard_means",
    "generate_outcomes",
    "replicate_rng",
    "run_replicates",
    "confidence_interval",
    "reference_design",
    "reference_config",
    "random_design",
]

SUM_TOL = 1e-12
INT_TOL = 1e-9
NOISELESS_SLACK = 1e-10

_DESIGN_VAR = re.compile(r"^(?:z(\d+)|x(\d+)_\d+)$")


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, bool):
        raise errors.ConfigError(f"invalid probability {v!r}")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(repr(v))
    if isinstance(v, str):
        try:
            return Fraction(v.strip())
        except ValueError:
            raise errors.ConfigError(f"invalid probability {v!r}") from None
    raise errors.ConfigError(f"invalid probability {v!r}")


def _matches(env: Mapping, given) -> bool:
    return all(env.get(k) == v for k, v in given)


@dataclass(frozen=True)
class ProbRule:
    """``pr(variable at time t = level | history matching given)``."""

    t: int
    given: tuple  # sorted (name, value) pairs
    p: tuple  # Fractions, one per level

    @classmethod
    def make(cls, t: int, given: Mapping, p: Sequence, var: str) -> "ProbRule":
        probs = tuple(_frac(v) for v in p)
        if not probs or any(v < 0 for v in probs):
            raise errors.ProbabilitySumError(f"{var}{t}: probabilities must be non-negative")
        if abs(float(sum(probs)) - 1.0) > SUM_TOL:
            raise errors.ProbabilitySumError(
                f"{var}{t} given {dict(given)}: probabilities sum to {float(sum(probs))}"
            )
        limit = t if var == "z" else t + 1  # x_t may condition on z_t
        for name in given:
            m = _DESIGN_VAR.match(name)
            if not m:
                raise errors.ConfigError(f"unknown design variable {name!r}")
            s = int(m.group(1) or m.group(2))
            is_z = m.group(1) is not None
            if s > t or (s == t and not (is_z and var == "x")) or s >= limit:
                raise errors.ConfigError(f"{var}{t} cannot condition on later variable {name}")
        return cls(int(t), tuple(sorted((k, int(v)) for k, v in given.items())), probs)


@dataclass(frozen=True)
class DesignSpec:
    """Conditional law of treatments and covariates plus the sample size.

    ``covariate_levels[t-1]`` lists the atomic values of ``x_t`` in the order
    the covariate rules' probability vectors use.  Rules for each variable
    are tried in order; the first whose ``given`` literals match applies.
    """

    T: int
    n_units: int
    treatment_rules: tuple
    covariate_rules: tuple
    covariate_levels: tuple
    frequency_mode: str = "exact"

    def __post_init__(self):
        if self.T < 1 or self.n_units < 1:
            raise errors.ConfigError("design needs T >= 1 and n_units >= 1")
        if self.frequency_mode not in ("exact", "multinomial"):
            raise errors.ConfigError(f"unknown frequency mode {self.frequency_mode!r}")
        if len(self.covariate_levels) != self.T - 1:
            raise errors.ConfigError("covariate_levels needs one entry per time 1..T-1")
        for r in self.treatment_rules:
            if not 1 <= r.t <= self.T:
                raise errors.ConfigError(f"treatment rule for t={r.t} outside 1..T")
        for r in self.covariate_rules:
            if not 1 <= r.t < self.T:
                raise errors.ConfigError(f"covariate rule for t={r.t} outside 1..T-1")
            if len(r.p) != len(self.covariate_levels[r.t - 1]):
                raise errors.ConfigError(f"covariate rule for t={r.t} has wrong number of levels")

    def treatment_dist(self, t: int, history) -> tuple:
        env = prefix_variables(history)
        for r in self.treatment_rules:
            if r.t == t and _matches(env, r.given):
                return r.p
        raise errors.ConfigError(f"no treatment rule for t={t} at history {history!r}")

    def covariate_dist(self, t: int, prefix) -> list:
        env = prefix_variables(prefix)
        for r in self.covariate_rules:
            if r.t == t and _matches(env, r.given):
                return list(zip(self.covariate_levels[t - 1], r.p))
        raise errors.ConfigError(f"no covariate rule for t={t} at history {prefix!r}")

    def cell_probabilities(self) -> dict:
        """Exact probability of every cell with positive probability."""
        out = {}

        def rec(prefix, t, prob):
            for z, pz in enumerate(self.treatment_dist(t, prefix)):
                if pz == 0:
                    continue
                p = prefix + (z,)
                if t == self.T:
                    out[p] = prob * pz
                    continue
                for x, px in self.covariate_dist(t, p):
                    if px:
                        rec(p + (x,), t + 1, prob * pz * px)

        rec((), 1, Fraction(1))
        return out

    def cell_frequencies(self) -> dict:
        """Integer frequency per cell in exact mode."""
        out = {}
        for cell, p in self.cell_probabilities().items():
            f = self.n_units * p
            n = round(f)
            if abs(f - n) > INT_TOL:
                raise errors.NonIntegerFrequency(
                    f"cell {cell!r} has frequency {float(f):.6g} with N={self.n_units}"
                )
            if n:
                out[cell] = int(n)
        return out

    def minimal_exact_units(self) -> int:
        """Smallest N giving integer frequencies for every cell."""
        return math.lcm(*(p.denominator for p in self.cell_probabilities().values()))

    def with_units(self, n_units: int) -> "DesignSpec":
        return DesignSpec(
            self.T, n_units, self.treatment_rules, self.covariate_rules,
            self.covariate_levels, self.frequency_mode,
        )

    def is_markov(self) -> bool:
        """Whether every treatment rule conditions on ``(z_{t-1}, x_{t-1})`` at most."""
        for r in self.treatment_rules:
            for name, _ in r.given:
                m = _DESIGN_VAR.match(name)
                if int(m.group(1) or m.group(2)) < r.t - 1:
                    return False
        return True

    @classmethod
    def from_dict(cls, d: Mapping) -> "DesignSpec":
        known = {"T", "n_units", "frequency_mode", "treatment", "covariate", "covariate_levels"}
        extra = set(d) - known
        if extra:
            raise errors.ConfigError(f"unknown design keys: {sorted(extra)}")
        try:
            T = int(d["T"])
            n = int(d["n_units"])
        except KeyError as exc:
            raise errors.ConfigError(f"design is missing {exc}") from None
        levels_in = d.get("covariate_levels", {})
        levels = []
        for t in range(1, T):
            raw = levels_in.get(str(t), [[0], [1]])
            levels.append(tuple(tuple(int(c) for c in v) for v in raw))

        def rules(items, var):
            out = []
            for r in items:
                if set(r) - {"t", "given", "p"}:
                    raise errors.ConfigError(f"malformed {var} rule {r!r}")
                out.append(ProbRule.make(int(r["t"]), r.get("given", {}), r["p"], var))
            return tuple(out)

        return cls(
            T, n, rules(d.get("treatment", []), "z"), rules(d.get("covariate", []), "x"),
            tuple(levels), d.get("frequency_mode", "exact"),
        )

    def to_dict(self) -> dict:
        def rule(r):
            out = {"t": r.t}
            if r.given:
                out["given"] = dict(r.given)
            out["p"] = [str(v) for v in r.p]
            return out

        return {
            "T": self.T,
            "n_units": self.n_units,
            "frequency_mode": self.frequency_mode,
            "covariate_levels": {
                str(t): [list(v) for v in lv] for t, lv in enumerate(self.covariate_levels, 1)
            },
            "treatment": [rule(r) for r in self.treatment_rules],
            "covariate": [rule(r) for r in self.covariate_rules],
        }


def synthesize_design(spec: DesignSpec, seed=None) -> tuple[Skeleton, Proportions]:
    """Build the treatment/covariate panel of a design.

    Exact mode lays out ``N * pr(cell)`` units per cell in canonical order,
    so the panel proportions equal the design probabilities.  Multinomial
    mode draws units independently (``seed`` required).
    """
    if spec.frequency_mode == "exact":
        freqs = spec.cell_frequencies()
        cells = [c for c in sorted(freqs) for _ in range(freqs[c])]
    else:
        if seed is None:
            raise errors.ConfigError("multinomial mode needs a seed")
        probs = spec.cell_probabilities()
        order = sorted(probs)
        p = np.array([float(probs[c]) for c in order])
        counts = np.random.default_rng(seed).multinomial(spec.n_units, p / p.sum())
        cells = [c for c, k in zip(order, counts) for _ in range(int(k))]
    if len(cells) != spec.n_units:
        raise errors.NonIntegerFrequency(f"frequencies sum to {len(cells)}, not N={spec.n_units}")
    T = spec.T
    z = np.array([c[0::2] for c in cells], dtype=np.int64).reshape(len(cells), T)
    covs = []
    for t in range(1, T):
        d = len(spec.covariate_levels[t - 1][0])
        covs.append(np.array([c[2 * t - 1] for c in cells], dtype=np.int64).reshape(len(cells), d))
    skel = Skeleton(z, tuple(covs))
    return skel, skel.proportions()


# --------------------------------------------------------------------------
# standard means


@dataclass(frozen=True)
class GammaRule:
    """Covariate point effect ``value`` for covariate strata matching ``match``.

    Match variables are those of :meth:`CovariateKey.variables`: ``t``,
    ``z`` (current treatment), ``x_{j}`` (current covariate component) and
    history literals ``z{s}``, ``x{s}_{j}``.
    """

    match: tuple
    value: float

    @classmethod
    def make(cls, match: Mapping, value) -> "GammaRule":
        return cls(tuple(sorted((k, int(v)) for k, v in match.items())), float(value))


def _gamma_value(rules: Sequence[GammaRule], key: CovariateKey) -> float:
    env = key.variables()
    for r in rules:
        if _matches(env, r.match):
            return r.value
    return 0.0


def synthesize_point_params(
    props, pattern: PatternSpec, phi, gamma_spec=(), grand_mean: float = 0.0
) -> PointParams:
    """Point parameters whose net effects follow ``pattern`` with values ``phi``."""
    props = as_proportions(props)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.shape != (pattern.K,):
        raise errors.DimensionMismatch(f"phi has {phi.size} entries, pattern has K={pattern.K}")
    assign = assign_classes(pattern, props, "full")
    theta = {}
    for key in treatment_strata(props, "full"):
        theta[key] = float(phi @ constraint_coefficients(props, assign, key).c)
    gamma = {}
    for t in range(1, props.T):
        for p in props.prefixes(2 * t):
            if any(p[-1]):
                key = CovariateKey(t, p[:-1][0::2], p[:-1][1::2], p[-1])
                gamma[key] = _gamma_value(gamma_spec, key)
    return PointParams(theta, gamma, float(grand_mean))


def synthesize_standard_means(
    props, pattern: PatternSpec, phi, gamma_spec=(), grand_mean: float = 0.0
) -> StandardMeans:
    """Cell means encoding the net-effect pattern ``phi`` on a design."""
    props = as_proportions(props)
    params = synthesize_point_params(props, pattern, phi, gamma_spec, grand_mean)
    return reconstruct_standard_means(params, props)


def replicate_rng(base_seed: int, r: int) -> np.random.Generator:
    """Independent counter-based stream for replicate ``r``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(base_seed), int(r)))))


def generate_outcomes(skeleton: Skeleton, means: StandardMeans, sigma: float, seed) -> PanelData:
    """Draw ``y_i ~ Normal(mu(cell_i), sigma^2)``.

    ``seed`` is an int, a ``(base_seed, replicate)`` pair or a Generator.
    With ``sigma == 0`` every outcome equals its cell mean.
    """
    if sigma < 0:
        raise errors.ConfigError("sigma must be non-negative")
    mu = np.array([means[c] for c in skeleton.cells])[skeleton.cell_index]
    if sigma == 0:
        return PanelData(skeleton, mu)
    if isinstance(seed, np.random.Generator):
        rng = seed
    elif isinstance(seed, tuple):
        rng = replicate_rng(*seed)
    else:
        rng = replicate_rng(seed, 0)
    return PanelData(skeleton, mu + sigma * rng.standard_normal(skeleton.n_units))


def confidence_interval(estimate: float, variance: float, level: float) -> tuple[float, float]:
    """Normal-theory interval ``estimate +/- z_{(1+level)/2} * sqrt(variance)``."""
    if not 0 < level < 1:
        raise errors.InvalidLevel(f"confidence level must lie in (0, 1), got {level}")
    if variance < 0:
        raise errors.ValidationError("variance must be non-negative")
    half = scipy.stats.norm.ppf((1 + level) / 2) * math.sqrt(variance)
    return estimate - half, estimate + half


# --------------------------------------------------------------------------
# replicate experiments


@dataclass(frozen=True)
class SimConfig:
    design: DesignSpec
    pattern: PatternSpec
    phi: tuple  # scenarios, each a length-K tuple
    gamma: tuple = ()
    grand_mean: float = 0.0
    sigma: float = 1.0
    replicates: int = 2000
    ci_level: float = 0.95
    base_seed: int = 0
    estimation_mode: str = "markov"
    variance: str = "known"

    def __post_init__(self):
        if self.replicates < 1:
            raise errors.ConfigError("replicates must be >= 1")
        if not 0 < self.ci_level < 1:
            raise errors.InvalidLevel(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if self.sigma < 0:
            raise errors.ConfigError("sigma must be non-negative")
        if self.estimation_mode not in ("full", "markov"):
            raise errors.ConfigError(f"unknown estimation mode {self.estimation_mode!r}")
        if self.variance not in ("known", "estimated"):
            raise errors.ConfigError("variance must be 'known' or 'estimated'")
        for s in self.phi:
            if len(s) != self.pattern.K:
                raise errors.DimensionMismatch(f"scenario {s} does not have K={self.pattern.K}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        known = {
            "design", "pattern", "phi", "gamma", "grand_mean", "sigma", "replicates",
            "ci_level", "base_seed", "estimation_mode", "variance",
        }
        extra = set(d) - known
        if extra:
            raise errors.ConfigError(f"unknown config keys: {sorted(extra)}")
        if "design" not in d or "phi" not in d:
            raise errors.ConfigError("config needs 'design' and 'phi'")
        design = DesignSpec.from_dict(d["design"])
        pat = d.get("pattern", {"shortcut": "single_class", "mode": "markov"})
        pattern = PatternSpec.from_dict(pat)
        phi = tuple(
            tuple(float(v) for v in (s if isinstance(s, (list, tuple)) else [s])) for s in d["phi"]
        )
        gamma = tuple(GammaRule.make(g.get("match", {}), g["value"]) for g in d.get("gamma", []))
        return cls(
            design=design,
            pattern=pattern,
            phi=phi,
            gamma=gamma,
            grand_mean=float(d.get("grand_mean", 0.0)),
            sigma=float(d.get("sigma", 1.0)),
            replicates=int(d.get("replicates", 2000)),
            ci_level=float(d.get("ci_level", 0.95)),
            base_seed=int(d.get("base_seed", 0)),
            estimation_mode=d.get("estimation_mode", pattern.mode),
            variance=d.get("variance", "known"),
        )

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "pattern": self.pattern.to_dict(),
            "phi": [list(s) for s in self.phi],
            "gamma": [{"match": dict(g.match), "value": g.value} for g in self.gamma],
            "grand_mean": self.grand_mean,
            "sigma": self.sigma,
            "replicates": self.replicates,
            "ci_level": self.ci_level,
            "base_seed": self.base_seed,
            "estimation_mode": self.estimation_mode,
            "variance": self.variance,
        }

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class ScenarioResult:
    phi: list
    mean_phi_hat: list
    empirical_variance: list
    mean_reported_variance: list
    coverage: list
    replicates: int
    failures: int
    ci_level: float
    records: Optional[list] = None

    def to_dict(self, with_records: bool = False) -> dict:
        d = asdict(self)
        if not with_records:
            d.pop("records")
        return d


@dataclass
class CoverageReport:
    scenarios: list
    config_digest: str
    estimation_mode: str

    def to_dict(self, with_records: bool = False) -> dict:
        return {
            "config_digest": self.config_digest,
            "estimation_mode": self.estimation_mode,
            "scenarios": [s.to_dict(with_records) for s in self.scenarios],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([
            "scenario", "component", "phi", "mean_phi_hat", "empirical_variance",
            "mean_reported_variance", "coverage", "replicates", "failures", "ci_level",
        ])
        for i, s in enumerate(self.scenarios):
            for k in range(len(s.phi)):
                w.writerow([
                    i, k + 1, repr(s.phi[k]), repr(s.mean_phi_hat[k]),
                    repr(s.empirical_variance[k]), repr(s.mean_reported_variance[k]),
                    repr(s.coverage[k]), s.replicates, s.failures, s.ci_level,
                ])
        return buf.getvalue()

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "replicate", "component", "phi_hat", "variance", "lo", "hi", "covered"])
        for i, s in enumerate(self.scenarios):
            for rec in s.records or []:
                if rec.get("error"):
                    w.writerow([i, rec["replicate"], "", "", "", "", "", rec["error"]])
                    continue
                for k in range(len(s.phi)):
                    w.writerow([
                        i, rec["replicate"], k + 1, repr(rec["phi_hat"][k]),
                        repr(rec["variance"][k]), repr(rec["lo"][k]), repr(rec["hi"][k]),
                        int(rec["covered"][k]),
                    ])
        return buf.getvalue()


class _Plan:
    """Everything fixed across replicates of one configuration."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.skeleton, self.props = synthesize_design(config.design, seed=config.base_seed)
        mode = config.estimation_mode
        self.assign = assign_classes(config.pattern, self.props, mode)
        strata = []
        for key in treatment_strata(self.props, mode):
            if self.props.count(key.control) > 0:
                strata.append(key)
        self.strata = strata
        self.rows = coefficient_rows(self.props, self.assign, strata)
        self.means = [
            synthesize_standard_means(self.props, config.pattern, phi, config.gamma, config.grand_mean)
            for phi in config.phi
        ]

    def replicate(self, scenario: int, r: int) -> dict:
        cfg = self.config
        panel = generate_outcomes(self.skeleton, self.means[scenario], cfg.sigma, (cfg.base_seed, r))
        try:
            sigma2 = cfg.sigma ** 2 if cfg.variance == "known" else panel.pooled_variance()
            if sigma2 <= 0:
                # noiseless runs: any positive variance gives the same point estimate
                sigma2 = 1.0
            est = [_contrast(panel, k, k.control, sigma2) for k in self.strata]
            fit = estimate_net_effects(list(zip(est, self.rows)))
        except errors.SeqCausalError as exc:
            return {"replicate": r, "error": type(exc).__name__}
        phi = fit.phi
        var = np.diag(fit.covariance) if cfg.sigma > 0 else np.zeros(len(phi))
        truth = np.asarray(cfg.phi[scenario])
        half = scipy.stats.norm.ppf((1 + cfg.ci_level) / 2) * np.sqrt(var)
        if cfg.sigma == 0:
            # degenerate interval: allow for rounding in the noiseless solve
            half = half + NOISELESS_SLACK * np.maximum(1.0, np.abs(phi))
        lo, hi = phi - half, phi + half
        return {
            "replicate": r,
            "phi_hat": [float(v) for v in phi],
            "variance": [float(v) for v in var],
            "lo": [float(v) for v in lo],
            "hi": [float(v) for v in hi],
            "covered": [bool(a <= p <= b) for a, p, b in zip(lo, truth, hi)],
        }


_worker_plan: Optional[_Plan] = None


def _init_worker(config_dict: dict):
    global _worker_plan
    _worker_plan = _Plan(SimConfig.from_dict(config_dict))


def _run_chunk(args) -> list:
    scenario, reps = args
    return [_worker_plan.replicate(scenario, r) for r in reps]


def _aggregate(config: SimConfig, scenario: int, records: list, keep: bool) -> ScenarioResult:
    ok = [r for r in records if "error" not in r]
    K = config.pattern.K
    if ok:
        phi_hat = np.array([r["phi_hat"] for r in ok])
        var = np.array([r["variance"] for r in ok])
        cov = np.array([r["covered"] for r in ok], dtype=float)
        mean = phi_hat.mean(axis=0)
        emp = phi_hat.var(axis=0, ddof=1) if len(ok) > 1 else np.zeros(K)
        rep = var.mean(axis=0)
        coverage = cov.mean(axis=0)
    else:
        mean = emp = rep = coverage = np.full(K, np.nan)
    return ScenarioResult(
        phi=list(config.phi[scenario]),
        mean_phi_hat=[float(v) for v in mean],
        empirical_variance=[float(v) for v in emp],
        mean_reported_variance=[float(v) for v in rep],
        coverage=[float(v) for v in coverage],
        replicates=len(records),
        failures=len(records) - len(ok),
        ci_level=config.ci_level,
        records=records if keep else None,
    )


def run_replicates(config: SimConfig, jobs: int = 1, keep_records: bool = False) -> CoverageReport:
    """Monte-Carlo study: estimate ``phi`` on every replicate, record CI coverage.

    Replicate ``r`` uses the stream ``(base_seed, r)`` in every scenario.
    Records are aggregated in replicate order, so the report is identical
    for any ``jobs``.
    """
    n = config.replicates
    scenarios = range(len(config.phi))
    if jobs <= 1:
        plan = _Plan(config)
        per = [[plan.replicate(s, r) for r in range(n)] for s in scenarios]
    else:
        size = max(1, -(-n // (4 * jobs)))
        chunks = [(s, range(i, min(i + size, n))) for s in scenarios for i in range(0, n, size)]
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker, initargs=(config.to_dict(),)
        ) as pool:
            results = list(pool.map(_run_chunk, chunks))
        per = [[] for _ in scenarios]
        for (s, _), recs in zip(chunks, results):
            per[s].extend(recs)
    for s, recs in zip(scenarios, per):
        failures = sum("error" in r for r in recs)
        if failures:
            log.warning("scenario %d: %d of %d replicates failed", s, failures, n)
    return CoverageReport(
        [_aggregate(config, s, per[s], keep_records) for s in scenarios],
        config.digest(),
        config.estimation_mode,
    )


# --------------------------------------------------------------------------
# reference design


def reference_design(n_units: int = 1232) -> DesignSpec:
    """Binary ``T = 3`` design with integer frequencies at ``N = 1232``.

    ``x_1`` responds to ``z_1`` and drives ``z_2``; ``x_2`` responds to
    ``z_2`` and drives ``z_3``; ``z_3`` depends on ``(z_2, x_2)`` only.
    Any multiple of 1232 also gives integer frequencies.
    """
    def bern(p):
        p = Fraction(p)
        return [1 - p, p]

    z = [
        ProbRule.make(1, {}, bern("4/7"), "z"),
        ProbRule.make(2, {"z1": 0, "x1_1": 0}, bern("3/7"), "z"),
        ProbRule.make(2, {"z1": 0, "x1_1": 1}, bern("1/3"), "z"),
        ProbRule.make(2, {"z1": 1, "x1_1": 0}, bern("1/2"), "z"),
        ProbRule.make(2, {"z1": 1, "x1_1": 1}, bern("4/7"), "z"),
        ProbRule.make(3, {"z2": 0, "x2_1": 0}, bern("1/4"), "z"),
        ProbRule.make(3, {"z2": 0, "x2_1": 1}, bern("1/2"), "z"),
        ProbRule.make(3, {"z2": 1, "x2_1": 0}, bern("1/2"), "z"),
        ProbRule.make(3, {"z2": 1, "x2_1": 1}, bern("3/4"), "z"),
    ]
    x = [
        ProbRule.make(1, {"z1": 0}, bern("4/11"), "x"),
        ProbRule.make(1, {"z1": 1}, bern("7/11"), "x"),
        ProbRule.make(2, {"z2": 0, "x1_1": 0}, bern("1/4"), "x"),
        ProbRule.make(2, {"z2": 0, "x1_1": 1}, bern("1/2"), "x"),
        ProbRule.make(2, {"z2": 1, "x1_1": 0}, bern("3/4"), "x"),
        ProbRule.make(2, {"z2": 1, "x1_1": 1}, bern("1/2"), "x"),
    ]
    binary = ((0,), (1,))
    return DesignSpec(3, n_units, tuple(z), tuple(x), (binary, binary))


def reference_config(
    phi=(-10.0, 10.0, 0.0), replicates: int = 2000, base_seed: int = 20150601, **kwargs
) -> SimConfig:
    """Single-class coverage study on :func:`reference_design`, Markov estimation."""
    design = kwargs.pop("design", None) or reference_design(kwargs.pop("n_units", 1232))
    gamma = kwargs.pop(
        "gamma",
        (
            GammaRule.make({"t": 1}, 1.5),
            GammaRule.make({"t": 2, "z": 1}, -2.0),
            GammaRule.make({"t": 2}, 0.5),
        ),
    )
    return SimConfig(
        design=design,
        pattern=PatternSpec.single_class("markov"),
        phi=tuple((float(v),) for v in phi),
        gamma=gamma,
        grand_mean=kwargs.pop("grand_mean", 5.0),
        replicates=replicates,
        base_seed=base_seed,
        **kwargs,
    )


def random_design(
    T: int,
    rng: np.random.Generator,
    markov: bool = True,
    arity: int = 2,
    copies: int = 1,
) -> DesignSpec:
    """Random exact-integer design with every cell occupied.

    Conditional probabilities are drawn from quarters, or sixths for
    three-level variables, so integer frequencies exist.  With ``markov``
    each treatment depends on ``(z_{t-1}, x_{t-1})`` only; otherwise on the
    whole history.  Covariates always depend on the whole history.
    """
    if arity not in (2, 3):
        raise errors.ConfigError("random designs support arity 2 or 3")
    levels = tuple(tuple((v,) for v in range(arity)) for _ in range(T - 1))

    def draw():
        if arity == 2:
            k = int(rng.integers(1, 4))
            return [Fraction(4 - k, 4), Fraction(k, 4)]
        cut = sorted(int(v) for v in rng.choice(np.arange(1, 6), size=2, replace=False))
        return [Fraction(cut[0], 6), Fraction(cut[1] - cut[0], 6), Fraction(6 - cut[1], 6)]

    def histories(t, with_zt):
        # every (z_1..z_{t-1}, x_1..x_{t-1}[, z_t]) assignment as a given-dict
        names = []
        for s in range(1, t):
            names += [f"z{s}", f"x{s}_1"]
        if with_zt:
            names.append(f"z{t}")
        for vals in itertools.product(range(arity), repeat=len(names)):
            yield dict(zip(names, vals))

    z_rules, x_rules = [], []
    for t in range(1, T + 1):
        if t == 1:
            z_rules.append(ProbRule.make(1, {}, draw(), "z"))
        elif markov:
            for a, b in itertools.product(range(arity), repeat=2):
                z_rules.append(ProbRule.make(t, {f"z{t-1}": a, f"x{t-1}_1": b}, draw(), "z"))
        else:
            for g in histories(t, False):
                z_rules.append(ProbRule.make(t, g, draw(), "z"))
    for t in range(1, T):
        for g in histories(t, True):
            x_rules.append(ProbRule.make(t, g, draw(), "x"))
    spec = DesignSpec(T, 1, tuple(z_rules), tuple(x_rules), levels)
    return spec.with_units(spec.minimal_exact_units() * copies)
